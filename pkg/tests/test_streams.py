from __future__ import annotations

import numpy as np
import pytest

from poclab import streams


def test_chunked_reads_match_one_read():
    key = streams.master_key(42)
    whole = streams.uniforms(key, 17, streams.MAIN, 0, 103)
    parts = np.concatenate([streams.uniforms(key, 17, streams.MAIN, s, c) for s, c in streams.chunks(103, 10)])
    assert np.array_equal(whole, parts)


def test_streams_are_distinct_and_in_range():
    key = streams.master_key(1)
    a = streams.uniforms(key, 0, streams.MAIN, 0, 1000)
    b = streams.uniforms(key, 1, streams.MAIN, 0, 1000)
    c = streams.uniforms(key, 0, streams.FIELD, 0, 1000)
    d = streams.uniforms(streams.master_key(2), 0, streams.MAIN, 0, 1000)
    assert not np.array_equal(a, b) and not np.array_equal(a, c) and not np.array_equal(a, d)
    assert a.min() > 0 and a.max() <= 1


def test_alignment_and_seed_checks():
    key = streams.master_key(0)
    with pytest.raises(ValueError):
        streams.uniforms(key, 0, 0, 3, 5)
    with pytest.raises(ValueError):
        streams.master_key(-1)
    assert [c for _, c in streams.chunks(10, 6)] == [4, 4, 2]
