from __future__ import annotations

import itertools

import numpy as np
import pytest

from poclab.errors import (
    DomainError,
    EnumerationTooLarge,
    MissingBoundaryError,
    SingularityError,
    UnsupportedError,
)
from poclab.geometry import linear_extensions, time_box, z2_past, z2_window, z_chain
from poclab.kernels import (
    ENUMERATION_LIMIT,
    ColorSpace,
    FunctionKernel,
    TabularKernel,
    apply_box_kernel,
    box_probability,
    compose_box_distribution,
    eval_single_site,
    exact_box_distribution,
    exterior_footprint,
    gibbs_specification,
    kernel_to_json,
    properness_check,
)
from poclab.models import ising_kernel, stavskaya_kernel, voter_epsilon

import oracles

W = z2_window(4, 4)


def full_config(space, rng, colors):
    return {s: colors[rng.integers(len(colors))] for s in space.labels}


def test_colorspace():
    cs = ColorSpace((-1, 1))
    assert cs.index(1) == 1 and cs.minimum == -1 and cs.maximum == 1
    with pytest.raises(DomainError):
        cs.index(0)


def test_ising_single_site_values():
    k = ising_kernel(0.5, 0.0)
    past = {(1, 0): -1, (0, 1): -1}
    eps = voter_epsilon(0.5)
    assert eval_single_site(k, (1, 1), 1, past) == pytest.approx(eps, abs=1e-15)
    assert eval_single_site(k, (1, 1), 1, {(1, 0): 1, (0, 1): -1}) == pytest.approx(0.5, abs=1e-15)
    # frozen from the Boltzmann-weight oracle
    assert eps == pytest.approx(0.11920292202211755, abs=1e-15)
    assert oracles.ising_prob(0.5, 0.0, 1, -1, -1) == pytest.approx(eps, abs=1e-15)


def test_stavskaya_all_zero_past_forces_zero():
    k = stavskaya_kernel(0.7)
    assert eval_single_site(k, (1, 1), 1, {(1, 0): 0, (0, 1): 0}) == 0.0
    assert eval_single_site(k, (1, 1), 1, {(1, 0): 1, (0, 1): 0}) == pytest.approx(0.7)


def test_missing_footprint_is_named():
    k = ising_kernel(0.5)
    with pytest.raises(MissingBoundaryError) as exc:
        eval_single_site(k, (1, 1), 1, {(1, 0): 1})
    assert (0, 1) in exc.value.missing


def test_unknown_colour_rejected():
    with pytest.raises(DomainError):
        eval_single_site(ising_kernel(0.5), (1, 1), 0, {(1, 0): 1, (0, 1): 1})


@pytest.mark.parametrize("model", ["ising", "stavskaya"])
def test_exact_distribution_matches_oracle(model):
    rng = np.random.default_rng(1)
    if model == "ising":
        k, colors = ising_kernel(0.5, 0.2), (-1, 1)
        prob = lambda s, n, w: oracles.ising_prob(0.5, 0.2, s, n, w)  # noqa: E731
    else:
        k, colors = stavskaya_kernel(0.7), (0, 1)
        prob = lambda s, n, w: oracles.stavskaya_prob(0.7, s, n, w)  # noqa: E731
    sites = [(a, b) for a in (1, 2, 3) for b in (1, 2)]
    box = time_box(W, sites)
    eta = full_config(W, rng, colors)
    bd = {s: eta[s] for s in exterior_footprint(k, box)}
    dist = exact_box_distribution(k, box, bd)
    want = oracles.box_law(prob, colors, sites, eta)
    got = dist.as_dict()
    order = list(dist.sites)
    for key, p in want.items():
        cfg = dict(zip(sorted(sites), key))
        assert got[tuple(cfg[s] for s in order)] == pytest.approx(p, abs=1e-14)
    assert dist.total == pytest.approx(1.0, abs=1e-12)


def test_box_probability_agrees_with_enumeration_and_orders():
    k = ising_kernel(0.8, -0.3)
    rng = np.random.default_rng(3)
    sites = [(1, 1), (1, 2), (2, 1), (2, 2)]
    box = time_box(W, sites)
    eta = full_config(W, rng, (-1, 1))
    bd = {s: eta[s] for s in exterior_footprint(k, box)}
    dist = exact_box_distribution(k, box, bd)
    for vals in itertools.product((-1, 1), repeat=4):
        inter = dict(zip(box.order, vals))
        p = box_probability(k, box, inter, bd)
        assert p == pytest.approx(dist.prob(inter), abs=1e-15)
        for order in linear_extensions(W, box):
            assert abs(box_probability(k, box, inter, bd, order) - p) <= 1e-15


def test_box_probability_rejects_bad_order_and_extra_sites():
    k = ising_kernel(0.8)
    box = time_box(W, [(1, 1), (2, 1)])
    bd = {s: 1 for s in exterior_footprint(k, box)}
    inter = {(1, 1): 1, (2, 1): -1}
    with pytest.raises(DomainError):
        box_probability(k, box, inter, bd, order=[(2, 1), (1, 1)])
    with pytest.raises(DomainError):
        box_probability(k, box, {**inter, (3, 3): 1}, bd)
    with pytest.raises(MissingBoundaryError):
        box_probability(k, box, inter, {})


def test_log_space_product_for_long_boxes():
    ch = z_chain(101)
    k = FunctionKernel((0, 1), lambda i: (i - 1,), lambda i, past: (0.5, 0.5), homogeneous=True)
    box = time_box(ch, range(1, 101))
    p = box_probability(k, box, {i: 1 for i in range(1, 101)}, {0: 0})
    assert p == pytest.approx(0.5**100, rel=1e-12)


def test_compose_equals_exact_for_compatible_orders_only():
    k = ising_kernel(0.9, 0.1)
    box = time_box(W, [(1, 1), (1, 2), (2, 1), (2, 2)])
    bd = {s: 1 for s in exterior_footprint(k, box)}
    exact = exact_box_distribution(k, box, bd)
    for order in linear_extensions(W, box):
        for init in ({}, {s: 1 for s in box.order}):
            comp = compose_box_distribution(k, box, bd, order, init)
            assert np.max(np.abs(comp.probs - exact.probs)) < 1e-14
    bad = compose_box_distribution(k, box, bd, list(reversed(box.order)))
    assert np.max(np.abs(bad.probs - exact.probs)) > 1e-3


def test_consistency_nested_boxes():
    # Δ ⊂ Λ share the outer boundary: applying γ_Δ after γ_Λ changes nothing
    k = ising_kernel(0.7, 0.2)
    outer = time_box(W, [(a, b) for a in (1, 2) for b in (1, 2, 3)])
    bd = {s: -1 for s in exterior_footprint(k, outer)}
    dist = exact_box_distribution(k, outer, bd)
    for inner_sites in ([(2, 3)], [(1, 3), (2, 3)], [(2, 2), (2, 3)]):
        inner = time_box(W, inner_sites)
        again = apply_box_kernel(k, dist, inner, bd)
        assert np.max(np.abs(again.probs - dist.probs)) < 1e-14


def test_enumeration_guard():
    k = ising_kernel(0.5)
    sp = z2_window(6, 6)
    box = time_box(sp, [(a, b) for a in range(1, 6) for b in range(1, 6)])
    with pytest.raises(EnumerationTooLarge) as exc:
        exact_box_distribution(k, box, {s: 1 for s in exterior_footprint(k, box)})
    assert exc.value.size == 2**25 > ENUMERATION_LIMIT


def test_marginal_and_expectation():
    k = ising_kernel(0.5)
    box = time_box(W, [(1, 1)])
    dist = exact_box_distribution(k, box, {(1, 0): 1, (0, 1): 1})
    eps = voter_epsilon(0.5)
    assert dist.expect(lambda c: c[(1, 1)]) == pytest.approx(1 - 2 * eps)
    assert dist.marginal([(1, 1)]).total == pytest.approx(1.0)


def test_properness_check_flags_problems():
    sp = z2_window(3, 3)
    assert properness_check(ising_kernel(0.5), sp, trials=100).ok
    future_fp = FunctionKernel((0, 1), lambda s: ((s[0] + 1, s[1]),), lambda s, p: (0.5, 0.5))
    rep = properness_check(future_fp, sp, trials=50)
    assert not rep.ok and any("orientedness" in v for v in rep.violations)
    unnorm = FunctionKernel((0, 1), z2_past, lambda s, p: (0.5, 0.6))
    rep = properness_check(unnorm, sp, trials=20)
    assert any("normalisation" in v for v in rep.violations)


def test_gibbs_specification_single_site_oracle():
    beta, h = 0.6, 0.1
    k = ising_kernel(beta, h)
    sp = z2_window(4, 4)
    rng = np.random.default_rng(5)
    eta = full_config(sp, rng, (-1, 1))
    x = (1, 1)
    dist = gibbs_specification(k, sp, [x], eta)
    # oracle: γ_x(σ) γ_{x+e1}(η | σ) γ_{x+e2}(η | σ), normalised
    w = {}
    for s in (-1, 1):
        cfg = {**eta, x: s}
        w[s] = oracles.ising_prob(beta, h, s, cfg[(1, 0)], cfg[(0, 1)])
        for y in ((2, 1), (1, 2)):
            w[s] *= oracles.ising_prob(beta, h, cfg[y], cfg[(y[0], y[1] - 1)], cfg[(y[0] - 1, y[1])])
    z = sum(w.values())
    assert dist.prob({x: 1}) == pytest.approx(w[1] / z, abs=1e-14)


def test_gibbs_specification_errors():
    sp = z2_window(3, 3)
    k = stavskaya_kernel(1.0)
    # all-zero past forces 0, while the future reads 1 with a zero past: no admissible colour
    eta = {s: 0 for s in sp.labels}
    eta[(2, 1)] = 1
    eta[(0, 1)] = 0
    with pytest.raises(SingularityError):
        gibbs_specification(k, sp, [(1, 1)], eta)
    with pytest.raises(MissingBoundaryError):
        gibbs_specification(ising_kernel(0.5), sp, [(1, 1)], {})
    long_fp = FunctionKernel((0, 1), lambda s: ((s[0] - 2, s[1]),), lambda s, p: (0.5, 0.5))
    with pytest.raises(UnsupportedError):
        gibbs_specification(long_fp, sp, [(1, 1)], {s: 0 for s in sp.labels})


def test_tabular_kernel_and_json_export():
    sp = z2_window(3, 3)
    k = ising_kernel(0.4, 0.3)
    doc = kernel_to_json(k, sp)
    assert len(doc["table"]) == 4  # interior sites only
    tk = TabularKernel(
        k.colors,
        {(1, 1): ((1, 0), (0, 1))},
        {(1, 1): {(a, b): tuple(k.table((1, 1))[(a + 1) // 2, (b + 1) // 2]) for a in (-1, 1) for b in (-1, 1)}},
    )
    assert tk.distribution((1, 1), (1, -1)) == tuple(k.table((1, 1))[1, 0])
    with pytest.raises(DomainError):
        tk.footprint((2, 2))
