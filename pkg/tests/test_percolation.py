from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.optimize import brentq

from poclab.errors import DomainError, TruncationError, UnsupportedError
from poclab.geometry import binary_tree, cone_level, time_box, z2_cone, z2_window, z_chain
from poclab.kernels import FunctionKernel
from poclab.models import ising_kernel, stavskaya_kernel
from poclab.percolation import (
    LITERATURE_PC_VALUES,
    BernoulliField,
    bottleneck,
    chain_crossing_space,
    crossing_levels,
    crossing_probability,
    default_stratum,
    disagreement_coupling,
    disagreement_reach,
    disagreement_run,
    doubling_schedule,
    estimate_pc_plus,
    oriented_cluster,
    path_property_violations,
    tree_crossing_exact,
    tree_crossing_space,
    wilson,
    z2_crossing_space,
)
from poclab.sampler import BoundaryCondition

import oracles

PLUS, MINUS = BoundaryCondition.plus(), BoundaryCondition.minus()


def test_cluster_trivial_cases():
    sp = z2_window(3, 3)
    assert oriented_cluster([], [(2, 2)], sp) == frozenset()
    everything = oriented_cluster(sp.labels, [(2, 2)], sp)
    assert everything == frozenset(sp.labels)
    assert oriented_cluster(sp.labels, [(1, 1)], sp) == {(0, 0), (0, 1), (1, 0), (1, 1)}


def test_cluster_staircase():
    sp = z2_window(3, 3)
    stair = [(2, 2), (2, 1), (1, 1), (1, 0), (0, 0)]
    assert oriented_cluster(stair + [(0, 2)], [(2, 2)], sp) == frozenset(stair)
    assert oriented_cluster(stair, [(0, 2)], sp) == frozenset()


def test_field_rates_and_validation():
    sp = z2_window(20, 20)
    fld = BernoulliField(sp, q=0.3)
    real = fld.realize(seed=1, replicas=50)
    frac = real.mean()
    assert abs(frac - 0.3) < 4 * math.sqrt(0.21 / real.size)
    assert fld.open_sites(1, 3) == frozenset(s for s, o in zip(sp.labels, real[3]) if o)
    with pytest.raises(DomainError):
        BernoulliField(sp)
    with pytest.raises(DomainError):
        BernoulliField(sp, q=1.5)


def test_bottleneck_matches_brute_force_cluster():
    sp = z2_cone(4, 5)
    start = default_stratum(sp)
    depth = 6
    levels = crossing_levels(sp, depth, 30, seed=3, start=start)
    u = BernoulliField(sp, q=0.5)
    for q in (0.4, 0.6, 0.75):
        fld = BernoulliField(sp, q=q)
        for r in range(30):
            open_ = fld.open_sites(3, r)
            reached = oriented_cluster(open_, start, sp)
            crosses = any(cone_level(s) == depth - 1 for s in reached)
            assert crosses == (levels[r] <= q)
    assert u.q == 0.5


def test_bottleneck_on_tiny_layers():
    from poclab.percolation import _layers

    sp = z_chain(3)
    lay = _layers(sp, [2], 3)
    costs = np.array([[0.1, 0.9, 0.3], [0.5, 0.2, 0.4]])
    assert np.allclose(bottleneck(costs, lay), [0.9, 0.5])


def test_crossing_trivial_and_truncation():
    sp = z2_cone(8, 15)
    assert crossing_probability(sp, 0.0, 16, 50).p == 0
    assert crossing_probability(sp, 1.0, 16, 50).p == 1
    with pytest.raises(TruncationError):
        crossing_probability(sp, 0.5, 17, 10)
    with pytest.raises(TruncationError):
        crossing_probability(z2_window(5, 5), 0.5, 6, 10, start=[(4, 4)])
    with pytest.raises(DomainError):
        crossing_probability(sp, 1.5, 4, 10)


def test_crossing_with_site_params():
    sp = z_chain(6)
    params = {i: 0.5 for i in sp.labels}
    est = crossing_probability(sp, params, 6, 4000, seed=2)
    assert abs(est.p - 0.5**6) < 4 * math.sqrt(0.5**6 / 4000)
    params[2] = 0.0
    assert crossing_probability(sp, params, 6, 100, seed=2).p == 0


def test_crossing_monotone_in_q_with_independent_seeds():
    build = z2_crossing_space(32)
    lo = crossing_probability(build(32), 0.55, 32, 400, seed=1)
    hi = crossing_probability(build(32), 0.75, 32, 400, seed=2)
    assert lo.high < hi.low


def test_wilson_matches_oracle():
    for k, n in [(0, 10), (3, 10), (50, 100), (100, 100)]:
        assert wilson(k, n) == pytest.approx(oracles.wilson_interval(k, n), abs=1e-9)


def test_chain_estimate_goes_to_one():
    est = estimate_pc_plus(chain_crossing_space, 64, 300, seed=4)
    assert est.low > 0.95
    # ½ crossing of q^L at L = 64
    assert est.per_depth[-1].point == pytest.approx(0.5 ** (1 / 64), abs=0.01)


def test_tree_bracket_matches_branching_recursion():
    roots, depth = 8, 12
    est = estimate_pc_plus(tree_crossing_space(roots), depth, 1500, seed=5, schedule=[depth])
    exact = brentq(lambda q: oracles.branching_survival(q, depth, roots) - 0.5, 0.01, 1)
    assert est.low - 0.01 <= exact <= est.high + 0.01
    assert abs(exact - 0.5) < 0.05
    assert tree_crossing_exact(0.7, depth, roots) == pytest.approx(oracles.branching_survival(0.7, depth, roots))
    assert len(binary_tree(2, 1)) == 7


def test_doubling_schedule_and_z2_drift():
    assert doubling_schedule(128) == [16, 32, 64, 128]
    assert doubling_schedule(8) == [8]
    est = estimate_pc_plus(z2_crossing_space(), 32, 200, seed=6)
    pts = [r.point for r in est.per_depth]
    assert pts == sorted(pts)  # finite-size drift upward
    assert 0.5 <= est.low <= est.high <= 0.8
    curve = est.per_depth[-1].curve([0.0, 0.5, 1.0])
    assert curve[0][1] == 0 and curve[-1][1] == 1
    assert 0.64 < LITERATURE_PC_VALUES["quoted Monte Carlo estimate"] < 0.65
    with pytest.raises(DomainError):
        estimate_pc_plus(z2_crossing_space(), 32, 10, tolerance=0)


def _cone_box(width, depth):
    sp = z2_cone(width, depth)
    return time_box(sp, [s for s in sp.labels if cone_level(s) < depth])


def test_disagreement_equal_boundaries_zero():
    box = _cone_box(6, 10)
    run = disagreement_run(stavskaya_kernel(0.7), box, PLUS, PLUS, 300, 1)
    assert not run.disagreement.any()


def test_disagreement_path_property_exact():
    box = _cone_box(6, 12)
    for k in (stavskaya_kernel(0.7), ising_kernel(0.5, 0.1)):
        run = disagreement_run(k, box, MINUS, PLUS, 400, 2)
        assert run.disagreement.any()
        assert path_property_violations(run, k) == 0
        assert np.array_equal(disagreement_reach(run, k), run.disagreement)


def test_disagreement_single_site_maximal_coupling():
    sp = z2_window(2, 2)
    box = time_box(sp, [(1, 1)])
    k = ising_kernel(0.5)
    n = 40_000
    run = disagreement_run(k, box, MINUS, PLUS, n, 3)
    p = run.disagreement.mean()
    assert abs(p - math.tanh(1)) < 3 * math.sqrt(p * (1 - p) / n)
    law = {0: (0.6, 0.3, 0.1), 2: (0.1, 0.3, 0.6)}
    three = FunctionKernel((0, 1, 2), lambda i: (i - 1,), lambda i, past: law.get(past[0], (0.2, 0.6, 0.2)), homogeneous=True)
    box = time_box(z_chain(2), [1])
    run = disagreement_run(three, box, {0: 0}, {0: 2}, n, 4)
    p = run.disagreement.mean()
    assert abs(p - 0.5) < 3 * math.sqrt(0.25 / n)


def test_disagreement_single_replica_and_explicit_boundaries():
    box = _cone_box(3, 4)
    eta = {s: 0 for s in box.space.labels if cone_level(s) == 4}
    run = disagreement_coupling(stavskaya_kernel(0.5), box, eta, dict(eta), 7)
    assert run.replicas == 1 and not run.disagreement.any()


def test_disagreement_requires_markov():
    sp = z2_window(4, 4)
    box = time_box(sp, [(2, 2)])
    k = FunctionKernel((0, 1), lambda s: ((s[0] - 2, s[1]),), lambda s, p: (0.5, 0.5))
    with pytest.raises(UnsupportedError):
        disagreement_run(k, box, PLUS, MINUS, 4, 0)
