from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from poclab.criteria import (
    INCONCLUSIVE,
    UNIQUENESS,
    TestFunction,
    TruncationWarning,
    apply_site_kernel,
    closed_form_dust_rates,
    dobrushin_decision,
    dobrushin_gamma,
    dp_decision,
    dust_rate_matrix,
    dusting_audit,
    ising_alpha,
    ising_dobrushin_boundary,
    ising_dp_boundary,
    ising_gamma,
    ising_px,
    max_perc_params,
    oscillation,
    phase_scan,
    total_oscillation,
    uniformity_constant,
    variational_distance,
)
from poclab.errors import DomainError
from poclab.geometry import time_box, z2_window
from poclab.kernels import FunctionKernel, TabularKernel
from poclab.models import PcaSpec, constant_kernel, ising_kernel, pca_to_pomm, stavskaya_kernel, voter_epsilon

import oracles

O = (0, 0)

# frozen from the closed-form oracle evaluated once
GAMMA_2_005 = 1.0988488602949837
PX_2_005 = 0.9993158546789127


def test_variational_distance_examples():
    assert variational_distance([0.2, 0.8], [0.2, 0.8]) == 0
    assert variational_distance([1, 0], [0, 1]) == 1
    assert variational_distance([0.3, 0.7], [0.6, 0.4]) == pytest.approx(0.3)
    assert variational_distance({"a": 0.5, "b": 0.5}, {"a": 1.0, "b": 0.0}) == pytest.approx(0.5)
    with pytest.raises(DomainError):
        variational_distance([0.5, 0.5], [1, 0, 0])
    with pytest.raises(DomainError):
        variational_distance({"a": 1.0}, {"b": 1.0})


def test_stavskaya_rates():
    k = stavskaya_kernel(0.3)
    a = dust_rate_matrix(k, sites=[O])
    assert a[(O, (0, -1))] == pytest.approx(0.3) and a[(O, (-1, 0))] == pytest.approx(0.3)
    assert dobrushin_gamma(a) == pytest.approx(0.6)
    assert max_perc_params(k, sites=[O]).sup == pytest.approx(0.3)


def test_ising_rates_match_oracles():
    for beta, h in [(0.3, 0.0), (1.0, 0.4), (2.0, 0.05), (0.7, -1.5)]:
        k = ising_kernel(beta, h)
        a = dust_rate_matrix(k, sites=[O])
        prob = lambda s, n, w: oracles.ising_prob(beta, h, s, n, w)  # noqa: E731
        for j, x in enumerate(k.footprint(O)):
            assert a[(O, x)] == pytest.approx(oracles.alpha_single(prob, (-1, 1), 2, j), abs=1e-14)
            assert a[(O, x)] == pytest.approx(ising_alpha(beta, h), abs=1e-12)
        assert max_perc_params(k, sites=[O]).sup == pytest.approx(oracles.perc_param(prob, (-1, 1), 2), abs=1e-14)
    assert ising_gamma(2.0, 0.05) == pytest.approx(GAMMA_2_005, abs=1e-13)
    assert ising_px(2.0, 0.05) == pytest.approx(PX_2_005, abs=1e-13)


def test_three_colour_rates_match_oracle():
    rng = np.random.default_rng(4)
    tbl = oracles.random_table(rng, 3, 2)
    k = FunctionKernel((0, 1, 2), lambda s: ((s[0], s[1] - 1), (s[0] - 1, s[1])), lambda s, p: tbl[p], homogeneous=True)
    prob = lambda s, n, w: tbl[n, w, s]  # noqa: E731
    a = dust_rate_matrix(k, sites=[O])
    assert a[(O, (0, -1))] == pytest.approx(oracles.alpha_single(prob, (0, 1, 2), 2, 0), abs=1e-14)
    assert max_perc_params(k, sites=[O]).sup == pytest.approx(oracles.perc_param(prob, (0, 1, 2), 2), abs=1e-14)


def test_constant_kernel_zero():
    k = constant_kernel()
    assert dobrushin_gamma(dust_rate_matrix(k, sites=[O])) == 0
    assert max_perc_params(k, sites=[O]).sup == 0


def test_closed_form_matrix():
    k = ising_kernel(0.9, 0.2)
    cf = closed_form_dust_rates(k, O)
    en = dust_rate_matrix(k, sites=[O])
    assert cf.method == "closed-form" and en.method == "enumerated"
    for key in en.entries:
        assert cf[key] == pytest.approx(en[key], abs=1e-12)
    with pytest.raises(DomainError):
        closed_form_dust_rates(constant_kernel(), O)


def test_rates_invariants_on_window():
    sp = z2_window(4, 4)
    a = dust_rate_matrix(ising_kernel(0.5), sp)
    assert a.representative
    for (y, x), v in a.entries.items():
        assert v >= 0 and x != y and sp.less(x, y)


def test_heterogeneous_window_warns():
    spec = PcaSpec((0, 1, 2), {0: (0, 1), 1: (0, 1, 2), 2: (1, 2)}, lambda c, v: (0.5, 0.5), depth=2)
    space, k = pca_to_pomm(spec)
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("error")
        a = dust_rate_matrix(k, space)  # complete PCA window: nothing truncated
    assert all(v == 0 for v in a.entries.values())
    tk = TabularKernel((0, 1), {(1, 1): ((1, 0), (0, 1))}, {(1, 1): {(a, b): (0.5, 0.5) for a in (0, 1) for b in (0, 1)}})
    with pytest.warns(TruncationWarning):
        dust_rate_matrix(tk, z2_window(2, 2))


def test_dobrushin_examples():
    assert dobrushin_decision(dust_rate_matrix(stavskaya_kernel(0.4), sites=[O])).verdict == UNIQUENESS
    assert dobrushin_decision(dust_rate_matrix(stavskaya_kernel(0.5), sites=[O])).verdict == INCONCLUSIVE
    for beta in (0.1, 1.0, 3.0):
        g = dobrushin_gamma(dust_rate_matrix(ising_kernel(beta), sites=[O]))
        assert g == pytest.approx(math.tanh(2 * beta), abs=1e-12) and g < 1
    d = dobrushin_decision(GAMMA_2_005)
    assert d.verdict == INCONCLUSIVE and str(d).startswith("Dobrushin: inconclusive (Γ=1.09885")


def test_dp_decision_examples():
    px = max_perc_params(ising_kernel(0.25), sites=[O])
    assert px.sup == pytest.approx(math.tanh(0.5), abs=1e-12)
    assert dp_decision(px, 0.5).verdict == UNIQUENESS
    px = max_perc_params(ising_kernel(0.3), sites=[O])
    assert dp_decision(px, 0.5).verdict == INCONCLUSIVE
    assert dp_decision(px, 0.64450).verdict == UNIQUENESS
    assert dp_decision(0.6, 0.7).margin == pytest.approx(0.1)
    for bad in (0.0, -0.1, 1.2):
        with pytest.raises(DomainError):
            dp_decision(px, bad)


def test_boundaries():
    assert ising_dp_boundary(0.0) == pytest.approx(0.5 * math.atanh(0.5), abs=1e-12)
    assert ising_dobrushin_boundary(0.0) == math.inf
    b = ising_dobrushin_boundary(0.05)
    assert ising_gamma(b, 0.05) == pytest.approx(1.0, abs=1e-12)


def test_phase_scan_rows():
    rows = phase_scan([0.5, 2.0], [0.0, 0.05], pc_mc=0.64)
    by = {(r["beta"], r["h"]): r for r in rows}
    assert by[(0.5, 0.0)]["gamma"] == pytest.approx(math.tanh(1), abs=1e-12) and by[(0.5, 0.0)]["dobrushin_ok"]
    assert by[(2.0, 0.05)]["gamma"] == pytest.approx(GAMMA_2_005, abs=1e-12) and not by[(2.0, 0.05)]["dobrushin_ok"]


def test_oscillation_examples():
    cs = (0, 1)
    f = TestFunction.from_callable([(0, 0), (1, 0)], cs, lambda c: float(c[(0, 0)] == 1))
    assert oscillation(f, (0, 0)) == 1 and oscillation(f, (1, 0)) == 0 and oscillation(f, (5, 5)) == 0
    const = TestFunction.from_callable([(0, 0)], cs, lambda c: 3.0)
    assert total_oscillation(const) == 0
    with pytest.raises(DomainError):
        TestFunction([(0, 0)], f.colors, np.zeros((2, 2)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_total_oscillation_bounds_spread(seed):
    rng = np.random.default_rng(seed)
    f = TestFunction.random([(0, 0), (1, 0)], (0, 1, 2), rng)
    assert np.ptp(f.table) <= total_oscillation(f) + 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_variational_lemma_binary_equality(seed):
    rng = np.random.default_rng(seed)
    mu, nu = rng.dirichlet((1, 1)), rng.dirichlet((1, 1))
    f = rng.normal(size=2)
    lhs = abs(mu @ f - nu @ f)
    assert lhs == pytest.approx(np.ptp(f) * variational_distance(mu, nu), abs=1e-12)
    mu3, nu3, f3 = rng.dirichlet((1, 1, 1)), rng.dirichlet((1, 1, 1)), rng.normal(size=3)
    assert abs(mu3 @ f3 - nu3 @ f3) <= np.ptp(f3) * variational_distance(mu3, nu3) + 1e-12


def test_apply_site_kernel_independent_of_y():
    k = ising_kernel(0.5)
    f = TestFunction.from_callable([(3, 3)], (-1, 1), lambda c: c[(3, 3)])
    assert apply_site_kernel(k, f, (9, 9)) is f
    rep = dusting_audit(k, dust_rate_matrix(k, sites=[(9, 9)]), f, (9, 9))
    assert rep.ok


def test_dusting_tight_for_ising_spin():
    k = ising_kernel(0.8, 0.3)
    y = (2, 2)
    alpha = dust_rate_matrix(k, sites=[y])
    f = TestFunction.from_callable([y], (-1, 1), lambda c: c[y])
    rep = dusting_audit(k, alpha, f, y)
    past = [c for c in rep.checks if c[1] == "past"]
    assert len(past) == 2 and all(abs(c[4]) < 1e-12 for c in past)
    assert not dusting_audit(k, alpha.scaled(-1e-6), f, y).ok


def test_dusting_representative_translation():
    k = ising_kernel(0.8, 0.3)
    alpha = dust_rate_matrix(k, sites=[O])
    f = TestFunction.from_callable([(4, 4)], (-1, 1), lambda c: c[(4, 4)])
    assert not dusting_audit(k, alpha.scaled(-1e-6), f, (4, 4)).ok


def test_dusting_random_functions_stavskaya():
    k = stavskaya_kernel(0.6)
    y = (2, 2)
    alpha = dust_rate_matrix(k, sites=[y])
    rng = np.random.default_rng(8)
    for _ in range(50):
        f = TestFunction.random([y, (2, 1), (3, 3)], (0, 1), rng)
        assert dusting_audit(k, alpha, f, y).ok


def test_uniformity_constant_examples():
    sp = z2_window(2, 2)
    box = time_box(sp, [(1, 1)])
    assert uniformity_constant(stavskaya_kernel(0.7), box, {(1, 1): 1}) == 0.0
    assert uniformity_constant(constant_kernel(), box, {(1, 1): 1}) == 1.0
    eps = voter_epsilon(0.5)
    c = uniformity_constant(ising_kernel(0.5), box, {(1, 1): 1})
    assert c == pytest.approx(eps / (1 - eps), abs=1e-14)
    assert c == pytest.approx(0.1353352832366127, abs=1e-14)  # e^{-2}
    assert uniformity_constant(stavskaya_kernel(0.0), box, {(1, 1): 1}) == 1.0  # null event
    assert uniformity_constant(ising_kernel(0.5), box, lambda cfg: cfg[(1, 1)] == cfg[(1, 0)]) > 0
