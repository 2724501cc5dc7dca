import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from superres.control_protocols import make_c1, make_cpmg, make_free
from superres.estimation_theory import (BudgetError, ConsistencyError, analytic_error_bounds,
                                        basis_robustness_check, bias_subtraction_analysis,
                                        entanglement_scaling, estimate_array, estimate_from_counts,
                                        expansion_coefficients, fi_bound, fisher_from_probability,
                                        fisher_information, is_superres, measurement_budget,
                                        n_free, survival_probability,
                                        survival_probability_continuous)
from superres.signal_models import LorentzianNoise, TwoToneSignal

G = 0.1


def test_expansion_matches_exact_survival():
    p = make_cpmg(2)
    an = expansion_coefficients(p, G)
    for dw in (1e-3, 1e-2, 3e-2):
        exact = survival_probability(p, TwoToneSignal(G, 1.0, dw))
        # truncation error is O((T dw)^4) relative to 1 - P
        assert 1 - an.probability(dw) == pytest.approx(1 - exact, rel=(p.duration * dw) ** 4 / 100 + 1e-9)


def test_superres_classification():
    assert is_superres(make_free(2)) and is_superres(make_cpmg(4)) and is_superres(make_c1(2))
    assert not is_superres(make_free("5/2"))
    an = expansion_coefficients(make_free("5/2"), G)
    assert an.a < 1 and an.fi_limit == 0.0


@given(st.floats(1e-4, 0.05))
def test_fisher_information_tends_to_limit(dw):
    p = make_free(2)
    lim = expansion_coefficients(p, G).fi_limit
    fi = fisher_information(p, G, dw)
    assert fi <= lim * (1 + 1e-9)
    if dw < 1e-3:
        assert fi == pytest.approx(lim, rel=1e-3)


def test_fisher_information_matches_probability_derivative():
    p = make_cpmg(2)
    dw = 0.02
    f = lambda d: survival_probability(p, TwoToneSignal(G, 1.0, d))
    assert fisher_information(p, G, dw) == pytest.approx(fisher_from_probability(f, dw), rel=1e-5)


def test_fisher_bound_and_errors():
    assert fi_bound(0.5, 2.0) == pytest.approx(0.25 * 16 / 6)
    with pytest.raises(ValueError):
        fisher_information(make_free(2), G, -1.0)
    # a huge coupling is fine; the bound check only flags inconsistent values
    assert fisher_information(make_free(1), 1.0, 0.0) <= fi_bound(1.0, make_free(1).duration)


def test_bound_violation_is_reported(monkeypatch):
    import superres.estimation_theory as et

    monkeypatch.setattr(et, "fi_bound", lambda g, T: 0.0)
    with pytest.raises(ConsistencyError):
        et.fisher_information(make_free(2), G, 0.0)


def test_budget_rules():
    an = expansion_coefficients(make_free(2), G)
    for dw in (1e-3, 1e-2):
        assert measurement_budget(an, 0.1, dw).n_shots == n_free(G, 2, 0.1, dw)
    rig = measurement_budget(an, 0.1, 1e-2, p_fail=0.1, rule="rigorous")
    assert rig.n_shots > measurement_budget(an, 0.1, 1e-2).n_shots
    with pytest.raises(BudgetError):
        measurement_budget(an, 0.1, 1e-2, rule="rigorous")
    with pytest.raises(BudgetError):
        measurement_budget(an, 0.0, 1e-2)


def test_cpmg_needs_quarter_of_free_budget():
    fe = measurement_budget(expansion_coefficients(make_free(2), G), 0.1, 1e-3).n_shots
    cp = measurement_budget(expansion_coefficients(make_cpmg(2), G), 0.1, 1e-3).n_shots
    assert cp / fe == pytest.approx(0.25, rel=1e-6)


@given(st.floats(0.0, 1.0))
def test_estimator_inverts_probability(dw):
    an = expansion_coefficients(make_cpmg(2), G)
    p = an.a - an.b * dw * dw
    est, neg = estimate_array(an.a, an.b, np.array([p * 1e6]), np.array([1e6]))
    assert est[0] == pytest.approx(dw, abs=1e-6) and not neg[0] or dw < 1e-6
    e = estimate_from_counts(an, 10, 10)
    assert e.value == 0.0
    with pytest.raises(ValueError):
        estimate_from_counts(an, 11, 10)


def test_noiseless_error_bounds():
    fe = analytic_error_bounds("free", 2, G, 1e-3)
    cp = analytic_error_bounds("cpmg", 2, G, 1e-3)
    assert float(fe.total) == pytest.approx(0.1)
    assert float(cp.total) == pytest.approx(0.05)
    with pytest.raises(ValueError):
        analytic_error_bounds("c1", 2, G, 1e-3)


def test_noisy_bounds_grow_as_separation_shrinks():
    nz = LorentzianNoise(1e-3, 0.1)
    dws = np.logspace(-4, -2, 5)
    for kind in ("free", "cpmg"):
        b = analytic_error_bounds(kind, 2, G, dws, nz).bias
        assert np.all(np.diff(b) < 0)
    # at simulated shots the statistical part scales as 1/(dw sqrt(N))
    s1 = analytic_error_bounds("free", 2, G, 1e-3, n_shots=n_free(G, 2, 0.1, 1e-3)).statistical
    assert float(s1) == pytest.approx(0.1, rel=1e-4)


def test_bias_subtraction_needs_quartic_budget():
    an = expansion_coefficients(make_free(2), G, LorentzianNoise(1e-3, 0.1))
    bc = bias_subtraction_analysis(an, 0.1, np.array([1e-5, 1e-6]))
    assert bc.n_required[1] / bc.n_required[0] == pytest.approx(1e4, rel=1e-2)


def test_entanglement_scaling():
    an = expansion_coefficients(make_free(2), G)
    e = entanglement_scaling(an, 0.1, 1e-3, n_entangled=4)
    assert e.fi == pytest.approx(16 * an.fi_limit)
    assert e.resource_ratio == pytest.approx(4.0)
    s = entanglement_scaling(an, 0.1, 1e-3, beta=0.5, mu=0.5)
    assert s.n_entangled == pytest.approx(0.5 / 1e-3 ** 0.5)
    with pytest.raises(ValueError):
        entanglement_scaling(an, 0.1, 1e-3)


@given(st.floats(0, math.pi / 2), st.floats(0, 2 * math.pi), st.floats(0, 1))
def test_basis_robustness(theta, phi, p):
    q = basis_robustness_check(theta, phi, p)
    assert 0 - 1e-12 <= q <= 1 + 1e-12
    assert basis_robustness_check(0.0, phi, p) == pytest.approx(p)


def test_continuous_survival_expansion_vs_direct():
    p = make_c1(2, n_steps=256)
    s = TwoToneSignal(0.02, 1.0, 0.01)
    a = survival_probability_continuous(p, s, expand=True)
    b = survival_probability_continuous(p, s, expand=False)
    assert 1 - a.probability == pytest.approx(1 - b.probability, rel=1e-3)
    assert not a.clamped
