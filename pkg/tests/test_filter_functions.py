import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from superres.control_protocols import (ProtocolError, make_c1, make_cpmg, make_custom, make_free,
                                        make_qns_comb, random_pulse_sequence)
from superres.filter_functions import (ff4_sum, ff_closed_form, ff_continuous_order2,
                                       ff_continuous_order4, ff_instantaneous, ff_integral,
                                       filter_profile, lorentzian_shape_constant, overlap_chi,
                                       unit_moments)
from superres.signal_models import LorentzianNoise, NoNoise, TwoToneSignal, WhiteNoise


def _brute_moment(x, j, n=20001):
    s = np.linspace(0, 1, n)
    f = s ** j * np.exp(1j * x * s)
    return np.trapezoid(f, s) if hasattr(np, "trapezoid") else np.trapz(f, s)


@pytest.mark.parametrize("x", [0.0, 0.3, 1.999, 2.001, 7.5, -4.0])
def test_unit_moments(x):
    mu = unit_moments(np.array([x]), 4)[:, 0]
    for j in range(5):
        assert mu[j] == pytest.approx(_brute_moment(x, j), abs=1e-7)


def test_unit_moments_continuous_across_branch():
    a = unit_moments(np.array([2.0 - 1e-12, 2.0 + 1e-12]), 6)
    np.testing.assert_allclose(a[:, 0], a[:, 1], rtol=1e-9)


@given(st.integers(0, 2 ** 32 - 1))
def test_instantaneous_derivatives_match_differences(seed):
    rng = np.random.default_rng(seed)
    p = random_pulse_sequence(rng, rng.uniform(2.0, 12.0), 6)
    w = rng.uniform(0.2, 3.0)
    h = 1e-4
    F, dF, d2F = (v[0] for v in ff_instantaneous(p, [w]))
    Fp, Fm = ff_instantaneous(p, [w + h, w - h], derivs=0)[0]
    scale = p.duration ** 2
    assert dF == pytest.approx((Fp - Fm) / (2 * h), abs=1e-6 * scale * p.duration)
    assert d2F == pytest.approx((Fp - 2 * F + Fm) / h ** 2, abs=1e-3 * scale * p.duration ** 2)


def test_continuous_derivative_matches_difference():
    p = make_c1(2, n_steps=128)
    w, h = 1.3, 1e-4
    F, dF, d2F = (v[0] for v in ff_continuous_order2(p, [w]))
    Fp, Fm = ff_continuous_order2(p, [w + h, w - h], derivs=0)[0]
    assert dF == pytest.approx((Fp - Fm) / (2 * h), rel=1e-6)
    assert d2F == pytest.approx((Fp - 2 * F + Fm) / h ** 2, rel=1e-4)


def test_qns_closed_form():
    w = np.linspace(0, 5, 301)
    for M, T in ((1, 3.0), (3, 11.0)):
        F = ff_instantaneous(make_qns_comb(M, T), w, derivs=0)[0]
        ref = ff_closed_form("qns", w, M=M, T=T)
        np.testing.assert_allclose(F, ref, atol=1e-11 * ref.max())


def test_closed_form_validation():
    with pytest.raises(ProtocolError):
        ff_closed_form("cpmg", [1.0], kappa=3)
    with pytest.raises(ProtocolError):
        ff_closed_form("free", [1.0], kappa=0)
    with pytest.raises(ProtocolError):
        ff_closed_form("nope", [1.0])


def test_superresolution_zero_for_integer_kappa():
    for p in (make_free(2), make_cpmg(2), make_c1(2)):
        prof = filter_profile(p, [1.0])
        F, d2F = prof.F[0], prof.d2F[0]
        assert abs(F) < 1e-20 and d2F > 0
    assert ff_instantaneous(make_free("5/2"), [1.0], 0)[0][0] > 1.0


def test_filter_integral_rejects_drive_and_matches_time():
    with pytest.raises(ProtocolError):
        ff_integral(make_c1(2, n_steps=16))
    p = make_cpmg(4)
    assert ff_integral(p) == pytest.approx(2 * math.pi * p.duration, rel=1e-10)


def test_two_tone_overlap():
    p = make_cpmg(2)
    s = TwoToneSignal(0.1, 1.0, 0.2)
    F = ff_instantaneous(p, [0.9, 1.1], derivs=0)[0]
    assert overlap_chi(p, s).chi == pytest.approx(2 * 0.01 * F.sum())


def test_white_and_empty_overlap():
    p = make_c1(2, n_steps=64)
    assert overlap_chi(p, WhiteNoise(0.3)).chi == pytest.approx(2 * 0.3 * p.duration)
    assert overlap_chi(p, NoNoise()).chi == 0.0


@pytest.mark.parametrize("proto", [make_cpmg(2), make_free(1), make_custom(5.0, samples=np.linspace(-1, 1, 24))])
def test_lorentzian_overlap_methods_agree(proto):
    n = LorentzianNoise(0.2, 0.3)
    a = overlap_chi(proto, n, method="quadrature").chi
    b = overlap_chi(proto, n, method="time").chi
    assert a == pytest.approx(b, rel=1e-7)


def test_lorentzian_overlap_small_width_limit():
    # narrow noise sees only the DC value of F
    p = make_free(1)
    n = LorentzianNoise(0.1, 1e-4)
    chi = overlap_chi(p, n).chi
    assert chi == pytest.approx(0.01 * p.duration ** 2 / math.pi, rel=3e-3)


def test_order4_symmetry_and_sum():
    p = make_custom(6.0, samples=0.3 * np.sin(np.linspace(0, 3, 40)), impulses=[(3.0, math.pi)])
    a = ff_continuous_order4(p, 0.8, 1.3)
    b = ff_continuous_order4(p, 1.3, 0.8)
    assert a == pytest.approx(b, rel=1e-9)
    tot = ff4_sum(p, [0.8, 1.3])
    parts = sum(ff_continuous_order4(p, x, y) for x in (0.8, 1.3) for y in (0.8, 1.3))
    assert tot == pytest.approx(parts, rel=1e-9)


def test_shape_constants():
    assert lorentzian_shape_constant("free", 2, 0.0) == math.inf
    assert lorentzian_shape_constant("cpmg", 2, 0.0) == pytest.approx(math.pi / 6, abs=1e-6)
    with pytest.raises(ProtocolError):
        lorentzian_shape_constant("cpmg", 3, 0.0)
