"""Survival probabilities, expansion coefficients, Fisher information and budgets.

For pi-pulse sequences the ensemble survival probability is exact:
``<P> = 1/2 + 1/2 exp(-chi - chi_noise)`` with
``chi = 2 g^2 [F(w1) + F(w2)]``.  Near ``delta_omega = 0`` it expands as
``a - b dw^2 + c dw^4``.  Continuous controls use the weak-coupling series
``<P> = 1 - g^2 sum_j F2(w_j) + (g^4/3) sum_jk F4(w_j, w_k) + O(g^6)``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
import math

import numpy as np

from .control_protocols import ControlProtocol
from .filter_functions import (ff4_diag_d2, ff4_sum, ff_continuous_order4, filter_derivs,
                               overlap_chi)
from .signal_models import NoNoise, TwoToneSignal

ZERO_TOL = 1e-9


class ConsistencyError(RuntimeError):
    pass


class BudgetError(ValueError):
    pass


@dataclass
class ProtocolAnalysis:
    a: float
    b: float
    c: float
    fi_limit: float
    is_superres: bool
    validity_floor: float
    g: float
    omega_c: float
    duration: float
    F: float
    d2F: float
    d4F: float
    chi_noise: float = 0.0
    F4: float | None = None
    d2F4: float | None = None
    continuous: bool = False
    kind: str = ""

    def to_dict(self):
        return {k: (float(v) if isinstance(v, (np.floating,)) else v)
                for k, v in asdict(self).items()}

    def probability(self, delta_omega):
        dw = np.asarray(delta_omega, dtype=float)
        return self.a - self.b * dw ** 2 + self.c * dw ** 4


@dataclass
class MeasurementBudget:
    n_shots: int
    delta: float
    p_fail: float | None
    rule: str

    def __post_init__(self):
        if self.n_shots < 1:
            raise BudgetError("budget must be at least one shot")


def _noise_chi(protocol, noise) -> float:
    if noise is None or isinstance(noise, NoNoise):
        return 0.0
    return overlap_chi(protocol, noise).chi


def filter_sup(protocol: ControlProtocol, n: int = 1024) -> float:
    """Grid estimate of sup_w F2 (never below F2(0))."""
    wmax = 3 * protocol.omega_c + 2 * (float(np.max(np.abs(protocol.samples)))
                                       if protocol.samples is not None else 0.0)
    wmax += 8 * np.pi * (len(protocol.impulses) + 1) / protocol.duration
    w = np.linspace(0.0, wmax, n)
    return float(np.max(filter_derivs(protocol, w, 0)[0]))


def expansion_coefficients(protocol: ControlProtocol, g: float, noise=None,
                           n_steps=None) -> ProtocolAnalysis:
    """Coefficients of ``<P> = a - b dw^2 + c dw^4`` at the centroid.

    Noise multiplies ``a - 1/2``, ``b`` and ``c`` by ``exp(-chi_noise)``.
    """
    wc = protocol.omega_c
    F, _, d2F, _, d4F = (float(v[0]) for v in filter_derivs(protocol, [wc], 4, n_steps))
    chi_n = _noise_chi(protocol, noise)
    damp = math.exp(-chi_n)
    sup = filter_sup(protocol)
    zero = F <= ZERO_TOL * sup
    if protocol.dephasing_preserving:
        chi0 = 4 * g * g * F
        e0 = math.exp(-chi0)
        a = 0.5 * (1 + e0 * damp)
        b = 0.25 * g * g * e0 * d2F * damp
        c = 0.5 * e0 * (g ** 4 * d2F ** 2 / 8 - g * g * d4F / 96) * damp
        F4 = 3 * F * F
        d2F4 = None
        floor = 0.0
    else:
        F4 = ff_continuous_order4(protocol, wc, wc, n_steps)
        d2F4 = ff4_diag_d2(protocol, wc, n_steps)
        a_nl = 1 - 2 * g * g * F + 4 / 3 * g ** 4 * F4
        a = 0.5 + (a_nl - 0.5) * damp
        b = (0.25 * g * g * d2F - g ** 4 / 3 * d2F4) * damp
        c = -g * g * d4F / 192 * damp
        # the g^4 constant must stay below the dw^2 term
        floor = math.sqrt(max(16 * g * g * F4 / (3 * d2F), 0.0)) if d2F > 0 else math.inf
    is_sr = bool(zero and d2F > 0)
    fi = 0.0
    if is_sr and chi_n == 0.0:
        fi = g * g * d2F if protocol.dephasing_preserving else 4 * b
    return ProtocolAnalysis(a=a, b=b, c=c, fi_limit=fi, is_superres=is_sr, validity_floor=floor,
                            g=g, omega_c=wc, duration=protocol.duration, F=F, d2F=d2F, d4F=d4F,
                            chi_noise=chi_n, F4=F4, d2F4=d2F4,
                            continuous=not protocol.dephasing_preserving, kind=protocol.kind)


def is_superres(protocol: ControlProtocol) -> bool:
    F, _, d2F = (float(v[0]) for v in filter_derivs(protocol, [protocol.omega_c], 2))
    return F <= ZERO_TOL * filter_sup(protocol) and d2F > 0


# ----------------------------------------------------------------------
def survival_probability(protocol: ControlProtocol, signal: TwoToneSignal, noise=None) -> float:
    """Exact ensemble survival ``1/2 + 1/2 exp(-chi - chi_noise)`` for pi-pulse controls."""
    if not protocol.dephasing_preserving:
        raise ValueError("exact survival needs a dephasing-preserving protocol; "
                         "use survival_probability_continuous")
    chi = overlap_chi(protocol, signal).chi + _noise_chi(protocol, noise)
    return 0.5 + 0.5 * math.exp(-chi)


@dataclass
class ContinuousSurvival:
    probability: float
    raw: float
    clamped: bool


def survival_probability_continuous(protocol: ControlProtocol, signal: TwoToneSignal,
                                    noise=None, expand: bool = True,
                                    n_steps=None) -> ContinuousSurvival:
    """Weak-coupling survival probability for any control.

    ``expand=True`` uses the centroid expansion
    ``1 - 2g^2 F2 + (4/3) g^4 F4 - dw^2 (g^2 F2''/4 - (g^4/3) d^2F4/dw1^2)``;
    ``expand=False`` sums the filter functions at the two tones directly.
    Values outside ``[0, 1]`` are clamped and flagged.
    """
    g, wc, dw = signal.g, signal.omega_c, signal.delta_omega
    if expand:
        F, _, d2F = (float(v[0]) for v in filter_derivs(protocol, [wc], 2, n_steps))
        F4 = ff_continuous_order4(protocol, wc, wc, n_steps)
        d2F4 = ff4_diag_d2(protocol, wc, n_steps) if dw else 0.0
        p = 1 - 2 * g * g * F + 4 / 3 * g ** 4 * F4 - dw * dw * (
            g * g * d2F / 4 - g ** 4 / 3 * d2F4)
    else:
        w = [signal.omega1, signal.omega2]
        F = filter_derivs(protocol, w, 0, n_steps)[0]
        p = 1 - g * g * float(F.sum()) + g ** 4 / 3 * ff4_sum(protocol, w, n_steps)
    chi_n = _noise_chi(protocol, noise)
    if chi_n:
        p = 0.5 + (p - 0.5) * math.exp(-chi_n)
    q = min(max(p, 0.0), 1.0)
    return ContinuousSurvival(q, p, q != p)


def validity_floor(analysis: ProtocolAnalysis) -> float:
    return analysis.validity_floor


# ----------------------------------------------------------------------
def fi_bound(g: float, T: float) -> float:
    return g * g * T ** 4 / 6


def fisher_information(protocol: ControlProtocol, g: float, delta_omega: float,
                       noise=None, check_bound: bool = True) -> float:
    """Binary-outcome Fisher information for ``delta_omega``.

    ``FI = chi'^2 / (exp(2 chi) - 1)``; the ``delta_omega -> 0`` value is
    ``g^2 F''(w_c)`` when ``F(w_c) = 0`` and zero otherwise.
    """
    if delta_omega < 0:
        raise ValueError("delta_omega must be nonnegative")
    wc = protocol.omega_c
    chi_n = _noise_chi(protocol, noise)
    if delta_omega == 0:
        F, _, d2F = (float(v[0]) for v in filter_derivs(protocol, [wc], 2))
        fi = g * g * d2F if (F <= ZERO_TOL * filter_sup(protocol) and chi_n == 0) else 0.0
    else:
        w = np.array([wc - delta_omega / 2, wc + delta_omega / 2])
        F, dF = filter_derivs(protocol, w, 1)[:2]
        chi = 2 * g * g * F.sum() + chi_n
        dchi = g * g * (dF[1] - dF[0])
        fi = float(dchi ** 2 / np.expm1(2 * chi)) if chi > 0 else 0.0
    if check_bound and fi > fi_bound(g, protocol.duration) * (1 + 1e-9):
        raise ConsistencyError(f"FI {fi} exceeds g^2 T^4 / 6 = {fi_bound(g, protocol.duration)}")
    return fi


def fisher_from_probability(p_func, delta_omega: float, h: float | None = None) -> float:
    """Binary FI ``P'^2 / (P (1 - P))`` with a central-difference derivative."""
    h = h if h is not None else 1e-4 * max(delta_omega, 1e-3)
    p = p_func(delta_omega)
    dp = (p_func(delta_omega + h) - p_func(delta_omega - h)) / (2 * h)
    return dp * dp / (p * (1 - p))


# ----------------------------------------------------------------------
def measurement_budget(analysis: ProtocolAnalysis, delta: float, delta_omega: float,
                       p_fail: float | None = None, rule: str = "headline") -> MeasurementBudget:
    """Shots needed for relative error ``delta``.

    ``headline``: ``[a(1-a) + |b(1-2a)| dw^2] / (4 b^2 delta^2 dw^4)``, which is
    ``1 / (4 b delta^2 dw^2)`` when ``a = 1``.  ``rigorous`` (superresolving
    protocols): ``max(2/(b p delta^2) + 3/(2 b delta), 1/(2 b delta)) / dw^2``.
    """
    if not (delta > 0 and delta_omega > 0):
        raise BudgetError("delta and delta_omega must be positive")
    b, a = abs(analysis.b), analysis.a
    if not b > 0:
        raise BudgetError("b = 0: the protocol carries no information at the centroid")
    if rule == "headline":
        num = a * (1 - a) + abs(b * (1 - 2 * a)) * delta_omega ** 2
        n = num / (4 * b * b * delta ** 2 * delta_omega ** 4)
    elif rule == "rigorous":
        if p_fail is None or not 0 < p_fail < 1:
            raise BudgetError("rigorous budget needs p_fail in (0, 1)")
        n = max(2 / (b * p_fail * delta ** 2) + 3 / (2 * b * delta),
                1 / (2 * b * delta)) / delta_omega ** 2
    else:
        raise BudgetError(f"unknown budget rule {rule!r}")
    return MeasurementBudget(max(1, math.ceil(n * (1 - 1e-12))), delta, p_fail, rule)


def n_free(g: float, kappa: float, delta: float, delta_omega: float, omega_c: float = 1.0) -> int:
    """Headline budget of free evolution: ``w_c^4 / (8 pi^2 g^2 kappa^2 delta^2 dw^2)``."""
    return max(1, math.ceil(omega_c ** 4 / (8 * math.pi ** 2 * g * g * kappa ** 2
                                            * delta ** 2 * delta_omega ** 2) * (1 - 1e-12)))


@dataclass
class Estimate:
    value: float
    negative_radicand: bool


def estimate_from_counts(analysis: ProtocolAnalysis, n_plus, n_shots) -> Estimate:
    """Plug-in estimate ``sqrt(|a - n_plus/n_shots| / b)``."""
    if not 0 <= n_plus <= n_shots:
        raise ValueError("need 0 <= n_plus <= n_shots")
    r = (analysis.a - n_plus / n_shots) / analysis.b
    return Estimate(math.sqrt(abs(r)), r < 0)


def estimate_array(a: float, b: float, n_plus, n_shots):
    """Vectorized estimator; returns (estimates, negative-radicand flags)."""
    r = (a - np.asarray(n_plus, float) / np.asarray(n_shots, float)) / b
    return np.sqrt(np.abs(r)), r < 0


# ----------------------------------------------------------------------
@dataclass
class ErrorBound:
    bias: float
    statistical: float
    W: float

    @property
    def total(self) -> float:
        return self.bias + self.statistical


def analytic_error_bounds(kind: str, kappa, g: float, delta_omega, noise=None,
                          delta: float = 0.1, p_fail: float = 1.0, n_shots=None,
                          omega_c: float = 1.0) -> ErrorBound:
    """Relative-error bound ``sqrt(1 + W) - 1 + stat``.

    ``W = chi_noise / (2 b dw^2)`` is the noise-induced shift of ``1 - P``
    relative to the signal term, with ``b = alpha pi^2 g^2 kappa^2 / w_c^4``
    (alpha = 2 free, 8 CPMG).  ``stat = delta / sqrt(p alpha / 2)`` for the
    free-evolution budget, or ``1 / (2 sqrt(p alpha N) pi g kappa / w_c^2) / dw``
    when ``n_shots`` is given.
    """
    from .control_protocols import make_cpmg, make_free

    if kind == "free":
        alpha, proto = 2.0, make_free(kappa, omega_c)
    elif kind == "cpmg":
        alpha, proto = 8.0, make_cpmg(kappa, omega_c)
    else:
        raise ValueError(f"error bounds are available for free and cpmg, not {kind!r}")
    k = float(kappa)
    dw = np.asarray(delta_omega, dtype=float)
    b = alpha * math.pi ** 2 * g * g * k * k / omega_c ** 4
    chi_n = _noise_chi(proto, noise)
    W = chi_n / (2 * b * dw ** 2)
    bias = np.sqrt(1 + W) - 1
    if n_shots is None:
        stat = delta / math.sqrt(p_fail * alpha / 2) * np.ones_like(dw)
    else:
        stat = 1 / (2 * np.sqrt(p_fail * alpha * np.asarray(n_shots, float)) * math.pi * g * k
                    / omega_c ** 2) / dw
    return ErrorBound(bias, stat, W)


@dataclass
class BiasCorrection:
    a: float
    b: float
    n_required: np.ndarray
    bias: np.ndarray


def bias_subtraction_analysis(analysis_noisy: ProtocolAnalysis, delta: float, delta_omega) -> BiasCorrection:
    """Budget of the noise-corrected estimator ``sqrt((a_noisy - P~) / b_noisy)``.

    The corrected estimator is unbiased to leading order, but ``0 < a < 1`` so
    ``N ~ a(1-a) / (4 b^2 delta^2 dw^4)``.
    """
    dw = np.asarray(delta_omega, dtype=float)
    a, b, c = analysis_noisy.a, analysis_noisy.b, analysis_noisy.c
    n = (a * (1 - a) + abs(b * (1 - 2 * a)) * dw ** 2) / (4 * b * b * delta ** 2 * dw ** 4)
    p = a - b * dw ** 2 + c * dw ** 4
    bias = np.sqrt(np.abs(a - p) / b) - dw
    return BiasCorrection(a, b, np.ceil(n), bias)


# ----------------------------------------------------------------------
@dataclass
class EntanglementScaling:
    fi: float
    n_repetitions: int
    resource_ratio: float
    n_entangled: float
    regime_ok: bool


def entanglement_scaling(analysis: ProtocolAnalysis, delta: float, delta_omega: float,
                         n_entangled: float | None = None, beta: float | None = None,
                         mu: float | None = None) -> EntanglementScaling:
    """GHZ scaling: FI grows as ``Ne^2``; repetitions shrink as ``1/Ne^2``.

    Give either ``n_entangled`` or the schedule ``Ne = beta / dw^(1 - mu)``.
    """
    b = analysis.b
    if n_entangled is None:
        if beta is None or mu is None or not 0 < mu <= 1:
            raise ValueError("need n_entangled or (beta, mu) with mu in (0, 1]")
        ne = beta / delta_omega ** (1 - mu)
        regime_ok = b * beta * beta < 1
    else:
        if n_entangled < 1:
            raise ValueError("n_entangled must be >= 1")
        ne = float(n_entangled)
        regime_ok = b * ne * ne * delta_omega ** 2 < 1
    n_single = 1 / (4 * b * delta ** 2 * delta_omega ** 2)
    n_r = max(1, math.ceil(n_single / ne ** 2 * (1 - 1e-12)))
    ratio = n_single / (ne * (n_single / ne ** 2))
    return EntanglementScaling(ne * ne * analysis.fi_limit, n_r, ratio, ne, regime_ok)


def basis_robustness_check(theta, phi, p_plus):
    """Survival in a basis tilted by ``theta`` from x: ``sin^2 theta + cos(2 theta) p``.

    ``phi`` (the azimuth) drops out.
    """
    theta = np.asarray(theta, dtype=float)
    return np.sin(theta) ** 2 + np.cos(2 * theta) * np.asarray(p_plus, dtype=float)
