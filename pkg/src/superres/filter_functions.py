"""Filter functions of control protocols and their spectral overlaps.

Conventions
-----------
For a control phase ``theta(t)`` let ``u = exp(2i theta)`` and
``A(w) = int_0^T u(t) exp(i w (t - T/2)) dt``.  The second-order filter function is
``F2(w) = (|A(w)|^2 + |A(-w)|^2) / 2``, which equals
``|int cos(2 theta) e^{iwt}|^2 + |int sin(2 theta) e^{iwt}|^2``.  For pi-pulse
sequences ``u`` is the switching function and ``F2 = F = |G|^2``.

Every integral is evaluated exactly per piece: on a piece of length ``h`` the
phase is linear, so the moments ``int_0^h s^m exp(i nu s) ds`` close in form.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb, factorial

import numpy as np
from scipy.special import roots_legendre

from .control_protocols import ControlProtocol, ProtocolError, Segments, build_segments
from . import _ordered
from .signal_models import LorentzianNoise, NoNoise, TwoToneSignal, WhiteNoise


class QuadratureError(RuntimeError):
    pass


@dataclass
class FilterProfile:
    omega: np.ndarray
    F: np.ndarray
    dF: np.ndarray | None = None
    d2F: np.ndarray | None = None
    order: int = 2

    def to_csv_rows(self):
        cols = [self.omega, self.F,
                self.dF if self.dF is not None else np.full_like(self.F, np.nan),
                self.d2F if self.d2F is not None else np.full_like(self.F, np.nan)]
        return np.column_stack(cols)


@dataclass
class OverlapResult:
    chi: float
    components: dict = field(default_factory=dict)


# ----------------------------------------------------------------------
# per-piece moments
_SERIES_CUT = 2.0
_SERIES_TERMS = 34
_FACT = np.array([float(factorial(n)) for n in range(_SERIES_TERMS)])


def unit_moments(x, jmax: int):
    """``mu_j(x) = int_0^1 s^j exp(i x s) ds`` for ``j = 0..jmax``.

    Power series for small ``|x|``, upward recurrence otherwise.
    """
    x = np.asarray(x, dtype=complex)
    out = np.empty((jmax + 1,) + x.shape, dtype=complex)
    small = np.abs(x) < _SERIES_CUT
    if np.any(small):
        xs = x[small]
        n = np.arange(_SERIES_TERMS)
        pw = (1j * xs[..., None]) ** n / _FACT
        for j in range(jmax + 1):
            out[j][small] = np.sum(pw / (n + j + 1), axis=-1)
    big = ~small
    if np.any(big):
        xb = x[big]
        e = np.exp(1j * xb)
        inv = 1.0 / (1j * xb)
        m = (e - 1.0) * inv
        out[0][big] = m
        for j in range(1, jmax + 1):
            m = (e - j * m) * inv
            out[j][big] = m
    return out


def _pieces(protocol_or_seg) -> tuple[Segments, float]:
    if isinstance(protocol_or_seg, Segments):
        s = protocol_or_seg
        return s, float(s.t0[-1] + s.h[-1])
    return build_segments(protocol_or_seg), protocol_or_seg.duration


def amplitude_derivs(seg: Segments, T: float, omega, order: int, sigma: int = 1,
                     with_grad: bool = False):
    """Derivatives ``d^m/dw^m int u^sigma e^{iw(t-T/2)} dt`` for ``m = 0..order``.

    Returns an array of shape ``(order+1, len(omega))``.  With ``with_grad`` also
    returns per-piece partials with respect to the piece start phase and rate,
    each of shape ``(order+1, len(omega), n_pieces)``.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    tc = seg.t0 - T / 2
    h = seg.h
    nu = omega[:, None] + 2 * sigma * seg.rate[None, :]
    x = nu * h
    jmax = order + (1 if with_grad else 0)
    mu = unit_moments(x, jmax)
    ph = np.exp(1j * (omega[:, None] * tc + 2 * sigma * seg.theta0))
    hp = np.array([h ** (j + 1) for j in range(jmax + 1)])  # (j, piece)
    out = np.empty((order + 1, omega.size), dtype=complex)
    terms = []
    for m in range(order + 1):
        acc = np.zeros(x.shape, dtype=complex)
        for j in range(m + 1):
            acc += comb(m, j) * tc ** (m - j) * hp[j] * mu[j]
        t = (1j) ** m * ph * acc
        terms.append(t)
        out[m] = t.sum(axis=1)
    if not with_grad:
        return out
    d_theta = np.array([2j * sigma * t for t in terms])
    d_rate = np.empty_like(d_theta)
    for m in range(order + 1):
        acc = np.zeros(x.shape, dtype=complex)
        for j in range(m + 1):
            acc += comb(m, j) * tc ** (m - j) * hp[j] * h * (1j * mu[j + 1])
        d_rate[m] = (1j) ** m * ph * acc * (2 * sigma)
    return out, d_theta, d_rate


def _leibniz(X, n):
    """n-th derivative of |X|^2 from the derivative stack X[0..n]."""
    tot = np.zeros(X.shape[1])
    for k in range(n + 1):
        tot += comb(n, k) * np.real(X[k] * np.conj(X[n - k]))
    return tot


def _chunks(omega, size=256):
    for i in range(0, omega.size, size):
        yield slice(i, i + size)


def ff_continuous_order2(protocol: ControlProtocol, omega, n_steps: int | None = None,
                         derivs: int = 2):
    """Second-order filter function and its first ``derivs`` omega-derivatives.

    ``n_steps`` resamples the drive onto that many cells (piecewise-constant
    hold); ``None`` keeps the protocol's own grid.
    Returns a tuple ``(F2, dF2, d2F2, ...)`` of arrays shaped like ``omega``.
    """
    protocol = _resample(protocol, n_steps)
    seg, T = _pieces(protocol)
    w = np.asarray(omega, dtype=float)
    flat = np.atleast_1d(w).ravel()
    res = np.empty((derivs + 1, flat.size))
    for sl in _chunks(flat):
        Ap = amplitude_derivs(seg, T, flat[sl], derivs)
        Am = amplitude_derivs(seg, T, -flat[sl], derivs)
        sign = np.array([(-1) ** m for m in range(derivs + 1)])[:, None]
        Bm = Am * sign
        for n in range(derivs + 1):
            res[n, sl] = 0.5 * (_leibniz(Ap, n) + _leibniz(Bm, n))
    return tuple(r.reshape(w.shape) for r in res)


def ff_instantaneous(protocol: ControlProtocol, omega, derivs: int = 2):
    """Filter function ``|G|^2`` of a pi-pulse sequence with analytic derivatives."""
    if not protocol.dephasing_preserving:
        raise ProtocolError("ff_instantaneous needs a dephasing-preserving protocol")
    seg, T = _pieces(protocol)
    w = np.asarray(omega, dtype=float)
    flat = np.atleast_1d(w).ravel()
    res = np.empty((derivs + 1, flat.size))
    for sl in _chunks(flat):
        G = amplitude_derivs(seg, T, flat[sl], derivs)
        for n in range(derivs + 1):
            res[n, sl] = _leibniz(G, n)
    return tuple(r.reshape(w.shape) for r in res)


def _resample(protocol: ControlProtocol, n_steps):
    if n_steps is None or protocol.samples is None or n_steps == protocol.samples.size:
        return protocol
    if n_steps < 2:
        raise ProtocolError("n_steps must be >= 2")
    old = protocol.samples
    idx = np.minimum(((np.arange(n_steps) + 0.5) * old.size / n_steps).astype(int), old.size - 1)
    return ControlProtocol(protocol.kind, protocol.duration, protocol.omega_c, protocol.impulses,
                           old[idx], protocol.kappa, dict(protocol.meta))


def filter_profile(protocol: ControlProtocol, omega, n_steps=None) -> FilterProfile:
    omega = np.asarray(omega, dtype=float)
    if protocol.dephasing_preserving:
        F, dF, d2F = ff_instantaneous(protocol, omega)
    else:
        F, dF, d2F = ff_continuous_order2(protocol, omega, n_steps)
    return FilterProfile(omega, F, dF, d2F, 2)


def filter_derivs(protocol: ControlProtocol, omega, derivs=2, n_steps=None):
    if protocol.dephasing_preserving:
        return ff_instantaneous(protocol, omega, derivs)
    return ff_continuous_order2(protocol, omega, n_steps, derivs)


# ----------------------------------------------------------------------
# closed forms
def _sin_ratio_even(n: int, x):
    """``sin(n x) / cos(x)`` for even ``n`` as a finite sine sum (no poles)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for j in range(n // 2):
        out += (-1) ** j * np.sin((n - 1 - 2 * j) * x)
    return 2 * out


def ff_closed_form(kind: str, omega, *, kappa=None, omega_c: float = 1.0, M=None, T=None):
    """Analytic filter functions for free evolution, CPMG and the QNS comb."""
    w = np.asarray(omega, dtype=float)
    if kind == "free":
        if kappa is None or float(kappa) <= 0:
            raise ProtocolError("free evolution needs kappa > 0")
        T = float(kappa) * 2 * np.pi / omega_c
        return T ** 2 * np.sinc(w * T / (2 * np.pi)) ** 2
    if kind == "cpmg":
        from fractions import Fraction
        k = Fraction(str(kappa)) if not isinstance(kappa, Fraction) else kappa
        if k.denominator != 1 or k <= 0 or k.numerator % 2:
            raise ProtocolError("CPMG needs a positive even integer kappa")
        M, T = k.numerator // 2, float(k) * 2 * np.pi / omega_c
    elif kind != "qns":
        raise ProtocolError(f"no closed form for {kind!r}")
    if M is None or T is None or int(M) != M or M < 1 or not T > 0:
        raise ProtocolError("QNS comb needs integer M >= 1 and T > 0")
    M = int(M)
    y = w * T / (4 * M)
    # 16 sin^4(y/2) / w^2 written through sinc to stay finite at w = 0
    s4 = np.sin(y / 2) ** 2 * (T / (8 * M)) ** 2 * np.sinc(y / (2 * np.pi)) ** 2
    return 16 * s4 * _sin_ratio_even(2 * M, y) ** 2


# ----------------------------------------------------------------------
# fourth order
_PAIRINGS = (
    # (Z0 sign, Z0 freq tag), ordered factors as (sigma, freq tag)
    ((-1, "-w"), (+1, "v"), (-1, "-v")),
    ((-1, "v"), (+1, "-w"), (-1, "-v")),
    ((-1, "v"), (+1, "-v"), (-1, "-w")),
)


def _freq(tag, w, v):
    return {"w": w, "-w": -w, "v": v, "-v": -v}[tag]


def _q_terms(w1, w2):
    """Yield (z0_omega, ordered factor list) for every sign choice and pairing."""
    for s in (1, -1):
        for s2 in (1, -1):
            w, v = s * w1, s2 * w2
            for pairing in _PAIRINGS:
                yield w, [(sig, _freq(tag, w, v)) for sig, tag in pairing]


def _max_step(seg: Segments, freqs, scale=0.5):
    wmax = max(abs(complex(f)) for f in freqs) + 2 * float(np.max(np.abs(seg.rate)))
    return None if wmax == 0 else scale / wmax


def ff_continuous_order4(protocol: ControlProtocol, omega1, omega2, n_steps: int | None = None) -> float:
    """Fourth-order filter function ``F4(w1, w2)``, normalized so that pi-pulse
    sequences give ``3 F(w1) F(w2)``.

    Built from the Gaussian pairings of the fourth-order survival term; each
    pairing is a full-time integral times a time-ordered triple integral.
    """
    protocol = _resample(protocol, n_steps)
    T = protocol.duration
    base = build_segments(protocol)
    seg = build_segments(protocol, _max_step(base, (omega1, omega2)))
    return float(1.5 * (_q_value(seg, T, omega1, omega2) + _q_value(seg, T, omega2, omega1)))


def _q_value(seg, T, w1, w2) -> float:
    tot = 0.0 + 0.0j
    cache = {}
    for w, factors in _q_terms(w1, w2):
        if w not in cache:
            cache[w] = amplitude_derivs(seg, T, [w], 0, sigma=1)[0, 0]
        tot += cache[w] * _ordered.ordered_integral(seg, T, factors)
    return 0.5 * tot.real


def ff4_diag_d2(protocol: ControlProtocol, omega_c: float, n_steps=None, step: float | None = None):
    """Second derivative of ``F4(w, omega_c)`` in its first argument at ``omega_c``
    by central differences."""
    h = step if step is not None else 1e-3 * omega_c
    f = lambda w: ff_continuous_order4(protocol, w, omega_c, n_steps)
    return (f(omega_c + h) - 2 * f(omega_c) + f(omega_c - h)) / h ** 2


def ff4_sum(protocol: ControlProtocol, freqs, n_steps=None) -> float:
    """``sum_{j,k} F4(w_j, w_k)`` over the listed tone frequencies."""
    tot = 0.0
    for i, a in enumerate(freqs):
        for j, b in enumerate(freqs):
            if j < i:
                continue
            v = ff_continuous_order4(protocol, a, b, n_steps)
            tot += v if i == j else 2 * v
    return tot


# ----------------------------------------------------------------------
# overlaps
def _envelope_constant(protocol: ControlProtocol) -> float:
    """K with F2(w) <= K^2 / w^2 (integration by parts bound)."""
    jumps = np.sum(np.abs(2 * np.sin(protocol.impulse_angles / 2)))  # |1 - e^{i a}|
    drive = 0.0
    if protocol.samples is not None:
        drive = 2 * np.sum(np.abs(protocol.samples)) * protocol.duration / protocol.samples.size
    return 2.0 + jumps + drive


def _gl_panels(edges, nodes):
    x, wts = roots_legendre(nodes)
    a, b = edges[:-1, None], edges[1:, None]
    pts = 0.5 * (b - a) * x + 0.5 * (b + a)
    return pts.ravel(), (0.5 * (b - a) * wts).ravel()


def _lorentz_chi_quad(protocol: ControlProtocol, noise: LorentzianNoise, rtol=1e-10):
    T = protocol.duration
    W = noise.fwhm
    K = _envelope_constant(protocol)
    g2 = noise.strength ** 2

    def ff(w):
        return filter_derivs(protocol, w, 0)[0]

    # start window from the peak scale, extend until the tail bound is negligible
    omega_max = max(50.0 / T, 20 * W, 4 * protocol.omega_c) + 4 * float(
        np.max(np.abs(protocol.samples)) if protocol.samples is not None else 0.0)
    step = np.pi / (2 * T)
    # geometric panels resolve the peak and its 1/w^2 shoulder down to the uniform step
    hi = max(4 * W, step)
    near = np.geomspace(1e-3 * W, hi, int(np.ceil(8 * np.log10(hi / (1e-3 * W)))) + 1)
    for _ in range(40):
        edges = np.unique(np.concatenate([[0.0], near[near < omega_max],
                                          np.arange(step, omega_max, step), [omega_max]]))
        pts, wts = _gl_panels(edges, 20)
        vals = noise.psd(pts) * ff(pts)
        part = (2 / np.pi) * np.sum(wts * vals)
        pts2, wts2 = _gl_panels(edges, 12)
        part2 = (2 / np.pi) * np.sum(wts2 * noise.psd(pts2) * ff(pts2))
        tail = g2 * W * K ** 2 / (3 * np.pi ** 2 * omega_max ** 3)
        if tail <= 1e-8 * max(part, 1e-300) or tail < 1e-300:
            err = abs(part - part2)
            if err > 1e-6 * max(abs(part), 1e-300) and err > 1e-14:
                raise QuadratureError(
                    f"Lorentzian overlap did not converge: panel estimates {part!r} vs {part2!r}")
            return part, {"omega_max": omega_max, "tail_bound": tail, "panel_error": err,
                          "n_nodes": pts.size}
        omega_max *= 2
    raise QuadratureError(f"tail bound {tail:.3e} still above tolerance at omega_max={omega_max}")


def lorentzian_chi_time_domain(protocol: ControlProtocol, noise: LorentzianNoise) -> float:
    """chi_lambda = 4 Re int_{t1>t2} C(t1-t2) u(t1) conj(u(t2)) via ordered integrals."""
    W = noise.fwhm
    T = protocol.duration
    base = build_segments(protocol)
    seg = build_segments(protocol, _max_step(base, (0.5j * W,)))
    J = _ordered.ordered_integral(seg, T, [(1, 0.5j * W), (-1, -0.5j * W)])
    return float(4 * (noise.strength ** 2 / (2 * np.pi)) * J.real)


def overlap_chi(protocol: ControlProtocol, model, method: str = "auto") -> OverlapResult:
    """Decay exponent for a two-tone signal or a noise model.

    Two-tone: ``2 g^2 [F(w1) + F(w2)]``.  Lorentzian: ``(2/pi) int_0^inf S F``,
    by frequency quadrature (``method="quadrature"``) or the equivalent exact
    time-domain double integral (``"time"``).  ``"auto"`` uses quadrature for
    pi-pulse sequences and the time domain for driven protocols, whose slowly
    decaying envelope makes the frequency tail expensive.
    White: ``2 Gamma T`` for any control.
    """
    if isinstance(model, TwoToneSignal):
        w = np.array([model.omega1, model.omega2])
        F = filter_derivs(protocol, w, 0)[0]
        return OverlapResult(float(2 * model.g ** 2 * F.sum()),
                             {"F_omega1": float(F[0]), "F_omega2": float(F[1])})
    if isinstance(model, WhiteNoise):
        return OverlapResult(2 * model.strength * protocol.duration, {"exact": True})
    if isinstance(model, NoNoise) or getattr(model, "strength", 0.0) == 0.0:
        return OverlapResult(0.0, {})
    if isinstance(model, LorentzianNoise):
        if method == "auto":
            method = "quadrature" if protocol.samples is None else "time"
        if method == "time":
            return OverlapResult(lorentzian_chi_time_domain(protocol, model), {"method": "time"})
        if method != "quadrature":
            raise ValueError(f"unknown overlap method {method!r}")
        chi, info = _lorentz_chi_quad(protocol, model)
        return OverlapResult(float(chi), info)
    raise TypeError(f"unsupported spectral model {type(model).__name__}")


def lorentzian_shape_constant(kind: str, kappa, w_tilde: float) -> float:
    """Dimensionless Lorentzian overlap integrals over the real line.

    free: ``int sin^2(k w) / (w^2 (4 w^2 + Wt^2))``;
    cpmg: ``4 int sin^4(w/2) sec^2(w) sin^2(k w) / (w^2 (4 w^2 + Wt^2))``.
    """
    from scipy.integrate import quad

    k = float(kappa)
    if w_tilde < 0:
        raise ValueError("w_tilde must be nonnegative")
    if kind == "free":
        if w_tilde == 0:
            return np.inf

        def f(w):
            return (k * np.sinc(k * w / np.pi)) ** 2 / (4 * w * w + w_tilde ** 2)
    elif kind == "cpmg":
        if k != int(k) or int(k) % 2:
            raise ProtocolError("CPMG shape constant needs even integer kappa")
        n = int(k)

        def f(w):
            s = np.sin(w / 2) ** 2 * (0.5 * np.sinc(w / (2 * np.pi))) ** 2
            return 4 * s * _sin_ratio_even(n, w) ** 2 / (4 * w * w + w_tilde ** 2)
    else:
        raise ProtocolError(f"unknown kind {kind!r}")
    # integrand is even; integrate on [0, L] by periods, bound the tail
    period = np.pi
    L = 400 * period
    tot = 0.0
    for a in np.arange(0, L, period):
        v, _ = quad(f, a, a + period, limit=200, epsabs=1e-15, epsrel=1e-13)
        tot += v
    # tail: integrand <= C / w^4 with C the numerator bound
    c = 1.0 if kind == "free" else 4 * (2 * (n // 2)) ** 2
    tail = c / (12 * L ** 3)
    return float(2 * (tot + 0.5 * tail))


def _jumps(protocol: ControlProtocol):
    """Jump times and sizes of the switching function, boundaries included."""
    t = np.concatenate(([0.0], protocol.impulse_times, [protocol.duration]))
    y = np.cos(np.concatenate(([0.0], np.cumsum(protocol.impulse_angles))))
    y = np.concatenate(([0.0], y, [0.0]))
    return t, np.diff(y)


def ff_integral(protocol: ControlProtocol, omega_max: float | None = None, nodes: int = 16) -> float:
    """``int F dw`` over the real line for a pi-pulse sequence.

    Gauss-Legendre panels on ``[0, omega_max]``; the remainder uses
    ``F = |sum_k d_k exp(i w t_k)|^2 / w^2`` integrated exactly with sine/cosine integrals.
    """
    from scipy.special import sici

    if not protocol.dephasing_preserving:
        raise ProtocolError("ff_integral needs a dephasing-preserving protocol")
    T = protocol.duration
    t, d = _jumps(protocol)
    if omega_max is None:
        omega_max = 200 * np.pi * max(t.size, 2) / T
    n_pan = int(np.ceil(omega_max * T / np.pi))
    x, w = _gl_panels(np.linspace(0.0, omega_max, n_pan + 1), nodes)
    head = float(np.sum(w * ff_instantaneous(protocol, x, derivs=0)[0]))
    # tail of cos(a w) / w^2 from omega_max to infinity
    a = np.abs(t[:, None] - t[None, :])
    si, _ = sici(a * omega_max)
    tail_k = np.cos(a * omega_max) / omega_max - a * (np.pi / 2 - si)
    tail = float(d @ tail_k @ d)
    return 2.0 * (head + tail)
