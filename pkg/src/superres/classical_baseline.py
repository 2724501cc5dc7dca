"""Classical Fisher information for blocks of direct samples of the signal.

A block takes ``M`` samples ``s = g D a + g_l lam`` at fixed quadratures ``a``;
``N`` samples form ``N / M`` independent blocks.  The block is Gaussian with
covariance ``Sigma = g^2 D D^T + g_l^2 V^{-1}`` and
``FI = (N / M) Tr[(Sigma^{-1} Sigma')^2] / 2``.
Noise covariance: ``(V^{-1})_ij = exp(-W pi |t_i - t_j|)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

CONDITION_LIMIT = 1e12


class CovarianceError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class MeasurementBlock:
    times: np.ndarray
    g: float = 1.0
    g_lambda: float = 0.0
    fwhm: float = 0.1
    omega_c: float = 1.0
    delta_omega: float = 0.1
    duration: float | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", t)
        if t.ndim != 1 or t.size < 1:
            raise ValueError("times must be a nonempty 1-d array")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        if t[0] < 0 or (self.duration is not None and t[-1] > self.duration * (1 + 1e-12)):
            raise ValueError("times must lie in [0, duration]")
        if self.g < 0 or self.g_lambda < 0:
            raise ValueError("amplitudes must be nonnegative")

    @property
    def M(self) -> int:
        return self.times.size

    def with_delta(self, delta_omega) -> "MeasurementBlock":
        return MeasurementBlock(self.times, self.g, self.g_lambda, self.fwhm, self.omega_c,
                                delta_omega, self.duration)

    def with_noise(self, g_lambda) -> "MeasurementBlock":
        return MeasurementBlock(self.times, self.g, g_lambda, self.fwhm, self.omega_c,
                                self.delta_omega, self.duration)


def uniform_block(M: int, kappa=1.0, omega_c: float = 1.0, offset: int = 0, **kw) -> MeasurementBlock:
    """Times ``t_m = (m - 1 + offset) kappa tau / M`` for ``m = 1..M``."""
    T = float(kappa) * 2 * math.pi / omega_c
    t = (np.arange(M) + offset) * T / M
    return MeasurementBlock(t, omega_c=omega_c, duration=T, **kw)


@dataclass
class BlockCovariance:
    D: np.ndarray
    dD: np.ndarray
    V_inv: np.ndarray
    Sigma: np.ndarray
    dSigma: np.ndarray
    flags: dict = field(default_factory=dict)


def design_matrix(block: MeasurementBlock, derivative: bool = False):
    """Rows ``(cos w1 t, cos w2 t, sin w1 t, sin w2 t)``; optionally also the
    derivative with respect to the separation."""
    t = block.times
    w1 = block.omega_c - block.delta_omega / 2
    w2 = block.omega_c + block.delta_omega / 2
    c1, c2, s1, s2 = np.cos(w1 * t), np.cos(w2 * t), np.sin(w1 * t), np.sin(w2 * t)
    D = np.column_stack([c1, c2, s1, s2])
    if not derivative:
        return D
    h = t / 2
    dD = np.column_stack([h * s1, -h * s2, -h * c1, h * c2])
    return D, dD


def noise_covariance(block: MeasurementBlock) -> np.ndarray:
    t = block.times
    return np.exp(-block.fwhm * math.pi * np.abs(t[:, None] - t[None, :]))


def block_covariance(block: MeasurementBlock) -> BlockCovariance:
    if block.g == 0 and block.g_lambda == 0:
        raise CovarianceError("covariance is singular when g = g_lambda = 0")
    D, dD = design_matrix(block, derivative=True)
    Vi = noise_covariance(block)
    g2 = block.g ** 2
    S = g2 * D @ D.T + block.g_lambda ** 2 * Vi
    dS = g2 * (dD @ D.T + D @ dD.T)
    return BlockCovariance(D, dD, Vi, S, dS, {"cond": float(np.linalg.cond(S))})


def woodbury_inverse(block: MeasurementBlock) -> np.ndarray:
    """``Sigma^{-1}`` at ``g = 1`` via ``sigma - gl^2 sigma (V + gl^2 sigma)^{-1} sigma``,
    ``sigma = D^{-T} D^{-1}`` (square invertible ``D`` only)."""
    D = design_matrix(block)
    if D.shape[0] != D.shape[1]:
        raise ValueError("Woodbury route needs a square design matrix")
    Di = np.linalg.inv(D)
    sig = Di.T @ Di
    V = np.linalg.inv(noise_covariance(block))
    gl2 = block.g_lambda ** 2
    return sig - gl2 * sig @ np.linalg.solve(V + gl2 * sig, sig)


def closed_form_kappa1(delta_omega, omega_c: float = 1.0, n: float = 1.0):
    """Noiseless four-sample block over one period:
    ``N pi^2 / (8 wc^2) (2 csc^2(pi dw / (2 wc)) - 1)``."""
    x = np.pi * np.asarray(delta_omega, float) / (2 * omega_c)
    return n * np.pi ** 2 / (8 * omega_c ** 2) * (2 / np.sin(x) ** 2 - 1)


@dataclass
class BlockFI:
    value: float
    flags: dict = field(default_factory=dict)


def block_fisher_information(block: MeasurementBlock, n: float = 1.0) -> BlockFI:
    """``(n / M) Tr[(Sigma^{-1} Sigma')^2] / 2``.

    Noiseless square blocks use ``X = D^{-1} D'`` so ``Tr[(X + X^T)^2] / 2``
    (independent of ``g``); ill-conditioned designs are flagged.
    """
    M = block.M
    flags = {}
    if block.g_lambda == 0 and M == 4:
        D, dD = design_matrix(block, derivative=True)
        cond = np.linalg.cond(D)
        flags["cond"] = float(cond)
        if not np.isfinite(cond) or cond > CONDITION_LIMIT:
            flags["degenerate"] = True
            return BlockFI(math.nan, flags)
        X = np.linalg.solve(D, dD)
        Y = X + X.T
        return BlockFI(float(n / M * 0.5 * np.sum(Y * Y.T)), flags)
    cov = block_covariance(block)
    flags["cond"] = cov.flags["cond"]
    if cov.flags["cond"] > CONDITION_LIMIT:
        flags["degenerate"] = True
        ridge = 1e-12 * np.trace(cov.Sigma)
        S = cov.Sigma + ridge * np.eye(M)
        flags["ridge"] = ridge
    else:
        S = cov.Sigma
    Z = np.linalg.solve(S, cov.dSigma)
    return BlockFI(float(n / M * 0.5 * np.sum(Z * Z.T)), flags)


def single_sample_density(s, delta_omega, t: float, g: float = 1.0, g_lambda: float = 0.0,
                          omega_c: float = 1.0) -> np.ndarray:
    """Density of one sample at time ``t``, by numerical Fourier inversion of the
    product of per-quadrature characteristic functions."""
    from scipy.integrate import quad

    w1, w2 = omega_c - delta_omega / 2, omega_c + delta_omega / 2
    row = np.array([math.cos(w1 * t), math.cos(w2 * t), math.sin(w1 * t), math.sin(w2 * t)])
    var_terms = np.concatenate([(g * row) ** 2, [g_lambda ** 2]])

    def phi(k):
        return math.prod(math.exp(-0.5 * v * k * k) for v in var_terms)

    out = []
    for x in np.atleast_1d(s):
        val, _ = quad(lambda k: phi(k) * math.cos(k * x), 0, np.inf, epsabs=1e-14, epsrel=1e-12,
                      limit=400)
        out.append(val / math.pi)
    return np.array(out)


@dataclass
class FisherCurve:
    g_lambda: float
    delta_omega: np.ndarray
    fi_over_n: np.ndarray
    flags: list


def fisher_sweep(template: MeasurementBlock, delta_omegas, g_lambdas) -> list[FisherCurve]:
    """FI per sample across separations for each noise strength."""
    curves = []
    for gl in g_lambdas:
        vals, flags = [], []
        for dw in delta_omegas:
            r = block_fisher_information(template.with_noise(gl).with_delta(float(dw)), 1.0)
            vals.append(r.value)
            flags.append(r.flags)
        curves.append(FisherCurve(float(gl), np.asarray(delta_omegas, float), np.array(vals), flags))
    return curves


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])
