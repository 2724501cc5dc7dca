"""Stationary Gaussian signal and noise models.

PSD convention: ``S(w) = int exp(-i w t) C(t) dt`` and
``C(t) = (1/2 pi) int S(w) exp(i w t) dw``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import ou_recursion


class ParameterError(ValueError):
    pass


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class TwoToneSignal:
    """Two tones at ``omega_c -/+ delta_omega/2`` with Gaussian quadratures."""

    g: float
    omega_c: float
    delta_omega: float = 0.0

    def __post_init__(self):
        if self.omega_c <= 0:
            raise ParameterError("omega_c must be positive")
        if self.delta_omega < 0:
            raise ParameterError("delta_omega must be nonnegative")
        if self.omega1 <= 0:
            raise ParameterError("omega_c - delta_omega/2 must be positive")
        if self.g < 0:
            raise ParameterError("g must be nonnegative")

    @property
    def omega1(self) -> float:
        return self.omega_c - self.delta_omega / 2

    @property
    def omega2(self) -> float:
        return self.omega_c + self.delta_omega / 2

    kind = "two_tone"

    def psd(self, omega):
        # purely singular: the smooth part vanishes
        return np.zeros_like(np.asarray(omega, dtype=float))

    def masses(self):
        """Positive-frequency Dirac masses as (location, weight)."""
        w = np.pi * self.g ** 2
        return [(self.omega1, w), (self.omega2, w)]

    def autocorrelation(self, tau):
        tau = np.asarray(tau, dtype=float)
        return self.g ** 2 * (np.cos(self.omega1 * tau) + np.cos(self.omega2 * tau))

    def with_delta(self, delta_omega) -> "TwoToneSignal":
        return TwoToneSignal(self.g, self.omega_c, delta_omega)

    def to_dict(self):
        return {"kind": "two_tone", "g": self.g, "omega_c": self.omega_c,
                "delta_omega": self.delta_omega}


@dataclass(frozen=True)
class SignalRealization:
    a1: float
    a2: float
    b1: float
    b2: float

    def as_array(self):
        return np.array([self.a1, self.a2, self.b1, self.b2])


def sample_signal(signal: TwoToneSignal, rng_seed=None) -> SignalRealization:
    return SignalRealization(*_rng(rng_seed).standard_normal(4))


def sample_signal_batch(n: int, rng_seed=None) -> np.ndarray:
    """``(n, 4)`` array of (a1, a2, b1, b2) draws."""
    return _rng(rng_seed).standard_normal((n, 4))


@dataclass(frozen=True)
class NoNoise:
    kind = "none"
    strength = 0.0
    fwhm = 0.0

    def psd(self, omega):
        return np.zeros_like(np.asarray(omega, dtype=float))

    def autocorrelation(self, tau):
        return np.zeros_like(np.asarray(tau, dtype=float))

    def to_dict(self):
        return {"kind": "none"}


@dataclass(frozen=True)
class WhiteNoise:
    """Flat PSD ``Gamma``."""

    strength: float
    kind = "white"
    fwhm = np.inf

    def __post_init__(self):
        if self.strength < 0:
            raise ParameterError("white-noise strength must be nonnegative")

    def psd(self, omega):
        return np.full_like(np.asarray(omega, dtype=float), self.strength)

    def autocorrelation(self, tau):
        raise NotImplementedError("white noise has a delta autocorrelation; "
                                  "its decay exponent is handled in closed form")

    def to_dict(self):
        return {"kind": "white", "strength": self.strength}


@dataclass(frozen=True)
class LorentzianNoise:
    """``S(w) = (g_l^2 / pi) 2W / (4 w^2 + W^2)``, ``C(t) = g_l^2/(2 pi) exp(-W|t|/2)``."""

    strength: float
    fwhm: float
    kind = "lorentzian"

    def __post_init__(self):
        if self.strength < 0:
            raise ParameterError("noise strength must be nonnegative")
        if not self.fwhm > 0:
            raise ParameterError("Lorentzian FWHM must be positive")

    def psd(self, omega):
        w = np.asarray(omega, dtype=float)
        W = self.fwhm
        return (self.strength ** 2 / np.pi) * 2 * W / (4 * w * w + W * W)

    def autocorrelation(self, tau):
        tau = np.asarray(tau, dtype=float)
        return self.strength ** 2 / (2 * np.pi) * np.exp(-0.5 * self.fwhm * np.abs(tau))

    @property
    def variance(self) -> float:
        return self.strength ** 2 / (2 * np.pi)

    def to_dict(self):
        return {"kind": "lorentzian", "strength": self.strength, "fwhm": self.fwhm}


def psd_value(model, omega):
    return model.psd(omega)


def autocorrelation(model, tau):
    return model.autocorrelation(tau)


def noise_from_dict(d: dict | None):
    if not d or d.get("kind", "none") == "none":
        return NoNoise()
    kind = d["kind"]
    if kind == "white":
        return WhiteNoise(float(d["strength"]))
    if kind == "lorentzian":
        if float(d.get("strength", 0.0)) == 0.0 and float(d.get("fwhm", 0.0)) == 0.0:
            return NoNoise()
        return LorentzianNoise(float(d["strength"]), float(d["fwhm"]))
    raise ParameterError(f"unknown noise kind {kind!r}")


def model_from_dict(d: dict):
    if d.get("kind") == "two_tone":
        return TwoToneSignal(float(d["g"]), float(d.get("omega_c", 1.0)),
                             float(d.get("delta_omega", 0.0)))
    return noise_from_dict(d)


@dataclass(frozen=True)
class NoisePath:
    grid: np.ndarray
    values: np.ndarray


def _check_grid(grid):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ParameterError("noise grid needs at least two points")
    d = np.diff(grid)
    if np.any(d <= 0) or np.ptp(d) > 1e-9 * d.mean():
        raise ParameterError("noise grid must be uniform and increasing")
    return grid, float(d.mean())


def sample_noise_paths(noise, grid, n_paths: int, rng_seed=None) -> np.ndarray:
    """``(n_paths, len(grid))`` stationary Lorentzian paths via the exact AR(1) map."""
    grid, dt = _check_grid(grid)
    if isinstance(noise, NoNoise) or noise.strength == 0.0:
        return np.zeros((n_paths, grid.size))
    if not isinstance(noise, LorentzianNoise):
        raise ParameterError("only Lorentzian noise is sampled as a path")
    rho = np.exp(-0.5 * noise.fwhm * dt)
    sd = np.sqrt(noise.variance)
    xi = _rng(rng_seed).standard_normal((n_paths, grid.size))
    return ou_recursion(xi, rho, sd)


def sample_noise_path(noise, grid, rng_seed=None) -> NoisePath:
    grid, _ = _check_grid(grid)
    return NoisePath(grid, sample_noise_paths(noise, grid, 1, rng_seed)[0])
