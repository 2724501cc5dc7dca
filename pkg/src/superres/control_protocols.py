"""Control waveforms: impulse sequences plus optional piecewise-constant drive.

A protocol lives on ``[0, T]`` with ``T = kappa * 2 pi / omega_c``.  The drive
``c(t)`` multiplies ``sigma_x``; an impulse of angle ``a`` is the rotation
``exp(-i a/2 sigma_x)`` and therefore advances the control phase
``theta_c`` by ``a/2``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

KINDS = ("free", "cpmg", "qns", "c1", "custom")
DEFAULT_STEPS = 2048


class ProtocolError(ValueError):
    pass


def _as_fraction(kappa) -> Fraction:
    if isinstance(kappa, Fraction):
        return kappa
    if isinstance(kappa, str):
        return Fraction(kappa)
    if isinstance(kappa, int):
        return Fraction(kappa)
    # floats like 2.5 come from JSON; keep them exact when they are short decimals
    return Fraction(str(kappa)).limit_denominator(10**6)


@dataclass(frozen=True, eq=False)
class ControlProtocol:
    """Immutable control protocol.

    Parameters
    ----------
    kind : str
        Constructor tag, one of ``KINDS``.
    duration : float
        Total evolution time ``T``.
    omega_c : float
        Reference angular frequency used to express ``T`` as ``kappa * 2 pi / omega_c``.
    impulses : tuple of (time, angle)
        Instantaneous x rotations, strictly increasing times inside ``(0, T)``.
    samples : ndarray or None
        Piecewise-constant drive amplitude on a uniform grid over ``[0, T]``.
    kappa : Fraction or None
        Exact ``T omega_c / 2 pi`` when rational.
    """

    kind: str
    duration: float
    omega_c: float
    impulses: tuple = ()
    samples: np.ndarray | None = None
    kappa: Fraction | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ProtocolError(f"unknown protocol kind {self.kind!r}")
        if not (self.duration > 0 and np.isfinite(self.duration)):
            raise ProtocolError("duration must be positive")
        if not self.omega_c > 0:
            raise ProtocolError("omega_c must be positive")
        imp = tuple((float(t), float(a)) for t, a in self.impulses)
        times = [t for t, _ in imp]
        if any(not (0.0 < t < self.duration) for t in times):
            raise ProtocolError("impulse times must lie strictly inside (0, T)")
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise ProtocolError("impulse times must be strictly increasing")
        object.__setattr__(self, "impulses", imp)
        if self.samples is not None:
            s = np.array(self.samples, dtype=float).ravel()
            if s.size < 1 or not np.all(np.isfinite(s)):
                raise ProtocolError("continuous samples must be finite and nonempty")
            s.setflags(write=False)
            object.__setattr__(self, "samples", s)

    # ------------------------------------------------------------------
    @property
    def dephasing_preserving(self) -> bool:
        return self.samples is None and all(np.isclose(a, np.pi, rtol=0, atol=1e-12)
                                            for _, a in self.impulses)

    @property
    def impulse_times(self) -> np.ndarray:
        return np.array([t for t, _ in self.impulses], dtype=float)

    @property
    def impulse_angles(self) -> np.ndarray:
        return np.array([a for _, a in self.impulses], dtype=float)

    @property
    def n_steps(self) -> int:
        return 0 if self.samples is None else self.samples.size

    def with_samples(self, samples, kind="custom") -> "ControlProtocol":
        return ControlProtocol(kind, self.duration, self.omega_c, self.impulses,
                               np.asarray(samples, dtype=float), self.kappa, dict(self.meta))

    def segments(self, max_step: float | None = None) -> "Segments":
        return build_segments(self, max_step)

    # ------------------------------------------------------------------
    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "kappa": None if self.kappa is None else str(self.kappa),
            "omega_c": self.omega_c,
            "duration": self.duration,
            "impulses": [[t, a] for t, a in self.impulses],
            "samples": None if self.samples is None else self.samples.tolist(),
        }
        if self.meta:
            d["meta"] = dict(self.meta)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ControlProtocol":
        """Build from the JSON form.

        Named kinds may be given by parameters only (``{"kind": "cpmg", "kappa": 2}``);
        explicit ``impulses``/``samples`` are used verbatim when present.
        """
        kind = d.get("kind", "custom")
        omega_c = float(d.get("omega_c", 1.0))
        explicit = d.get("impulses") is not None or d.get("samples") is not None
        if not explicit and kind != "custom":
            if kind == "free":
                return make_free(d["kappa"], omega_c)
            if kind == "cpmg":
                return make_cpmg(d["kappa"], omega_c)
            if kind == "c1":
                return make_c1(d["kappa"], omega_c, n_steps=int(d.get("n_steps", DEFAULT_STEPS)))
            if kind == "qns":
                T = d.get("duration")
                if T is None:
                    T = float(_as_fraction(d["kappa"])) * 2 * np.pi / omega_c
                return make_qns_comb(int(d["M"]), float(T), omega_c)
        kappa = d.get("kappa")
        kappa = None if kappa is None else _as_fraction(kappa)
        if "duration" in d:
            T = float(d["duration"])
        elif kappa is not None:
            T = float(kappa) * 2 * np.pi / omega_c
        else:
            raise ProtocolError("protocol needs kappa or duration")
        samples = d.get("samples")
        return cls(kind, T, omega_c, tuple(map(tuple, d.get("impulses") or ())),
                   None if samples is None else np.asarray(samples, float), kappa,
                   dict(d.get("meta", {})))


def _period(omega_c):
    return 2 * np.pi / omega_c


def make_free(kappa, omega_c=1.0) -> ControlProtocol:
    k = _as_fraction(kappa)
    if k <= 0:
        raise ProtocolError("kappa must be positive")
    return ControlProtocol("free", float(k) * _period(omega_c), float(omega_c), (), None, k)


def make_cpmg(kappa, omega_c=1.0) -> ControlProtocol:
    """Pi pulses at odd multiples of tau/2 over ``kappa`` periods; kappa must be even."""
    k = _as_fraction(kappa)
    if k.denominator != 1 or k <= 0 or k.numerator % 2:
        raise ProtocolError(f"CPMG needs a positive even integer kappa, got {kappa}")
    tau = _period(omega_c)
    # one pulse per period, at the odd multiples of tau/2 inside (0, T)
    times = (np.arange(k.numerator) + 0.5) * tau
    return ControlProtocol("cpmg", float(k) * tau, float(omega_c),
                           tuple((t, np.pi) for t in times), None, k)


def make_qns_comb(M: int, T: float, omega_c=1.0) -> ControlProtocol:
    """``2M`` pi pulses at ``(2j+1) T / (4M)``."""
    if int(M) != M or M < 1:
        raise ProtocolError("M must be a positive integer")
    if not T > 0:
        raise ProtocolError("T must be positive")
    M = int(M)
    times = (2 * np.arange(2 * M) + 1) * T / (4 * M)
    kappa = Fraction(T * omega_c / (2 * np.pi)).limit_denominator(10**6)
    if abs(float(kappa) * 2 * np.pi / omega_c - T) > 1e-12 * T:
        kappa = None
    return ControlProtocol("qns", float(T), float(omega_c),
                           tuple((t, np.pi) for t in times), None, kappa, {"M": M})


def make_c1(kappa, omega_c=1.0, n_steps: int = DEFAULT_STEPS) -> ControlProtocol:
    """Constant drive -1/2 with one pi impulse at T/2."""
    k = _as_fraction(kappa)
    if k.denominator != 1 or k <= 0:
        raise ProtocolError(f"c1 needs a positive integer kappa, got {kappa}")
    if n_steps < 2:
        raise ProtocolError("n_steps must be >= 2")
    T = float(k) * _period(omega_c)
    return ControlProtocol("c1", T, float(omega_c), ((T / 2, np.pi),),
                           np.full(n_steps, -0.5), k)


def make_custom(duration, omega_c=1.0, impulses: Sequence = (), samples=None) -> ControlProtocol:
    kappa = Fraction(duration * omega_c / (2 * np.pi)).limit_denominator(10**6)
    if abs(float(kappa) * 2 * np.pi / omega_c - duration) > 1e-12 * duration:
        kappa = None
    return ControlProtocol("custom", float(duration), float(omega_c), tuple(impulses),
                           None if samples is None else np.asarray(samples, float), kappa)


def random_pulse_sequence(rng: np.random.Generator, duration: float, n_max: int = 12,
                          omega_c: float = 1.0) -> ControlProtocol:
    n = int(rng.integers(0, n_max + 1))
    times = np.sort(rng.uniform(0, duration, n))
    times = times[(times > 1e-9 * duration) & (times < duration * (1 - 1e-9))]
    times = np.unique(times)
    return make_custom(duration, omega_c, [(t, np.pi) for t in times])


# ----------------------------------------------------------------------
@dataclass(frozen=True)
class Segments:
    """Piecewise description with linear phase on each piece.

    ``theta0[k]`` is the control phase at ``t0[k]`` (after any impulse there) and
    ``rate[k]`` the drive amplitude on ``[t0[k], t0[k] + h[k])``.  ``cell[k]``
    maps the piece back to its drive sample (``-1`` when there is no drive).
    """

    t0: np.ndarray
    h: np.ndarray
    theta0: np.ndarray
    rate: np.ndarray
    cell: np.ndarray
    jump_before: np.ndarray  # impulse half-angle applied at t0[k]


def build_segments(protocol: ControlProtocol, max_step: float | None = None) -> Segments:
    T = protocol.duration
    imp_t = protocol.impulse_times
    if protocol.samples is not None:
        n = protocol.samples.size
        grid = np.linspace(0.0, T, n + 1)
    else:
        n = 0
        grid = np.array([0.0, T])
    pts = np.union1d(grid, imp_t)
    # merge near-coincident points (impulse sitting on a grid node)
    keep = np.concatenate([[True], np.diff(pts) > 1e-12 * T])
    pts = pts[keep]
    pts[-1] = T
    if max_step is not None:
        widths = np.diff(pts)
        reps = np.maximum(1, np.ceil(widths / max_step).astype(int))
        if np.any(reps > 1):
            starts = np.repeat(pts[:-1], reps)
            sub = np.concatenate([np.arange(r) / r for r in reps])
            pts = np.append(starts + sub * np.repeat(widths, reps), T)
    t0 = pts[:-1]
    h = np.diff(pts)
    mid = t0 + h / 2
    if n:
        cell = np.minimum((mid / T * n).astype(int), n - 1)
        rate = protocol.samples[cell]
    else:
        cell = np.full(t0.size, -1)
        rate = np.zeros(t0.size)
    jump = np.zeros(t0.size)
    if imp_t.size:
        idx = np.searchsorted(t0, imp_t - 1e-12 * T)
        np.add.at(jump, idx, protocol.impulse_angles / 2)
    inc = rate * h
    theta0 = np.cumsum(jump) + np.concatenate([[0.0], np.cumsum(inc[:-1])])
    return Segments(t0, h, theta0, rate, cell, jump)


# ----------------------------------------------------------------------
@dataclass(frozen=True)
class SwitchingFunction:
    breakpoints: np.ndarray
    duration: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        flips = np.searchsorted(self.breakpoints, t, side="right")
        return np.where(flips % 2 == 0, 1.0, -1.0)


def switching_function(protocol: ControlProtocol) -> SwitchingFunction:
    if not protocol.dephasing_preserving:
        raise ProtocolError("switching function needs a dephasing-preserving protocol; "
                            "use phase_accumulator for continuous or non-pi controls")
    return SwitchingFunction(protocol.impulse_times, protocol.duration)


@dataclass(frozen=True)
class PhaseAccumulator:
    """theta_c sampled on a uniform grid (right limits at impulse times)."""

    times: np.ndarray
    theta: np.ndarray
    _seg: Segments

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        s = self._seg
        k = np.clip(np.searchsorted(s.t0, t, side="right") - 1, 0, s.t0.size - 1)
        return s.theta0[k] + s.rate[k] * (t - s.t0[k])

    @property
    def final(self) -> float:
        s = self._seg
        return float(s.theta0[-1] + s.rate[-1] * s.h[-1])


def phase_accumulator(protocol: ControlProtocol, n_steps: int = DEFAULT_STEPS) -> PhaseAccumulator:
    if n_steps < 2:
        raise ProtocolError("n_steps must be >= 2")
    seg = build_segments(protocol)
    times = np.linspace(0.0, protocol.duration, n_steps + 1)
    acc = PhaseAccumulator(times, np.empty(0), seg)
    theta = acc(times)
    theta[-1] = acc.final
    return PhaseAccumulator(times, theta, seg)
