"""Shot-level simulation of the sensing protocol and RMSE sweeps.

Every shot draws a fresh signal realization (four Gaussian quadratures) and,
when present, a noise realization; the survival probability of that shot is
computed from the evolution and an outcome is drawn from it.

Pi-pulse protocols keep the evolution diagonal in the toggling frame, so a
shot reduces to an accumulated phase ``phi`` with survival ``cos^2(Ne phi)``.
Other protocols are integrated as a product of exact per-cell SU(2)
propagators.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .control_protocols import ControlProtocol, build_segments
from .estimation_theory import (ProtocolAnalysis, estimate_array, expansion_coefficients,
                                measurement_budget, n_free)
from .filter_functions import lorentzian_chi_time_domain, overlap_chi
from .kernels import su2_survival
from .signal_models import LorentzianNoise, NoNoise, TwoToneSignal, WhiteNoise, sample_noise_paths

DEFAULT_NOISE_GRID = 4096
N_CAP = 10 ** 6


def make_rng(root_seed: int, *key: int) -> np.random.Generator:
    """Counter-keyed generator: results depend on (root, key), never on call order."""
    return np.random.default_rng(np.random.SeedSequence(root_seed, spawn_key=tuple(int(k) for k in key)))


def _cell_trig(a, b, w):
    """Exact integrals of cos(w t) and sin(w t) over [a, b]."""
    return (np.sin(w * b) - np.sin(w * a)) / w, (np.cos(w * a) - np.cos(w * b)) / w


@dataclass
class ShotEngine:
    """Immutable description of one experiment cell.

    ``noise_mode`` is ``"path"`` (sample the noise process on a grid of
    ``noise_grid`` cells) or ``"projected"`` (sample the noise phase from its exact
    Gaussian marginal; pi-pulse protocols only).
    """

    protocol: ControlProtocol
    signal: TwoToneSignal
    noise: object = field(default_factory=NoNoise)
    n_entangled: int = 1
    noise_grid: int = DEFAULT_NOISE_GRID
    noise_mode: str = "path"
    n_cells: int | None = None

    def __post_init__(self):
        if self.n_entangled < 1:
            raise ValueError("n_entangled must be >= 1")
        if self.n_entangled > 1 and not self.protocol.dephasing_preserving:
            raise ValueError("entangled mode needs a dephasing-preserving protocol")
        if isinstance(self.noise, WhiteNoise):
            raise ValueError("white noise has no sample paths; use the closed-form survival")
        if self.noise_mode not in ("path", "projected"):
            raise ValueError(f"unknown noise_mode {self.noise_mode!r}")
        if self.noise_mode == "projected" and not self.protocol.dephasing_preserving:
            raise ValueError("projected noise needs a dephasing-preserving protocol")
        T = self.protocol.duration
        if self.protocol.dephasing_preserving:
            seg = build_segments(self.protocol)
            a, b = seg.t0, seg.t0 + seg.h
            sign = np.cos(2 * seg.theta0)  # +-1 switching function
            cols = []
            for w in (self.signal.omega1, self.signal.omega2):
                cols.append(_cell_trig(a, b, w))
            w = np.array([np.sum(sign * cols[0][0]), np.sum(sign * cols[1][0]),
                          np.sum(sign * cols[0][1]), np.sum(sign * cols[1][1])])
            object.__setattr__(self, "_weights", w * self.signal.g)
            object.__setattr__(self, "_seg", seg)
            object.__setattr__(self, "_sign", sign)
        else:
            n = self.n_cells or max(self.noise_grid, self.protocol.n_steps)
            seg = build_segments(self.protocol, T / n)
            object.__setattr__(self, "_seg", seg)
            a, b = seg.t0, seg.t0 + seg.h
            trig = [_cell_trig(a, b, w) for w in (self.signal.omega1, self.signal.omega2)]
            basis = np.array([trig[0][0], trig[1][0], trig[0][1], trig[1][1]]) * self.signal.g
            # impulses become zero-length cells with pure x rotation
            jumps = seg.jump_before
            idx = np.flatnonzero(jumps)
            order = np.insert(np.arange(seg.h.size), idx, -1)
            is_imp = order < 0
            xb = np.zeros(order.size)
            xb[~is_imp] = seg.rate * seg.h
            xb[is_imp] = jumps[idx]
            object.__setattr__(self, "_basis", basis)
            object.__setattr__(self, "_cell_cols", np.flatnonzero(~is_imp))
            object.__setattr__(self, "_xb", xb)
        self._noise_sd = 0.0
        if self.noise_mode == "projected" and not isinstance(self.noise, NoNoise) \
                and self.noise.strength > 0:
            chi = overlap_chi(self.protocol, self.noise).chi
            self._noise_sd = math.sqrt(chi / 2)

    @property
    def has_noise(self) -> bool:
        return not isinstance(self.noise, NoNoise) and self.noise.strength > 0

    # ------------------------------------------------------------------
    def _noise_integrals(self, n, rng):
        """Per-shot integrals of the noise over each segment, shape (n, n_segments)."""
        T = self.protocol.duration
        grid = np.linspace(0.0, T, self.noise_grid + 1)
        paths = sample_noise_paths(self.noise, grid, n, rng)
        seg = self._seg
        a, b = seg.t0, seg.t0 + seg.h
        pos_a = a / T * self.noise_grid
        pos_b = b / T * self.noise_grid
        out = np.empty((n, a.size))
        for k in range(a.size):
            # integrate the piecewise-linear path exactly over [a_k, b_k]
            out[:, k] = _pl_integral(paths, pos_a[k], pos_b[k]) * (T / self.noise_grid)
        return out

    def shot_phases(self, n: int, rng) -> np.ndarray:
        """Toggling-frame phases of ``n`` independent shots (pi-pulse protocols)."""
        amps = rng.standard_normal((n, 4))
        phi = amps @ self._weights
        if self.has_noise:
            if self.noise_mode == "projected":
                phi = phi + self._noise_sd * rng.standard_normal(n)
            else:
                lam = self._noise_integrals(n, rng)
                phi = phi + lam @ self._sign
        return phi

    def shot_probabilities(self, n: int, rng) -> np.ndarray:
        """Per-shot survival probabilities of ``n`` independent realizations."""
        if self.protocol.dephasing_preserving:
            return np.cos(self.n_entangled * self.shot_phases(n, rng)) ** 2
        amps = rng.standard_normal((n, 4))
        z = amps @ self._basis
        if self.has_noise:
            z = z + self._noise_integrals(n, rng)
        za = np.zeros((n, self._xb.size))
        za[:, self._cell_cols] = z
        return su2_survival(za, self._xb)

    def count_plus(self, n_shots: int, rng, chunk: int | None = None) -> int:
        chunk = chunk or (1 << 18 if self.protocol.dephasing_preserving else 1 << 11)
        total = 0
        left = n_shots
        while left > 0:
            m = min(chunk, left)
            p = self.shot_probabilities(m, rng)
            total += int(np.count_nonzero(rng.random(m) < p))
            left -= m
        return total


def _pl_integral(paths, xa, xb):
    """Integral over index positions [xa, xb] of the piecewise-linear interpolant."""
    n = paths.shape[1] - 1
    ia = min(int(math.floor(xa)), n - 1)
    ib = min(int(math.floor(xb)), n - 1)

    def val(x, i):
        f = x - i
        return paths[:, i] * (1 - f) + paths[:, i + 1] * f

    if ia == ib:
        return 0.5 * (val(xa, ia) + val(xb, ib)) * (xb - xa)
    tot = 0.5 * (val(xa, ia) + paths[:, ia + 1]) * (ia + 1 - xa)
    if ib > ia + 1:
        inner = paths[:, ia + 1:ib + 1]
        tot = tot + 0.5 * (inner[:, :-1] + inner[:, 1:]).sum(axis=1)
    tot = tot + 0.5 * (paths[:, ib] + val(xb, ib)) * (xb - ib)
    return tot


def run_shot(engine: ShotEngine, seed) -> int:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    p = engine.shot_probabilities(1, rng)[0]
    return int(rng.random() < p)


def run_shots(engine: ShotEngine, n: int, seed) -> np.ndarray:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    p = engine.shot_probabilities(n, rng)
    return (rng.random(n) < p).astype(np.int8)


def mean_survival(engine: ShotEngine, n: int, seed) -> tuple[float, float]:
    """Empirical mean outcome and its standard error over ``n`` shots."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    k = engine.count_plus(n, rng)
    p = k / n
    return p, math.sqrt(max(p * (1 - p), 1.0 / n) / n)


def basis_sweep(engine: ShotEngine, thetas, n: int, seed, azimuth: float = 0.3):
    """Empirical survival in the basis ``cos(t)|+> + e^{i az} sin(t)|->`` per angle.

    Returns (means, standard errors).  Pi-pulse protocols only.
    """
    if not engine.protocol.dephasing_preserving:
        raise ValueError("basis sweep uses the diagonal toggling-frame evolution")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    means, errs = [], []
    for th in np.atleast_1d(thetas):
        phi = engine.n_entangled * engine.shot_phases(n, rng)
        amp = np.cos(th) * np.cos(phi) - 1j * np.exp(-1j * azimuth) * np.sin(th) * np.sin(phi)
        p = np.abs(amp) ** 2
        k = np.count_nonzero(rng.random(n) < p)
        m = k / n
        means.append(m)
        errs.append(math.sqrt(max(m * (1 - m), 1.0 / n) / n))
    return np.array(means), np.array(errs)


def realization_average(engine: ShotEngine, delta_omegas, n: int, seed) -> np.ndarray:
    """Realization-averaged survival ``mean cos^2(Ne phi)`` at each separation,
    sharing the same Gaussian draws across separations (common random numbers)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    amps = rng.standard_normal((n, 4))
    out = []
    for dw in delta_omegas:
        e = ShotEngine(engine.protocol, engine.signal.with_delta(dw), engine.noise,
                       engine.n_entangled, engine.noise_grid, engine.noise_mode)
        phi = amps @ e._weights
        out.append(1.0 - np.mean(np.sin(engine.n_entangled * phi) ** 2))
    return np.array(out)


# ----------------------------------------------------------------------
@dataclass
class TrialRecord:
    protocol: str
    delta_omega: float
    n_shots: int
    repeat: int
    estimate: float
    rel_error: float
    seed: str
    negative_radicand: bool
    n_budget: int

    def as_row(self):
        return asdict(self)


@dataclass
class SweepSpec:
    label: str
    protocol: ControlProtocol
    g: float
    noise: object = field(default_factory=NoNoise)
    budget_rule: str = "N_free"          # N_free | N_CPMG | fixed
    fixed_n: int | None = None
    delta: float = 0.1
    kappa_budget: float = 2.0
    n_cap: int = N_CAP
    n_repeats: int = 100
    noise_mode: str = "projected"
    noise_grid: int = DEFAULT_NOISE_GRID
    estimator: str = "noiseless"         # noiseless | corrected


def _budget(spec: SweepSpec, analysis: ProtocolAnalysis, dw: float) -> int:
    wc = spec.protocol.omega_c
    if spec.budget_rule == "N_free":
        n = n_free(spec.g, spec.kappa_budget, spec.delta, dw, wc)
    elif spec.budget_rule == "N_CPMG":
        n = math.ceil(n_free(spec.g, spec.kappa_budget, spec.delta, dw, wc) / 4)
    elif spec.budget_rule == "own":
        n = measurement_budget(analysis, spec.delta, dw).n_shots
    elif spec.budget_rule == "fixed":
        n = int(spec.fixed_n)
    else:
        raise ValueError(f"unknown budget rule {spec.budget_rule!r}")
    return n


def _coefficients(spec: SweepSpec):
    noise = spec.noise if spec.estimator == "corrected" else None
    an = expansion_coefficients(spec.protocol, spec.g, noise)
    return an


def _run_cell(args):
    spec, an_ab, dw, i_dw, i_spec, root_seed, n_shots, n_budget = args
    a, b = an_ab
    sig = TwoToneSignal(spec.g, spec.protocol.omega_c, dw)
    eng = ShotEngine(spec.protocol, sig, spec.noise, noise_grid=spec.noise_grid,
                     noise_mode=spec.noise_mode if spec.protocol.dephasing_preserving else "path")
    recs = []
    for r in range(spec.n_repeats):
        key = (i_spec, i_dw, r)
        rng = make_rng(root_seed, *key)
        k = eng.count_plus(n_shots, rng)
        est, neg = estimate_array(a, b, k, n_shots)
        est = float(est)
        recs.append(TrialRecord(spec.label, dw, n_shots, r, est, abs(est - dw) / dw,
                                f"{root_seed}:{i_spec}:{i_dw}:{r}", bool(neg), n_budget))
    return recs


def rmse_sweep(specs, delta_omegas, root_seed: int = 0, threads: int = 1) -> list[TrialRecord]:
    """Simulate every (protocol, separation, repeat) cell and return trial records.

    Shot budgets above ``n_cap`` are capped; callers rescale relative errors by
    ``sqrt(n_shots / n_budget)`` to compare against the uncapped target.
    """
    if isinstance(specs, SweepSpec):
        specs = [specs]
    tasks = []
    for i_spec, spec in enumerate(specs):
        an = _coefficients(spec)
        for i_dw, dw in enumerate(delta_omegas):
            nb = _budget(spec, an, float(dw))
            tasks.append((spec, (an.a, an.b), float(dw), i_dw, i_spec, int(root_seed),
                          min(nb, spec.n_cap), nb))
    if threads and threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            chunks = list(ex.map(_run_cell, tasks))
    else:
        chunks = [_run_cell(t) for t in tasks]
    return [r for c in chunks for r in c]


@dataclass
class RmsePoint:
    protocol: str
    delta_omega: float
    rmse_rel: float
    rmse_rel_scaled: float
    stderr: float
    n_shots: int
    n_budget: int
    frac_negative: float


def summarize(records: list[TrialRecord]) -> list[RmsePoint]:
    """Relative RMSE per (protocol, separation), plus the capped-budget rescaling."""
    out = []
    keys = []
    for r in records:
        k = (r.protocol, r.delta_omega)
        if k not in keys:
            keys.append(k)
    for k in keys:
        rs = [r for r in records if (r.protocol, r.delta_omega) == k]
        e2 = np.array([r.rel_error ** 2 for r in rs])
        rmse = math.sqrt(e2.mean())
        # delta method on the mean of squares
        se = (e2.std(ddof=1) / math.sqrt(len(e2))) / (2 * rmse) if len(e2) > 1 and rmse > 0 else 0.0
        scale = math.sqrt(rs[0].n_shots / rs[0].n_budget)
        out.append(RmsePoint(k[0], k[1], rmse, rmse * scale, se, rs[0].n_shots, rs[0].n_budget,
                             float(np.mean([r.negative_radicand for r in rs]))))
    return out


@dataclass
class EntangledFI:
    n_entangled: int
    mean_p: float
    dp: float
    fi: float


def entangled_fisher_information(protocol: ControlProtocol, g: float, delta_omega: float,
                                 n_entangled=(1, 2, 4), n_realizations: int = 10 ** 6,
                                 root_seed: int = 0, step: float | None = None):
    """Fisher information ``P'^2 / (P (1 - P))`` from realization-averaged survival.

    ``P'`` is a central difference with common random numbers; each ``Ne`` uses
    an independent stream.
    """
    h = delta_omega / 2 if step is None else step
    out = []
    for i, ne in enumerate(n_entangled):
        eng = ShotEngine(protocol, TwoToneSignal(g, protocol.omega_c, delta_omega), n_entangled=ne)
        pm, p0, pp = realization_average(eng, [delta_omega - h, delta_omega, delta_omega + h],
                                         n_realizations, make_rng(root_seed, i))
        dp = (pp - pm) / (2 * h)
        out.append(EntangledFI(int(ne), float(p0), float(dp), float(dp * dp / (p0 * (1 - p0)))))
    return out
