"""Acceptance criteria 1-13.

Each test records a single PASS/FAIL line (collected in the terminal summary)
and asserts it.  Run directly with ``python tests/test_acceptance.py``.
"""
import math
import os
import time
from functools import cache

import numpy as np
import pytest

from superres.classical_baseline import (block_fisher_information, closed_form_kappa1,
                                         fisher_sweep, loglog_slope, single_sample_density,
                                         uniform_block)
from superres.control_optimizer import (Objective, ObjectiveWeights, gradient_check, optimize,
                                        seed_waveform)
from superres.control_protocols import (make_c1, make_cpmg, make_free, make_qns_comb,
                                        random_pulse_sequence)
from superres.estimation_theory import analytic_error_bounds, expansion_coefficients, filter_sup
from superres.filter_functions import (ff_closed_form, ff_continuous_order2,
                                       ff_continuous_order4, ff_instantaneous, ff_integral,
                                       filter_derivs, lorentzian_shape_constant, overlap_chi)
from superres.monte_carlo import (SweepSpec, entangled_fisher_information, rmse_sweep,
                                  summarize)
from superres.signal_models import LorentzianNoise

G = 0.1
DELTA = 0.1
WORKERS = min(8, os.cpu_count() or 1)


def _rel(x, ref, floor):
    return np.abs(x - ref) / np.maximum(np.abs(ref), floor)


# ----------------------------------------------------------------------
# shared Monte-Carlo sweeps (reused by the error-bound overlay)
@cache
def noiseless_sweep():
    dws = np.logspace(-3, -2, 5)
    specs = [SweepSpec("FE-SR", make_free(2), G), SweepSpec("CPMG-SR", make_cpmg(2), G),
             SweepSpec("FE-Non-SR", make_free("5/2"), G)]
    t = time.perf_counter()
    pts = summarize(rmse_sweep(specs, dws, root_seed=7, threads=WORKERS))
    return dws, pts, time.perf_counter() - t


NOISE = LorentzianNoise(1e-3, 0.1)


@cache
def noisy_sweep():
    dws = np.logspace(-4, -2, 5)
    specs = [SweepSpec("FE-SR", make_free(2), G, NOISE), SweepSpec("CPMG-SR", make_cpmg(2), G, NOISE)]
    t = time.perf_counter()
    pts = summarize(rmse_sweep(specs, dws, root_seed=11, threads=WORKERS))
    return dws, pts, time.perf_counter() - t


def _curve(pts, label):
    return sorted((p for p in pts if p.protocol == label), key=lambda p: p.delta_omega)


# ----------------------------------------------------------------------
def test_criterion_01_closed_form_filter_agreement(report):
    w = np.linspace(0.0, 4.0, 1000)
    t = time.perf_counter()
    worst = 0.0
    cases = [("free", k, make_free(k)) for k in (1, 2, 3)] + [("cpmg", k, make_cpmg(k)) for k in (2, 4, 6)]
    for kind, k, p in cases:
        F = ff_instantaneous(p, w, derivs=0)[0]
        ref = ff_closed_form(kind, w, kappa=k)
        worst = max(worst, float(np.max(_rel(F, ref, 1e-9 * ref.max()))))
    dt = time.perf_counter() - t
    report(1, worst <= 1e-10 and dt < 1.0, f"max rel dev {worst:.2e} (tol 1e-10), {dt:.2f} s")


def test_criterion_02_filter_normalization(report):
    rng = np.random.default_rng(2)
    prots = [make_free(k) for k in (1, 2, 3)] + [make_cpmg(k) for k in (2, 4, 6)]
    prots += [make_qns_comb(M, 10.0) for M in (1, 2, 4)]
    prots += [random_pulse_sequence(rng, rng.uniform(1.0, 30.0)) for _ in range(50)]
    t = time.perf_counter()
    worst = max(abs(ff_integral(p) / (2 * math.pi * p.duration) - 1) for p in prots)
    dt = time.perf_counter() - t
    report(2, worst <= 1e-3 and dt < 10, f"max rel dev {worst:.2e} over {len(prots)} protocols, {dt:.2f} s")


def test_criterion_03_fisher_limits(report):
    t = time.perf_counter()
    devs, ratios = [], []
    for k in (2, 4, 6):
        fe = expansion_coefficients(make_free(k), G).fi_limit
        cp = expansion_coefficients(make_cpmg(k), G).fi_limit
        devs += [abs(fe / (8 * math.pi ** 2 * G * G * k * k) - 1),
                 abs(cp / (32 * math.pi ** 2 * G * G * k * k) - 1)]
        ratios.append(abs(cp / fe - 4))
    dt = time.perf_counter() - t
    ok = max(devs) <= 1e-6 and max(ratios) <= 8 * np.finfo(float).eps and dt < 1.0
    report(3, ok, f"max rel dev {max(devs):.2e}, max |ratio - 4| {max(ratios):.1e}, {dt:.2f} s")


def test_criterion_04_fisher_bound(report):
    rng = np.random.default_rng(4)
    t = time.perf_counter()
    violations, worst = 0, -np.inf
    for _ in range(200):
        p = random_pulse_sequence(rng, rng.uniform(0.5, 25.0))
        w = rng.uniform(0.0, 5.0, 5)
        d2F = ff_instantaneous(p, w)[2]
        lim = p.duration ** 4 / 6
        violations += int(np.sum(G * G * d2F > G * G * lim))
        worst = max(worst, float(np.max(d2F / lim)))
    dt = time.perf_counter() - t
    report(4, violations == 0 and dt < 30,
           f"{violations} violations in 1000 points, max d2F/(T^4/6) {worst:.3f}, {dt:.2f} s")


def test_criterion_05_continuous_reduction(report):
    rng = np.random.default_rng(5)
    prots = [make_free(2), make_cpmg(2), make_cpmg(4), make_qns_comb(2, 9.0)]
    prots += [random_pulse_sequence(rng, rng.uniform(2.0, 15.0), 6) for _ in range(6)]
    t = time.perf_counter()
    w2 = w4 = 0.0
    for p in prots:
        sup = filter_sup(p)
        w = rng.uniform(0.0, 3.0, 25)
        F = ff_instantaneous(p, w, derivs=0)[0]
        F2 = ff_continuous_order2(p, w, derivs=0)[0]
        w2 = max(w2, float(np.max(_rel(F2, F, 1e-9 * sup))))
        for a, b in rng.uniform(0.0, 3.0, (4, 2)):
            Fa, Fb = ff_instantaneous(p, [a, b], derivs=0)[0]
            ref = 3 * Fa * Fb
            w4 = max(w4, float(_rel(ff_continuous_order4(p, a, b), ref, 1e-9 * 3 * sup * sup)))
    dt = time.perf_counter() - t
    report(5, w2 <= 1e-8 and w4 <= 1e-6 and dt < 30,
           f"F2 vs F {w2:.1e} (tol 1e-8), F4 vs 3FF {w4:.1e} (tol 1e-6), {dt:.2f} s")


def test_criterion_06_c1_protocol(report):
    t = time.perf_counter()
    zero, dev = 0.0, 0.0
    for k in (2, 4):
        p = make_c1(k)
        F, _, d2F = (float(v[0]) for v in ff_continuous_order2(p, [p.omega_c]))
        zero = max(zero, F / filter_sup(p))
        dev = max(dev, abs(G * G * d2F / (math.pi ** 4 * G * G * k ** 4) - 1))
    dt = time.perf_counter() - t
    report(6, zero <= 1e-8 and dev <= 5e-3 and dt < 30,
           f"F2(wc)/max F2 {zero:.1e}, rel dev of g^2 F2'' {dev:.1e}, {dt:.2f} s")


def test_criterion_07_lorentzian_shape_constants(report):
    t = time.perf_counter()
    errs = {k: abs(lorentzian_shape_constant("cpmg", k, 0.0) - k * math.pi / 12) for k in (2, 4, 6)}
    dt = time.perf_counter() - t
    worst = max(errs.values())
    report(7, worst <= 1e-4 and dt < 10, f"max abs dev {worst:.1e} (f2 pi/6, f4 pi/3, f6 pi/2), {dt:.2f} s")


def test_criterion_08_noiseless_mse(report):
    dws, pts, dt = noiseless_sweep()
    fe = [p.rmse_rel_scaled for p in _curve(pts, "FE-SR")]
    cp = [p.rmse_rel_scaled for p in _curve(pts, "CPMG-SR")]
    non = [p.rmse_rel_scaled for p in _curve(pts, "FE-Non-SR")]
    ok_fe = all(0.05 <= v <= 0.2 for v in fe)
    ok_cp = all(0.01 <= v <= 0.05 for v in cp)
    ok_non = all(a > b for a, b in zip(non[:-1], non[1:]))
    fmt = lambda xs: "[" + ", ".join(f"{x:.3f}" for x in xs) + "]"
    report(8, ok_fe and ok_cp and ok_non and dt < 600,
           f"FE-SR {fmt(fe)} {'ok' if ok_fe else 'out'}; CPMG-SR {fmt(cp)} "
           f"{'ok' if ok_cp else 'out of [0.01, 0.05]'}; FE-Non-SR decreasing in dw "
           f"{'ok' if ok_non else 'no'}; {dt:.0f} s on {WORKERS} worker(s)")


def test_criterion_09_noisy_ordering(report):
    dws, pts, dt = noisy_sweep()
    fe, cp = _curve(pts, "FE-SR"), _curve(pts, "CPMG-SR")
    below = [i for i, d in enumerate(dws) if d < 1e-2 * (1 - 1e-12)]
    ordered = all(cp[i].rmse_rel < fe[i].rmse_rel for i in below)
    f20 = lorentzian_shape_constant("cpmg", 2, 0.0)
    target = math.sqrt(NOISE.fwhm * f20 / (2 * 2 ** 2))
    ratio = cp[0].rmse_rel / fe[0].rmse_rel
    ok_ratio = target / 2 <= ratio <= 2 * target
    report(9, ordered and ok_ratio and dt < 600,
           f"CPMG < FE at all {len(below)} points: {ordered}; ratio at dw={dws[0]:.0e} "
           f"{ratio:.4f} vs {target:.4f}; {dt:.0f} s")


def test_criterion_10_entanglement_scaling(report):
    t = time.perf_counter()
    res = entangled_fisher_information(make_free(2), G, 1e-3, (1, 2, 4), 10 ** 6, root_seed=10)
    dt = time.perf_counter() - t
    base = res[0].fi
    ratios = {r.n_entangled: r.fi / base for r in res}
    ok = all(abs(ratios[n] / n ** 2 - 1) <= 0.1 for n in ratios) and dt < 300
    report(10, ok, "FI ratios " + ", ".join(f"Ne={n}: {v:.3f}" for n, v in ratios.items())
           + f" (expect Ne^2 within 10%), {dt:.1f} s")


def test_criterion_11_classical_baseline(report):
    t = time.perf_counter()
    # single sample: density is the same for every separation
    s = np.linspace(-4.0, 4.0, 9)
    dens_dev = 0.0
    for tm in (0.0, 1.3, 4.7):
        ref = single_sample_density(s, 0.0, tm)
        for dw in (1e-3, 0.1, 0.7):
            dens_dev = max(dens_dev, float(np.max(np.abs(single_sample_density(s, dw, tm) - ref))))
    fi_m1 = max(abs(block_fisher_information(uniform_block(1, 1.0).with_delta(dw)).value)
                for dw in (1e-3, 0.1, 0.7))
    # noiseless four-sample block against the closed form
    dws = np.geomspace(1e-3, 1.9, 50)
    cur = fisher_sweep(uniform_block(4, 1.0), dws, [0.0])[0]
    cf_dev = float(np.max(np.abs(cur.fi_over_n / closed_form_kappa1(dws) - 1)))
    # noisy scalings on windows placed relative to the FI peak
    slopes = []
    grid = np.geomspace(1e-5, 1.9, 200)
    for c in fisher_sweep(uniform_block(4, 1.0, fwhm=0.1), grid, [0.001, 0.003, 0.01, 0.03]):
        pk = grid[np.argmax(c.fi_over_n)]
        lo = (grid >= 1e-2 * pk) & (grid <= 1e-1 * pk)
        hi = (grid >= 10 * pk) & (grid <= min(50 * pk, 0.3))
        slopes.append((loglog_slope(grid[lo], c.fi_over_n[lo]), loglog_slope(grid[hi], c.fi_over_n[hi])))
    dt = time.perf_counter() - t
    ok_slopes = all(abs(a - 2) <= 0.1 and abs(b + 2) <= 0.1 for a, b in slopes)
    ok = dens_dev <= 1e-8 and fi_m1 == 0.0 and cf_dev <= 1e-6 and ok_slopes and dt < 60
    sl = "; ".join(f"{a:.2f}/{b:.2f}" for a, b in slopes)
    report(11, ok, f"M=1 density dev {dens_dev:.1e}, FI {fi_m1:.1e}; closed-form dev {cf_dev:.1e}; "
               f"slopes {sl}; {dt:.1f} s")


def test_criterion_12_optimizer(report):
    noise = LorentzianNoise(1.0, 0.1)
    w = ObjectiveWeights(mu1=1000.0, mu2=1.0, mu3=2000.0, mu4=1.0, mu5=500.0)
    obj = Objective(4, 1.0, 256, w, noise)
    t = time.perf_counter()
    rep = optimize(obj, seed_waveform(obj.n, np.random.default_rng(0)), iterations=1000)
    p = rep.protocol
    F, _, d2F = (float(v[0]) for v in filter_derivs(p, [1.0], 2))
    cp = make_cpmg(4)
    d2F_cp = float(ff_instantaneous(cp, [1.0])[2][0])
    ov, ov_cp = overlap_chi(p, noise).chi, overlap_chi(cp, noise).chi
    gc = gradient_check(obj, p.samples, rng=0)
    dt = time.perf_counter() - t
    ok = abs(F) <= 1e-6 * d2F and d2F > d2F_cp and ov < ov_cp and gc <= 1e-5 and dt < 600
    report(12, ok, f"F2(wc) {F:.1e} vs 1e-6 F2'' {1e-6 * d2F:.1e}; F2'' {d2F:.0f} vs CPMG {d2F_cp:.0f}; "
               f"overlap {ov:.3g} vs CPMG {ov_cp:.3g}; gradient check {gc:.1e}; {dt:.0f} s")


def test_criterion_13_error_bound_overlay(report):
    rows = []
    dws0, pts0, _ = noiseless_sweep()
    dws1, pts1, _ = noisy_sweep()
    t = time.perf_counter()
    for kind, label in (("free", "FE-SR"), ("cpmg", "CPMG-SR")):
        # noiseless: capped runs rescaled to the budget, bound at the budget
        for p in _curve(pts0, label):
            b = float(analytic_error_bounds(kind, 2, G, p.delta_omega, delta=DELTA).total)
            sc = p.rmse_rel_scaled / p.rmse_rel if p.rmse_rel > 0 else 1.0
            rows.append((label, "noiseless", p.delta_omega, p.rmse_rel_scaled, sc * p.stderr, b))
        # noisy: bias does not rescale, so compare raw errors at the simulated shot count
        for p in _curve(pts1, label):
            b = float(analytic_error_bounds(kind, 2, G, p.delta_omega, NOISE, delta=DELTA,
                                            n_shots=p.n_shots).total)
            rows.append((label, "lorentzian", p.delta_omega, p.rmse_rel, p.stderr, b))
    dt = time.perf_counter() - t
    bad = [r for r in rows if r[5] < r[3] - 2 * r[4]]
    detail = f"{len(rows) - len(bad)}/{len(rows)} points dominated, {dt:.1f} s"
    if bad:
        detail += "; violations: " + ", ".join(
            f"{r[0]} {r[1]} dw={r[2]:.1e} rmse {r[3]:.3f}+-{r[4]:.3f} > bound {r[5]:.3f}" for r in bad)
    report(13, not bad and dt < 60, detail)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-p", "no:cacheprovider"]))
