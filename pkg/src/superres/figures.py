"""Figure-ready datasets with the published parameter sets.

Monte-Carlo figures run at desk scale by default: shot budgets are capped
(``n_cap``) and the relative RMSE is also reported rescaled by
``sqrt(n_shots / n_budget)``, i.e. as if the target accuracy were loosened by the
same factor.  Every knob can be overridden from the config.
"""
from __future__ import annotations

import math

import numpy as np

FIGURES = ("mse-left", "mse-right", "filterfunctions", "all-controls", "cc-mse",
           "qns-filter-function", "classical-fi")


def _mse(cfg, ctx, noisy: bool):
    from .cli import _sweep_specs, _write_sweep, grid
    from .control_protocols import make_cpmg, make_free
    from .estimation_theory import analytic_error_bounds
    from .io import write_csv
    from .monte_carlo import rmse_sweep
    from .signal_models import LorentzianNoise, NoNoise

    g = cfg.get("g", 0.1)
    noise = LorentzianNoise(1e-3, 0.1) if noisy else NoNoise()
    if "noise" in cfg:
        from .signal_models import noise_from_dict
        noise = noise_from_dict(cfg["noise"])
    base = {"g": g, "delta": cfg.get("delta", 0.1), "budget_rule": "N_free",
            "n_cap": cfg.get("n_cap", 10 ** 6), "n_repeats": cfg.get("n_repeats", 100)}
    prots = [(make_free(2), "FE-SR"), (make_cpmg(2), "CPMG-SR"), (make_free("5/2"), "FE-Non-SR")]
    specs = _sweep_specs({**base}, ctx, prots)
    for s in specs:
        s.noise = noise
    dws = grid(cfg.get("delta_omega"), {"start": 1e-3, "stop": 1e-1, "num": 9, "spacing": "log"})
    recs = rmse_sweep(specs, dws, ctx["seed"], ctx["threads"])
    paths, pts, ends = _write_sweep(recs, ctx["out"], ctx["hdr"], stem="mse")
    rows = []
    for kind, label in (("free", "FE-SR"), ("cpmg", "CPMG-SR")):
        n_sim = {p.delta_omega: p.n_shots for p in pts if p.protocol == label}
        for dw in dws:
            b0 = analytic_error_bounds(kind, 2, g, dw, noise, delta=base["delta"])
            b1 = analytic_error_bounds(kind, 2, g, dw, noise, n_shots=n_sim[float(dw)])
            rows.append((label, dw, float(b0.bias), float(b0.statistical), float(b0.total),
                         float(b1.statistical), float(b1.total)))
    paths.append(write_csv(ctx["out"] / "mse_bounds.csv",
                           ["protocol", "delta_omega", "bias", "stat_budget", "bound_budget",
                            "stat_simulated", "bound_simulated"], rows, ctx["hdr"]))
    return paths, {"rmse_endpoints": ends, "noise": noise.to_dict()}


def _ff_rows(prots, w):
    from .filter_functions import filter_profile

    rows = []
    for label, p in prots:
        prof = filter_profile(p, w)
        rows += [(label, w[i], prof.F[i]) for i in range(w.size)]
    return rows


def _filterfunctions(cfg, ctx):
    from .cli import grid
    from .control_protocols import make_c1, make_cpmg, make_free
    from .io import write_csv

    w = grid(cfg.get("omega"), {"start": 0.0, "stop": 3.0, "num": 601})
    prots = []
    for k in (2, 4):
        prots += [(f"FE-k{k}", make_free(k)), (f"CPMG-k{k}", make_cpmg(k)), (f"c1-k{k}", make_c1(k))]
    p = write_csv(ctx["out"] / "filterfunctions.csv", ["protocol", "omega", "F"],
                  _ff_rows(prots, w), ctx["hdr"])
    return [p], {"protocols": [l for l, _ in prots]}


def _optimized_c1(cfg, ctx):
    from .cli import DEFAULT_WEIGHTS
    from .control_optimizer import Objective, ObjectiveWeights, optimize, seed_waveform
    from .signal_models import LorentzianNoise

    w = ObjectiveWeights(**{**DEFAULT_WEIGHTS, **cfg.get("weights", {})})
    obj = Objective(4, 1.0, cfg.get("n_cells", 256), w, LorentzianNoise(1.0, 0.1))
    seed = seed_waveform(obj.n, np.random.default_rng(ctx["seed"]), cfg.get("v"))
    return optimize(obj, seed, iterations=cfg.get("iterations", 1000))


def _all_controls(cfg, ctx):
    from .cli import grid
    from .control_protocols import make_c1, make_cpmg, switching_function
    from .io import write_csv, write_json

    rep = _optimized_c1(cfg, ctx)
    c1 = make_c1(4)
    cp = make_cpmg(4)
    T = c1.duration
    t = (np.arange(rep.protocol.samples.size) + 0.5) * T / rep.protocol.samples.size
    sw = switching_function(cp)(t)
    rows = [(t[i], -0.5, rep.protocol.samples[i], sw[i]) for i in range(t.size)]
    p1 = write_csv(ctx["out"] / "controls.csv", ["t", "c1", "c1_opt", "cpmg_switching"], rows,
                   ctx["hdr"])
    w = grid(cfg.get("omega"), {"start": 0.0, "stop": 3.0, "num": 601})
    p2 = write_csv(ctx["out"] / "controls_ff.csv", ["protocol", "omega", "F"],
                   _ff_rows([("c1", c1), ("c1-opt", rep.protocol), ("CPMG", cp)], w), ctx["hdr"])
    p3 = write_json(ctx["out"] / "c1_opt.json", {"protocol": rep.protocol.to_dict(),
                                                "report": rep.to_dict()}, ctx["hdr"])
    return [p1, p2, p3], {"c1_opt_breakdown": rep.final_breakdown,
                          "c1_impulse_note": "c1 has a pi impulse at T/2"}


def _cc_mse(cfg, ctx):
    from .cli import _write_sweep, grid
    from .control_protocols import make_c1, make_cpmg
    from .monte_carlo import SweepSpec, rmse_sweep
    from .signal_models import LorentzianNoise, NoNoise

    rep = _optimized_c1(cfg, ctx)
    n_cells = cfg.get("n_cells", 256)
    prots = [("CPMG-SR", make_cpmg(4)), ("c1-SR", make_c1(4, n_steps=n_cells)),
             ("c1opt-SR", rep.protocol)]
    dws = grid(cfg.get("delta_omega"), {"start": 3e-3, "stop": 3e-1, "num": 6, "spacing": "log"})
    paths, ends = [], {}
    for g in (0.06, 0.02):
        for tag, gl in (("noiseless", 0.0), ("gl_g30", g / 30), ("gl_g15", g / 15)):
            noise = NoNoise() if gl == 0 else LorentzianNoise(gl, 0.1)
            specs = [SweepSpec(lbl, p, g, noise, budget_rule="N_CPMG", kappa_budget=4.0,
                               delta=cfg.get("delta", 0.1), n_cap=cfg.get("n_cap", 20000),
                               n_repeats=cfg.get("n_repeats", 10),
                               noise_grid=cfg.get("noise_grid", n_cells)) for lbl, p in prots]
            recs = rmse_sweep(specs, dws, ctx["seed"], ctx["threads"])
            ps, _, e = _write_sweep(recs, ctx["out"], ctx["hdr"], stem=f"cc_mse_g{g}_{tag}")
            paths += ps
            ends[f"g{g}_{tag}"] = e
    return paths, {"rmse_endpoints": ends}


def _qns(cfg, ctx):
    from .cli import run_qns_comb

    c = {"M": cfg.get("M", [1, 2, 4, 8]), "kappa": cfg.get("kappa", 8),
         "omega": cfg.get("omega", {"start": 0.0, "stop": 4.0, "num": 801})}
    return run_qns_comb(c, ctx)


def _classical(cfg, ctx):
    from .cli import run_classical_fi

    c = {"delta_omega": cfg.get("delta_omega", {"start": 1e-4, "stop": 1.9, "num": 200,
                                                "spacing": "log"}),
         "M": 4, "kappa": 1, "fwhm": 0.1,
         "g_lambda": cfg.get("g_lambda", [0.0, 0.001, 0.003, 0.01, 0.03])}
    return run_classical_fi(c, ctx)


def run_figure(fig, cfg, ctx):
    ctx = dict(ctx)
    ctx["out"] = ctx["out"] / fig
    if fig == "mse-left":
        return _mse(cfg, ctx, False)
    if fig == "mse-right":
        return _mse(cfg, ctx, True)
    if fig == "filterfunctions":
        return _filterfunctions(cfg, ctx)
    if fig == "all-controls":
        return _all_controls(cfg, ctx)
    if fig == "cc-mse":
        return _cc_mse(cfg, ctx)
    if fig == "qns-filter-function":
        return _qns(cfg, ctx)
    if fig == "classical-fi":
        return _classical(cfg, ctx)
    raise ValueError(fig)
