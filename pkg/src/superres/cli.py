"""Command-line runner: ``superres <subcommand> --config <path> [--seed] [--out] [--threads]``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .io import config_hash, header, write_csv, write_json

SUBCOMMANDS = ("filterfn", "analyze", "mc-rmse", "optimize", "classical-fi", "entangle",
               "qns-comb", "reproduce")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


def load_schema() -> dict:
    return json.loads(resources.files("superres").joinpath("configs/schema.json").read_text())


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {loc}: {exc.message}") from exc


def grid(spec, default=None) -> np.ndarray:
    if spec is None:
        spec = default
    if isinstance(spec, (int, float)):
        return np.array([float(spec)])
    if isinstance(spec, list):
        return np.array(spec, dtype=float)
    if spec.get("spacing", "linear") == "log":
        if spec["start"] <= 0 or spec["stop"] <= 0:
            raise ConfigError("log grids need positive endpoints")
        return np.geomspace(spec["start"], spec["stop"], spec["num"])
    return np.linspace(spec["start"], spec["stop"], spec["num"])


def _require(cfg, *keys):
    for k in keys:
        if k not in cfg:
            raise ConfigError(f"missing required key {k!r}")


def _protocol(d: dict, base: Path | None = None):
    from .control_protocols import ControlProtocol

    if "file" in d:
        p = Path(d["file"])
        if base is not None and not p.is_absolute():
            p = base / p
        try:
            doc = json.loads(p.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load protocol file {p}: {exc}") from exc
        doc = doc.get("protocol", doc)
        return ControlProtocol.from_dict(doc), d.get("label", doc.get("kind", "custom"))
    prot = ControlProtocol.from_dict({k: v for k, v in d.items() if k != "label"})
    label = d.get("label") or f"{prot.kind}-k{prot.kappa}"
    return prot, label


def _noise(cfg):
    from .signal_models import noise_from_dict

    return noise_from_dict(cfg.get("noise"))


# ----------------------------------------------------------------------
# subcommands; each returns (list of written paths, summary dict)
def run_filterfn(cfg, ctx):
    from .filter_functions import filter_profile

    _require(cfg, "protocols")
    w = grid(cfg.get("omega"), {"start": 0.0, "stop": 3.0, "num": 601})
    rows = []
    peaks = {}
    for d in cfg["protocols"]:
        prot, label = _protocol(d, ctx["base"])
        prof = filter_profile(prot, w, cfg.get("n_steps"))
        for i in range(w.size):
            rows.append((label, w[i], prof.F[i], prof.dF[i], prof.d2F[i]))
        peaks[label] = {"omega_at_max": float(w[np.argmax(prof.F)]), "max_F": float(prof.F.max())}
    p = write_csv(ctx["out"] / "filterfn.csv", ["protocol", "omega", "F", "dF", "d2F"], rows,
                  ctx["hdr"])
    return [p], {"profiles": peaks}


def run_analyze(cfg, ctx):
    from .estimation_theory import expansion_coefficients, measurement_budget

    _require(cfg, "protocols", "g")
    g = cfg["g"]
    noise = _noise(cfg)
    delta = cfg.get("delta", 0.1)
    dw = float(grid(cfg.get("delta_omega"), 0.01)[0])
    out = {}
    for d in cfg["protocols"]:
        prot, label = _protocol(d, ctx["base"])
        an = expansion_coefficients(prot, g, noise)
        rec = an.to_dict()
        try:
            rec["budget"] = measurement_budget(an, delta, dw).n_shots
        except ValueError as exc:
            rec["budget"] = None
            rec["budget_error"] = str(exc)
        if prot.kappa is not None and prot.kind in ("free", "cpmg"):
            k = float(prot.kappa)
            alpha = 8 if prot.kind == "free" else 32
            rec["fi_limit_reference"] = alpha * math.pi ** 2 * g * g * k * k / prot.omega_c ** 4
        out[label] = rec
    p = write_json(ctx["out"] / "analyze.json", {"delta": delta, "delta_omega": dw,
                                                  "protocols": out}, ctx["hdr"])
    return [p], {"fi_limit": {k: v["fi_limit"] for k, v in out.items()}}


def _sweep_specs(cfg, ctx, protocols=None):
    from .monte_carlo import SweepSpec

    noise = _noise(cfg)
    specs = []
    for d in protocols or cfg["protocols"]:
        prot, label = _protocol(d, ctx["base"]) if isinstance(d, dict) else d
        specs.append(SweepSpec(label, prot, cfg["g"], noise,
                               budget_rule=cfg.get("budget_rule", "N_free"),
                               fixed_n=cfg.get("fixed_n"), delta=cfg.get("delta", 0.1),
                               kappa_budget=float(cfg.get("kappa_budget", 2.0)),
                               n_cap=cfg.get("n_cap", 10 ** 6),
                               n_repeats=cfg.get("n_repeats", 100),
                               noise_mode=cfg.get("noise_mode", "projected"),
                               noise_grid=cfg.get("noise_grid", 4096),
                               estimator=cfg.get("estimator", "noiseless")))
    return specs


def _write_sweep(records, out, hdr, stem="mc_rmse"):
    from .monte_carlo import summarize

    cols = ["protocol", "delta_omega", "n_shots", "repeat", "estimate", "rel_error",
            "negative_radicand", "n_budget", "seed"]
    p1 = write_csv(out / f"{stem}_trials.csv", cols,
                   [[getattr(r, c) for c in cols] for r in records], hdr)
    pts = summarize(records)
    scols = ["protocol", "delta_omega", "rmse_rel", "rmse_rel_scaled", "stderr", "n_shots",
             "n_budget", "frac_negative"]
    p2 = write_csv(out / f"{stem}_summary.csv", scols,
                   [[getattr(p, c) for c in scols] for p in pts], hdr)
    ends = {}
    for p in pts:
        e = ends.setdefault(p.protocol, {})
        e.setdefault("first", {"delta_omega": p.delta_omega, "rmse_rel": p.rmse_rel,
                               "rmse_rel_scaled": p.rmse_rel_scaled})
        e["last"] = {"delta_omega": p.delta_omega, "rmse_rel": p.rmse_rel,
                     "rmse_rel_scaled": p.rmse_rel_scaled}
    return [p1, p2], pts, ends


def run_mc_rmse(cfg, ctx):
    from .monte_carlo import rmse_sweep

    _require(cfg, "protocols", "g", "delta_omega")
    specs = _sweep_specs(cfg, ctx)
    dws = grid(cfg["delta_omega"])
    recs = rmse_sweep(specs, dws, ctx["seed"], ctx["threads"])
    paths, _, ends = _write_sweep(recs, ctx["out"], ctx["hdr"])
    return paths, {"rmse_endpoints": ends}


def run_optimize(cfg, ctx):
    from .control_optimizer import (Objective, ObjectiveWeights, gradient_check,
                                    local_optimality_residual, optimize, seed_waveform)
    from .estimation_theory import is_superres

    _require(cfg, "kappa")
    w = ObjectiveWeights(**{**DEFAULT_WEIGHTS, **cfg.get("weights", {})})
    noise = _noise(cfg)
    obj = Objective(float(Fraction_of(cfg["kappa"])), cfg.get("omega_c", 1.0),
                    cfg.get("n_cells", 256), w, noise)
    rng = np.random.default_rng(ctx["seed"])
    seed = seed_waveform(obj.n, rng, cfg.get("v"))
    rep = optimize(obj, seed, iterations=cfg.get("iterations", 1000), trace=True)
    lam = w.mu2
    rep.residual_seed = local_optimality_residual(obj.protocol(seed), lam)[2]
    rep.residual_final = local_optimality_residual(rep.protocol, lam)[2]
    gc = gradient_check(obj, rep.protocol.samples, rng=ctx["seed"])
    summary = {"final_objective": rep.final_objective, "initial_objective": rep.initial_objective,
               "breakdown": rep.final_breakdown, "iterations": rep.iterations,
               "gradient_check": gc, "is_superres": is_superres(rep.protocol),
               "max_abs_c": float(np.max(np.abs(rep.protocol.samples)))}
    p1 = write_json(ctx["out"] / "protocol.json", {"protocol": rep.protocol.to_dict()}, ctx["hdr"])
    p2 = write_json(ctx["out"] / "report.json", {**rep.to_dict(), **summary}, ctx["hdr"])
    tr = rep.trace
    p3 = write_csv(ctx["out"] / "trace.csv", ["iteration", "objective", "grad_norm", "step",
                                              "F2_centroid"],
                   [[r[k] for k in ("iteration", "objective", "grad_norm", "step", "F2_centroid")]
                    for r in tr], ctx["hdr"])
    return [p1, p2, p3], summary


def Fraction_of(x):
    from fractions import Fraction

    return Fraction(str(x))


DEFAULT_WEIGHTS = {"mu1": 1000.0, "mu2": 1.0, "mu3": 2000.0, "mu4": 1.0, "mu5": 500.0}


def run_classical_fi(cfg, ctx):
    from .classical_baseline import closed_form_kappa1, fisher_sweep, uniform_block

    _require(cfg, "delta_omega")
    dws = grid(cfg["delta_omega"])
    M = cfg.get("M", 4)
    M = M[0] if isinstance(M, list) else M
    kappa = float(Fraction_of(cfg.get("kappa", 1)))
    tmpl = uniform_block(M, kappa, cfg.get("omega_c", 1.0), offset=cfg.get("time_offset", 0),
                         g=cfg.get("g", 1.0), fwhm=cfg.get("fwhm", 0.1))
    curves = fisher_sweep(tmpl, dws, cfg.get("g_lambda", [0.0]))
    rows = []
    for c in curves:
        for dw, v, fl in zip(c.delta_omega, c.fi_over_n, c.flags):
            rows.append((dw, c.g_lambda, v, int(bool(fl.get("degenerate", False)))))
    p = write_csv(ctx["out"] / "classical_fi.csv", ["delta_omega", "g_lambda", "fi_over_n",
                                                    "degenerate"], rows, ctx["hdr"])
    summary = {"M": M, "kappa": kappa}
    if M == 4 and kappa == 1.0:
        ref = closed_form_kappa1(dws, tmpl.omega_c)
        zero = [c for c in curves if c.g_lambda == 0]
        if zero:
            summary["max_rel_dev_closed_form"] = float(np.nanmax(np.abs(zero[0].fi_over_n / ref - 1)))
    return [p], summary


def run_entangle(cfg, ctx):
    from .estimation_theory import entanglement_scaling, expansion_coefficients
    from .monte_carlo import entangled_fisher_information

    _require(cfg, "protocol", "g")
    prot, label = _protocol(cfg["protocol"], ctx["base"])
    g = cfg["g"]
    dw = float(grid(cfg.get("delta_omega"), 1e-3)[0])
    an = expansion_coefficients(prot, g)
    res = entangled_fisher_information(prot, g, dw, cfg.get("n_entangled", [1, 2, 4]),
                                       cfg.get("n_realizations", 10 ** 6), ctx["seed"],
                                       cfg.get("fd_step"))
    rows = []
    for r in res:
        sc = entanglement_scaling(an, cfg.get("delta", 0.1), dw, n_entangled=r.n_entangled)
        rows.append((r.n_entangled, dw, r.mean_p, r.dp, r.fi, sc.fi, sc.n_repetitions,
                     sc.resource_ratio))
    base = res[0].fi
    p = write_csv(ctx["out"] / "entangle.csv", ["n_entangled", "delta_omega", "mean_P", "dP",
                                                "fi_mc", "fi_analytic", "n_repetitions",
                                                "resource_ratio"], rows, ctx["hdr"])
    return [p], {"fi_ratio_to_first": {str(r.n_entangled): r.fi / base for r in res},
                 "protocol": label}


def run_qns_comb(cfg, ctx):
    from .control_protocols import make_qns_comb
    from .filter_functions import ff_closed_form, ff_instantaneous

    _require(cfg, "M")
    Ms = cfg["M"] if isinstance(cfg["M"], list) else [cfg["M"]]
    wc = cfg.get("omega_c", 1.0)
    T = cfg.get("duration") or float(Fraction_of(cfg.get("kappa", 8))) * 2 * math.pi / wc
    w = grid(cfg.get("omega"), {"start": 0.0, "stop": 4.0, "num": 801})
    rows, peaks = [], {}
    for M in Ms:
        prot = make_qns_comb(M, T, wc)
        F = ff_instantaneous(prot, w, 0)[0]
        Fc = ff_closed_form("qns", w, M=M, T=T)
        for i in range(w.size):
            rows.append((M, w[i], F[i], Fc[i]))
        peaks[str(M)] = {"omega_peak": float(w[np.argmax(F)]), "comb_frequency": 2 * math.pi * M / T,
                         "max_closed_form_dev": float(np.max(np.abs(F - Fc)) / F.max())}
    p = write_csv(ctx["out"] / "qns_comb.csv", ["M", "omega", "F", "F_closed_form"], rows, ctx["hdr"])
    return [p], {"duration": T, "peaks": peaks}


# ----------------------------------------------------------------------
from .figures import FIGURES, run_figure  # noqa: E402


def run_reproduce(cfg, ctx):
    fig = cfg.get("figure") or ctx.get("figure")
    if fig not in FIGURES:
        raise ConfigError(f"unknown figure {fig!r}; choose from {', '.join(FIGURES)}")
    return run_figure(fig, cfg, ctx)


RUNNERS = {"filterfn": run_filterfn, "analyze": run_analyze, "mc-rmse": run_mc_rmse,
           "optimize": run_optimize, "classical-fi": run_classical_fi, "entangle": run_entangle,
           "qns-comb": run_qns_comb, "reproduce": run_reproduce}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="superres", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"superres {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=name != "reproduce")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default="superres_out")
        sp.add_argument("--threads", type=int, default=1)
        if name == "reproduce":
            sp.add_argument("--figure", choices=sorted(FIGURES))
    sub.add_parser("schema", help="print the configuration JSON schema")
    return ap


def main(argv=None) -> int:
    from .control_optimizer import OptimizationError
    from .estimation_theory import BudgetError, ConsistencyError
    from .filter_functions import QuadratureError
    from .control_protocols import ProtocolError
    from .signal_models import ParameterError

    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.command == "schema":
        print(json.dumps(load_schema(), indent=2))
        return EXIT_OK
    try:
        if args.config:
            cfg = load_config(args.config)
            base = Path(args.config).resolve().parent
        else:
            cfg, base = {}, Path.cwd()
        exp = cfg.get("experiment", args.command)
        if exp != args.command:
            raise ConfigError(f"config is for {exp!r}, not {args.command!r}")
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if args.threads < 1:
            raise ConfigError("threads must be >= 1")
        seed = args.seed if args.seed is not None else cfg.get("seed", 0)
        resolved = {**cfg, "experiment": args.command, "seed": seed}
        if args.command == "reproduce" and getattr(args, "figure", None):
            resolved["figure"] = args.figure
        validate(resolved)
        out = Path(args.out)
        ctx = {"seed": seed, "threads": args.threads, "out": out, "base": base,
               "hdr": header(config_hash(resolved), seed)}
        paths, summary = RUNNERS[args.command](resolved, ctx)
        write_json(out / "config.resolved.json", {"config": resolved}, ctx["hdr"])
        write_json(out / "summary.json", {"command": args.command, "outputs":
                                          [str(p.name) for p in paths], "summary": summary},
                   ctx["hdr"])
    except (ConfigError, ProtocolError, ParameterError, KeyError, TypeError) as exc:
        print(f"superres: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConsistencyError, QuadratureError, OptimizationError, BudgetError,
            FloatingPointError, np.linalg.LinAlgError, ValueError, ArithmeticError) as exc:
        print(f"superres: numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
