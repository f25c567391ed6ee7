"""Command-line entry point: ``shl <subcommand> [config.toml] [options]``.

Artifacts go to ``<out>/<experiment>/<config-hash>/``; a rerun with an identical
configuration finds the completed summary and does not recompute.
Exit codes: 0 success, 1 compute failure or missing artifacts, 2 schema violation.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, parse_eps_range
from .correctors import compute_correctors, homogenized_estimate, save_correctors
from .ensemble import (
    EnsembleConfig,
    cz_constant_probe,
    moment_estimate,
    rate_fit,
    run_ensemble,
    spectral_gap_probe,
)
from .fieldio import write_field
from .homogenization import MacroProfile
from .lattice import KIND_EDGE, PeriodicGrid
from .stats import mean_ci
from .util import to_jsonable

SUBCOMMANDS = ("sample", "correctors", "massive-correctors", "oscillation", "fluctuation", "splitting",
               "rates", "sg-probe", "cz-probe", "export")


class ComputeError(RuntimeError):
    pass


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(to_jsonable(_finite(obj)), sort_keys=True, indent=2) + "\n")


def _finite(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def _series(name, d, x, y, lo, hi, xlabel, ylabel) -> dict:
    return {"name": name, "d": d, "xlabel": xlabel, "ylabel": ylabel,
            "x": list(map(float, x)), "y": list(map(float, y)),
            "ci_low": list(map(float, lo)), "ci_high": list(map(float, hi))}


def _eps_grid(cfg: ExperimentConfig, eps: float) -> PeriodicGrid:
    period = float(cfg.params.get("period", 8.0))
    n = period / (eps * cfg.grid.h)
    if abs(n - round(n)) > 1e-9:
        raise ConfigError(f"[experiment].period: period/(eps h) = {n} is not an integer")
    return PeriodicGrid(cfg.grid.d, int(round(n)), cfg.grid.h)


def _write_table(outdir: Path, tables) -> list:
    rows, failures = [], []
    cols = None
    for t in tables:
        for r in t.rows:
            rows.append(r)
            if r.get("error"):
                failures.append(r)
    cols = []
    for r in rows:
        for k in r:
            if k not in cols and k != "error":
                cols.append(k)
    cols.append("error")
    with open(outdir / "samples.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(float(r[c])) if isinstance(r.get(c), (float, np.floating)) else r.get(c, "")
                        for c in cols])
    if failures:
        (outdir / "failures.log").write_text("".join(f"{r['index']}\t{r['seed']}\t{r['error']}\n" for r in failures))
    return failures


# ---------------------------------------------------------------------------
# experiments: each returns a summary dict and may write extra artifacts


def run_sample(cfg: ExperimentConfig, outdir: Path) -> dict:
    ens = cfg.ensemble()
    fields_dir = outdir / "fields"
    stats = []
    for i in range(cfg.n_samples):
        a, g = ens.coefficient(i)
        prov = {"seed": ens.sample_seed(i), "index": i, "config_hash": cfg.hash()}
        write_field(fields_dir / f"a_{i:04d}.shf", cfg.grid, a.values, KIND_EDGE, prov)
        write_field(fields_dir / f"g_{i:04d}.shf", cfg.grid, g, KIND_EDGE, prov)
        stats.append({"index": i, "seed": prov["seed"], "a_min": float(a.values.min()),
                      "a_max": float(a.values.max()), "g_var": float(np.var(g))})
    with open(outdir / "samples.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(stats[0]), lineterminator="\n")
        w.writeheader()
        for s in stats:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in s.items()})
    return {"n_samples": cfg.n_samples, "gamma": cfg.gamma()}


def run_correctors(cfg: ExperimentConfig, outdir: Path) -> dict:
    ens = cfg.ensemble()
    lags = cfg.params.get("lags", [])
    r = float(cfg.params.get("r", 1.0))
    table = run_ensemble(ens, "correctors", {"lags": lags, "r_list": [r]})
    failures = _write_table(outdir, [table])
    keep = int(cfg.params.get("save_fields", 1))
    sets = []
    for i in range(cfg.n_samples):
        if table.rows[i].get("error"):
            continue
        a, _ = ens.coefficient(i)
        cs = compute_correctors(a, cfg.solver)
        sets.append(cs)
        if i < keep:
            save_correctors(cs, outdir / f"sample_{i:04d}",
                            {"seed": ens.sample_seed(i), "index": i, "config_hash": cfg.hash()})
    est = homogenized_estimate(sets)
    summary = {
        "homogenized": est.as_dict(),
        "abar_box": [s.abar_box.tolist() for s in sets],
        "harmonic_mean": [float(1.0 / np.mean(1.0 / s.a.values)) for s in sets],
        "identity_ok": all(s.identity_ok(cfg.solver.tol) for s in sets),
        "failures": len(failures),
    }
    if lags:
        series = {}
        for name in ("phi", "sigma") if cfg.grid.d > 1 else ("phi",):
            ests = []
            for lag in lags:
                vals = table.column(f"{name}_inc_{lag}_r{r:g}")
                ests.append(moment_estimate(vals, r, seed=cfg.base_seed, powered=True) if len(vals) >= 8
                            else None)
            ok = [(lag, e) for lag, e in zip(lags, ests) if e is not None]
            if ok:
                series[name] = _series(f"{name}_increment_moment", cfg.grid.d, [l for l, _ in ok],
                                       [e.value for _, e in ok], [e.ci_low for _, e in ok],
                                       [e.ci_high for _, e in ok], "|x|", f"<|{name}(x)-{name}(0)|^2r>^(1/r)")
        summary["series"] = list(series.values())
    return summary


def run_massive(cfg: ExperimentConfig, outdir: Path) -> dict:
    T = float(cfg.params.get("T", 16.0))
    table = run_ensemble(cfg.ensemble(), "massive_correctors", {"T": T})
    failures = _write_table(outdir, [table])
    return {"T": T, "identity_ok": bool(np.all(table.column("identity_ok") == 1)), "failures": len(failures)}


def _eps_list(cfg: ExperimentConfig) -> list:
    if "eps_list" in cfg.params:
        return sorted(cfg.params["eps_list"], reverse=True)
    if "eps" in cfg.params:
        return [float(cfg.params["eps"])]
    return [1 / 8, 1 / 16, 1 / 32]


def run_oscillation(cfg: ExperimentConfig, outdir: Path, eps_list=None) -> dict:
    eps_list = _eps_list(cfg) if eps_list is None else eps_list
    p = float(cfg.params.get("p", 2.0))
    tables, pairs, sig, lo, hi = [], [], [], [], []
    for eps in eps_list:
        grid = _eps_grid(cfg, eps)
        t = run_ensemble(cfg.ensemble(grid), "oscillation", {"eps": eps, "p": p, "period": grid.L * eps})
        tables.append(t)
        e = t.column("error_norm")
        m, l, h = mean_ci(e)
        pairs.append((eps, m))
        lo.append(l)
        hi.append(h)
        sig.append(float(np.std(e, ddof=1) / math.sqrt(len(e)) / m) if len(e) > 1 else 0.0)
    failures = _write_table(outdir, tables)
    summary = {"p": p, "eps": eps_list, "mean_error": [v for _, v in pairs], "failures": len(failures),
               "series": [_series("error_vs_eps", cfg.grid.d, eps_list, [v for _, v in pairs], lo, hi,
                                  "eps", "||grad(u - u_tilde)||_p")]}
    if len(pairs) >= 3:
        fit = rate_fit(pairs, cfg.grid.d, sigma=sig if all(s > 0 for s in sig) else None)
        summary["rate_fit"] = fit.as_dict()
    return summary


def run_fluctuation(cfg: ExperimentConfig, outdir: Path) -> dict:
    eps_list = _eps_list(cfg)
    tables, var, vlo, vhi = [], [], [], []
    for eps in eps_list:
        grid = _eps_grid(cfg, eps)
        ens = cfg.ensemble(grid)
        pre = run_ensemble(ens, "correctors")
        d = grid.d
        abar = np.array([[np.mean(pre.column(f"abar_{i}{j}")) for j in range(d)] for i in range(d)])
        t = run_ensemble(ens, "fluctuation", {"eps": eps, "abar": abar.tolist(), "period": grid.L * eps})
        tables.append(t)
        G = t.column("G")
        est = moment_estimate(G - G.mean(), 1.0, seed=cfg.base_seed) if len(G) >= 8 else None
        var.append(float(np.var(G, ddof=1)) if len(G) > 1 else 0.0)
        vlo.append(est.ci_low if est else var[-1])
        vhi.append(est.ci_high if est else var[-1])
    failures = _write_table(outdir, tables)
    return {"eps": eps_list, "var_G": var, "failures": len(failures),
            "series": [_series("var_G_vs_eps", cfg.grid.d, eps_list, var, vlo, vhi, "eps", "Var(G)")]}


def run_splitting(cfg: ExperimentConfig, outdir: Path) -> dict:
    T = float(cfg.params.get("T", 64.0))
    tau = float(cfg.params.get("tau", 16.0))
    table = run_ensemble(cfg.ensemble(), "splitting", {"T": T, "tau": tau})
    failures = _write_table(outdir, [table])
    keys = [k for k in table.ok_rows[0] if k.startswith("res_")]
    return {"T": T, "tau": tau, "failures": len(failures),
            "max_residuals": {k: float(np.max(table.column(k))) for k in keys}}


def run_sg(cfg: ExperimentConfig, outdir: Path) -> dict:
    functional = cfg.params.get("functional", "flux")
    n_list = cfg.params.get("n_list", [cfg.grid.n])
    rows = []
    for n in n_list:
        grid = PeriodicGrid(cfg.grid.d, int(n), cfg.grid.h)
        res = spectral_gap_probe(cfg.ensemble(grid), functional, seed=cfg.base_seed)
        rows.append(res.as_dict())
    _dump(outdir / "probe.json", rows)
    return {"functional": functional, "results": rows,
            "series": [_series("sg_ratio_vs_L", cfg.grid.d, [r["L"] for r in rows], [r["ratio"] for r in rows],
                               [r["ratio"] for r in rows], [r["ratio"] for r in rows], "L", "Var F / RHS")]}


def run_cz(cfg: ExperimentConfig, outdir: Path) -> dict:
    p = float(cfg.params.get("p", 4.0))
    rp = float(cfg.params.get("r_prime", 2.0))
    r = float(cfg.params.get("r", 4.0))
    T_list = [float(t) for t in cfg.params.get("T_list", [1, 4, 16, 64])]
    fam = tuple(cfg.params.get("rhs_family", ["mode", "noise", "coefficient"]))
    coef = cfg.params.get("coefficient", "random")
    res = cz_constant_probe(cfg.ensemble(), p, rp, r, T_list, fam, coefficient=coef)
    _dump(outdir / "probe.json", res.as_dict())
    Ts = sorted(res.max_ratio)
    ys = [res.max_ratio[t] for t in Ts]
    return {"probe": res.as_dict(), "series": [_series("C_vs_T", cfg.grid.d, Ts, ys, ys, ys, "T", "C(T) lower bound")]}


RUNNERS = {
    "sample": run_sample,
    "correctors": run_correctors,
    "massive-correctors": run_massive,
    "oscillation": run_oscillation,
    "fluctuation": run_fluctuation,
    "splitting": run_splitting,
    "sg-probe": run_sg,
    "cz-probe": run_cz,
}


# ---------------------------------------------------------------------------
# orchestration


def _apply_overrides(doc: dict, args) -> dict:
    doc = json.loads(json.dumps(doc))
    solver = doc.setdefault("solver", {})
    if args.solver:
        solver["method"] = args.solver
    if args.tol is not None:
        solver["tol"] = args.tol
    if args.max_iter is not None:
        solver["max_iter"] = args.max_iter
    if args.seed is not None:
        doc.setdefault("ensemble", {})["base_seed"] = args.seed
    if not solver:
        doc.pop("solver")
    return doc


def execute(cfg: ExperimentConfig, out_root: Path, force: bool = False, runner=None) -> Path:
    name = cfg.name
    outdir = out_root / name / cfg.hash()
    done = outdir / "summary.json"
    if done.exists() and not force:
        prev = json.loads(done.read_text())
        if prev.get("config_hash") == cfg.hash() and prev.get("complete"):
            print(f"up to date: {outdir}")
            return outdir
    if outdir.exists():
        shutil.rmtree(outdir)
    outdir.mkdir(parents=True)
    _dump(outdir / "config.json", {"config": cfg.canonical(), "config_hash": cfg.hash(), "gamma": cfg.gamma()})
    try:
        summary = (runner or RUNNERS[name])(cfg, outdir)
    except (RuntimeError, ArithmeticError, ValueError) as exc:
        (outdir / "failures.log").write_text(f"{type(exc).__name__}: {exc}\n")
        raise ComputeError(str(exc)) from exc
    summary.update({"experiment": name, "config_hash": cfg.hash(), "version": __version__, "complete": True})
    _dump(done, summary)
    print(str(outdir))
    return outdir


def _rates_config(args) -> ExperimentConfig:
    d = args.d
    eps = parse_eps_range(args.eps)
    period = args.period
    n0 = int(round(period / eps[0]))
    doc = {
        "grid": {"d": d, "n": n0, "h": 1.0},
        "covariance": {"nu": 1.0, "variance": 1.0},
        "map": {"lambda": args.lam, "map": "sigmoid"},
        "ensemble": {"n_samples": args.samples, "base_seed": 0},
        "experiment": {"name": "rates", "eps_list": eps, "period": period, "of": args.experiment},
    }
    if args.config:
        base = ExperimentConfig.load(args.config).doc
        for sec in ("covariance", "map", "solver", "ensemble"):
            if sec in base:
                doc[sec] = dict(base[sec])
        doc["ensemble"]["n_samples"] = doc["ensemble"].get("n_samples", args.samples)
    return ExperimentConfig.from_dict(_apply_overrides(doc, args))


def run_rates(cfg: ExperimentConfig, outdir: Path) -> dict:
    of = cfg.params.get("of", "oscillation")
    if of != "oscillation":
        raise ConfigError(f"rates: unsupported experiment {of!r}")
    summary = run_oscillation(cfg, outdir, sorted(cfg.params["eps_list"], reverse=True))
    if "rate_fit" not in summary:
        raise ConfigError("rates: need at least 3 eps values")
    _dump(outdir / "rate_fit.json", summary["rate_fit"])
    return summary


def export(artdir: Path, fmt: str) -> list:
    summary_path = artdir / "summary.json"
    if not summary_path.exists():
        raise FileNotFoundError(f"no artifacts in {artdir}")
    summary = json.loads(summary_path.read_text())
    dest = artdir / "export"
    dest.mkdir(exist_ok=True)
    written = []
    if fmt == "csv":
        src = artdir / "samples.csv"
        if not src.exists():
            raise FileNotFoundError(f"no sample table in {artdir}")
        target = dest / "samples.csv"
        target.write_bytes(src.read_bytes())
        written.append(target)
    elif fmt == "plotdata":
        for s in summary.get("series", []):
            target = dest / f"{s['name']}_d{s['d']}.csv"
            with open(target, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["x", "y", "ci_low", "ci_high"])
                for row in zip(s["x"], s["y"], s["ci_low"], s["ci_high"]):
                    w.writerow([repr(float(v)) for v in row])
            written.append(target)
        if not written:
            raise FileNotFoundError(f"no plottable series in {artdir}")
    else:
        raise ValueError(f"unknown export format {fmt!r}")
    return written


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="shl", description="Stochastic homogenization lattice laboratory")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        if config_required:
            p.add_argument("config", help="TOML experiment configuration")
        p.add_argument("--solver", choices=("pcg", "meyers"))
        p.add_argument("--tol", type=float)
        p.add_argument("--max-iter", type=int, dest="max_iter")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default="out", help="artifact root (default: out)")
        p.add_argument("--force", action="store_true", help="recompute even if artifacts exist")

    for name in SUBCOMMANDS:
        if name in ("rates", "export"):
            continue
        common(sub.add_parser(name, help=f"run the {name} experiment"))
    rp = sub.add_parser("rates", help="fit a convergence exponent over an eps ladder")
    common(rp, config_required=False)
    rp.add_argument("config", nargs="?", help="optional TOML for covariance/map/solver/ensemble")
    rp.add_argument("--experiment", default="oscillation")
    rp.add_argument("--d", type=int, required=True)
    rp.add_argument("--eps", required=True, help="e.g. 1/16..1/256 or 1/8,1/16,1/32")
    rp.add_argument("--samples", type=int, default=8)
    rp.add_argument("--period", type=float, default=8.0, help="macro period; the grid has period/eps sites per axis")
    rp.add_argument("--lam", type=float, default=0.25)
    ep = sub.add_parser("export", help="export csv or plot data from an artifact directory")
    ep.add_argument("artifacts")
    ep.add_argument("--format", choices=("csv", "plotdata"), default="plotdata")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        if args.command == "export":
            for path in export(Path(args.artifacts), args.format):
                print(path)
            return 0
        if args.command == "rates":
            cfg = _rates_config(args)
            execute(cfg, Path(args.out), args.force, runner=run_rates)
            return 0
        cfg = ExperimentConfig.load(args.config)
        cfg = ExperimentConfig.from_dict(_apply_overrides(cfg.doc, args))
        if cfg.name != args.command:
            raise ConfigError(f"[experiment].name: {cfg.name!r} does not match subcommand {args.command!r}")
        execute(cfg, Path(args.out), args.force)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ComputeError as exc:
        print(f"compute failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
