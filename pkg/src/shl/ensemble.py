"""Monte-Carlo driver, spectral-gap probe and annealed Calderon-Zygmund constant probe."""
from __future__ import annotations

import csv
import io
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.ndimage import uniform_filter

from .correctors import (
    compute_correctors,
    compute_massive_correctors,
    corrector_sensitivity_check,
    increment_power_means,
)
from .homogenization import (
    MacroProfile,
    fluctuation_observables,
    fluctuation_sensitivity_check,
    massive_splitting,
    oscillation_error,
)
from .lattice import KIND_EDGE, PeriodicGrid
from .randomfield import (
    CoefficientField,
    CoefficientMap,
    CovarianceSpec,
    covariance_function,
    sample_coefficient,
)
from .solver import MassiveProblem, SolverConfig, solve
from .stats import (  # noqa: F401  (public re-exports)
    MomentEstimate,
    RateFit,
    mean_ci,
    mixed_norm,
    moment_estimate,
    rate_fit,
)
from .util import canonical_hash, fft_workers, sample_rng, split_seed, to_jsonable


@dataclass(frozen=True)
class EnsembleConfig:
    n_samples: int
    base_seed: int
    grid: PeriodicGrid
    cov: CovarianceSpec
    cmap: CoefficientMap = CoefficientMap()
    solver: SolverConfig = SolverConfig()
    workers: int | None = None

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if self.cov.d != self.grid.d:
            raise ValueError("covariance dimension does not match the grid")

    def sample_seed(self, index: int) -> int:
        return split_seed(self.base_seed, index)

    def coefficient(self, index: int) -> tuple[CoefficientField, np.ndarray]:
        return sample_coefficient(self.grid, self.cov, self.cmap, self.sample_seed(index))

    def with_grid(self, grid: PeriodicGrid) -> "EnsembleConfig":
        cov = CovarianceSpec(self.cov.nu, self.cov.variance, grid.d)
        return EnsembleConfig(self.n_samples, self.base_seed, grid, cov, self.cmap, self.solver, self.workers)

    def as_dict(self) -> dict:
        return {"n_samples": self.n_samples, "base_seed": self.base_seed, "grid": self.grid.as_dict(),
                "covariance": self.cov.as_dict(), "map": self.cmap.as_dict(), "solver": self.solver.as_dict()}

    def hash(self) -> str:
        return canonical_hash(self.as_dict())


# ---------------------------------------------------------------------------
# registered per-sample computations


def _exp_correctors(cfg: EnsembleConfig, a, gvals, params) -> dict:
    cs = compute_correctors(a, cfg.solver)
    row = {f"abar_{i}{j}": cs.abar_box[i, j] for i in range(cfg.grid.d) for j in range(cfg.grid.d)}
    row.update({f"res_{k}": v for k, v in cs.residuals.items()})
    row["iterations"] = cs.iterations
    row["identity_ok"] = int(cs.identity_ok(cfg.solver.tol))
    for lag in params.get("lags", ()):
        for r in params.get("r_list", (1.0,)):
            row[f"phi_inc_{lag}_r{r:g}"] = increment_power_means(cfg.grid, cs.phi, lag, r)
            if cfg.grid.d > 1:
                row[f"sigma_inc_{lag}_r{r:g}"] = increment_power_means(cfg.grid, cs.sigma, lag, r)
    for r in params.get("grad_r_list", ()):
        row[f"grad_phi_pm_r{r:g}"] = float(np.mean(np.sum(cs.grad_phi**2, axis=(0, 1)) ** r))
    return row


def _exp_massive(cfg, a, gvals, params) -> dict:
    T = float(params.get("T", 16.0))
    ms = compute_massive_correctors(a, T, cfg.solver)
    row = {"T": T}
    row.update({f"abarT_{i}{j}": ms.abar_T[i, j] for i in range(cfg.grid.d) for j in range(cfg.grid.d)})
    row.update({f"res_{k}": v for k, v in ms.residuals.items()})
    row["identity_ok"] = int(ms.identity_ok(cfg.solver.tol))
    return row


def _macro(cfg, params) -> MacroProfile:
    eps = float(params["eps"])
    return MacroProfile.default(eps, cfg.grid.d, float(params.get("period", cfg.grid.L * eps)), cfg.grid.h)


def _exp_oscillation(cfg, a, gvals, params) -> dict:
    macro = _macro(cfg, params)
    cs = compute_correctors(a, cfg.solver)
    res = oscillation_error(a, cs, macro, float(params.get("p", 2.0)), cfg.solver, params.get("abar"))
    return {"eps": macro.epsilon, "L": cfg.grid.L, "error_norm": res.error_norm,
            "res_12": res.residual_check, "res_flux": cs.residuals["flux_decomposition"]}


def _exp_fluctuation(cfg, a, gvals, params) -> dict:
    macro = _macro(cfg, params)
    cs = compute_correctors(a, cfg.solver)
    abar = params.get("abar")
    abar = cs.abar_box if abar is None else np.asarray(abar)
    rec = fluctuation_observables(a, cs, macro, abar, cfg.solver)
    row = rec.row()
    row.pop("seed")
    return row


def _exp_splitting(cfg, a, gvals, params) -> dict:
    T, tau = float(params.get("T", 64.0)), float(params.get("tau", 16.0))
    rng = sample_rng(params.get("rhs_seed", 0), 1)
    g = rng.standard_normal(cfg.grid.shape)
    f = rng.standard_normal((cfg.grid.d,) + cfg.grid.shape)
    sp = massive_splitting(a, T, tau, g, f, cfg.solver)
    return {"T": T, "tau": tau, **{f"res_{k}": v for k, v in sp.residuals.items()}}


def _exp_sensitivity(cfg, a, gvals, params) -> dict:
    grid = cfg.grid
    rng = sample_rng(params.get("test_seed", 0), 2)
    eps_list = tuple(params.get("eps_list", (1e-2, 1e-3, 1e-4)))
    da = single_edge_perturbation(a, max(eps_list))
    rep = corrector_sensitivity_check(a, rng.standard_normal((grid.d,) + grid.shape), da, eps_list)
    return {"rel_err_mid": rep.rel_errors[len(eps_list) // 2], "slope": rep.slope,
            "rel_err_flux_mid": rep.rel_errors_flux[len(eps_list) // 2], "slope_flux": rep.slope_flux}


REGISTRY: dict[str, Callable] = {
    "correctors": _exp_correctors,
    "massive_correctors": _exp_massive,
    "oscillation": _exp_oscillation,
    "fluctuation": _exp_fluctuation,
    "splitting": _exp_splitting,
    "sensitivity": _exp_sensitivity,
}


def single_edge_perturbation(a: CoefficientField, eps_max: float, edge=None) -> np.ndarray:
    """Unit-size perturbation on one edge, scaled down only if ``a +- eps_max da`` would leave ``[lam, 1]``.

    By default the edge with the largest ellipticity margin is used.
    """
    vals = a.values
    margin = np.minimum(vals - a.lam, 1.0 - vals)
    if edge is None:
        edge = np.unravel_index(int(np.argmax(margin)), vals.shape)
    da = np.zeros_like(vals)
    da[tuple(edge)] = min(1.0, 0.5 * margin[tuple(edge)] / eps_max)
    return da


@dataclass
class SampleTable:
    experiment: str
    config: EnsembleConfig
    params: dict
    rows: list = field(default_factory=list)

    @property
    def ok_rows(self) -> list:
        return [r for r in self.rows if not r.get("error")]

    @property
    def failures(self) -> list:
        return [r for r in self.rows if r.get("error")]

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.ok_rows], dtype=float)

    def columns(self) -> list:
        cols = ["index", "seed"]
        for r in self.rows:
            for k in r:
                if k not in cols and k != "error":
                    cols.append(k)
        return cols + ["error"]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        cols = self.columns()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            w.writerow([_fmt(r.get(c, "")) for c in cols])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _run_one(args):
    cfg, name, params, index = args
    seed = cfg.sample_seed(index)
    row = {"index": index, "seed": seed}
    try:
        a, gvals = cfg.coefficient(index)
        row.update(REGISTRY[name](cfg, a, gvals, params))
        row["error"] = ""
    except Exception as exc:  # per-row failure, recorded not raised
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def run_ensemble(config: EnsembleConfig, experiment: str, params: dict | None = None) -> SampleTable:
    """Run a registered per-sample computation over ``config.n_samples`` samples.

    Samples use ``split(base_seed, index)``; rows come back in index order
    regardless of the worker count.
    """
    if experiment not in REGISTRY:
        raise KeyError(f"unknown experiment {experiment!r}; registered: {sorted(REGISTRY)}")
    params = dict(params or {})
    jobs = [(config, experiment, params, i) for i in range(config.n_samples)]
    workers = config.workers or fft_workers()
    if workers > 1 and config.n_samples > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_one, jobs))
    else:
        rows = [_run_one(j) for j in jobs]
    table = SampleTable(experiment, config, params, rows)
    if not table.ok_rows:
        raise RuntimeError(f"all {config.n_samples} samples failed; first error: {rows[0]['error']}")
    return table


# ---------------------------------------------------------------------------
# spectral-gap probe


@dataclass
class SpectralGapResult:
    functional: str
    var_estimate: MomentEstimate
    rhs_estimate: float
    rhs_ci: tuple
    ratio: float
    exact_var: float | None = None
    L: float = 0.0

    def as_dict(self) -> dict:
        return to_jsonable({"functional": self.functional, "var": self.var_estimate.as_dict(),
                            "rhs": self.rhs_estimate, "rhs_ci": self.rhs_ci, "ratio": self.ratio,
                            "exact_var": self.exact_var, "L": self.L})


def carre_du_champ(grid: PeriodicGrid, dF: np.ndarray) -> float:
    """``int (avg_{B_1(x)} |dF/da|)^2 dx`` for per-edge derivatives ``dF`` (shape ``(d, *grid)``)."""
    density = np.sum(np.abs(dF), axis=0) / grid.cell_volume
    m = int(math.floor(1.0 / grid.h + 1e-12))
    local = uniform_filter(density, size=2 * m + 1, mode="wrap")
    return float(grid.cell_volume * np.sum(local**2))


def _linear_weights(grid: PeriodicGrid) -> np.ndarray:
    x = grid.coordinates()
    c = grid.L / 2
    r2 = sum((x[k] - c) ** 2 for k in range(grid.d))
    bump = np.exp(-r2 / (2 * (grid.L / 8) ** 2))
    return grid.cell_volume * np.stack([bump] * grid.d) / np.sqrt(np.sum(bump**2) * grid.cell_volume)


def linear_functional_variance(grid: PeriodicGrid, cov: CovarianceSpec, w: np.ndarray) -> float:
    """Exact ``Var(sum_j sum_x w_j(x) g_j(x))`` from the torus covariance of each direction."""
    total = 0.0
    for j in range(grid.d):
        off = np.zeros(grid.d)
        off[j] = 0.5
        c = covariance_function(grid, cov, off)
        cw = np.fft.ifftn(np.fft.fftn(c) * np.fft.fftn(w[j])).real
        total += float(np.sum(w[j] * cw))
    return total


def spectral_gap_probe(config: EnsembleConfig, functional: str = "flux", seed: int = 0) -> SpectralGapResult:
    """Monte-Carlo estimates of ``Var F`` and of the averaged carre-du-champ (``r = 1``).

    ``functional``: ``"linear"`` (``F = sum w . g``), ``"flux"`` (box average of
    ``q_1 . e_1``) or ``"constant"`` (a-independent).
    """
    grid = config.grid
    cmap = config.cmap
    Fs, rhs = [], []
    exact = None
    w = _linear_weights(grid) if functional == "linear" else None
    if functional == "linear":
        exact = linear_functional_variance(grid, config.cov, w)
    for i in range(config.n_samples):
        a, gvals = config.coefficient(i)
        if functional == "linear":
            Fs.append(float(np.sum(w * gvals)))
            dF = w / cmap.prime(gvals)  # dF/da = (dF/dg) / A'(g)
        elif functional == "flux":
            cs = compute_correctors(a, config.solver)
            U = np.eye(grid.d)[0].reshape((grid.d,) + (1,) * grid.d) + cs.grad_phi[0]
            Fs.append(float(cs.abar_box[0, 0]))
            dF = U * U / grid.size
        elif functional == "constant":
            Fs.append(1.0)
            dF = np.zeros((grid.d,) + grid.shape)
        else:
            raise KeyError(f"unknown functional {functional!r}")
        rhs.append(carre_du_champ(grid, dF))
    Fs = np.asarray(Fs)
    var = moment_estimate(Fs - Fs.mean(), 1.0, seed=seed) if len(Fs) >= 8 else MomentEstimate(
        1.0, float(np.var(Fs)), float(np.var(Fs)), float(np.var(Fs)), len(Fs))
    m, lo, hi = mean_ci(rhs)
    ratio = var.value / m if m > 0 else (0.0 if var.value == 0 else math.inf)
    return SpectralGapResult(functional, var, m, (lo, hi), ratio, exact, grid.L)


# ---------------------------------------------------------------------------
# annealed CZ probe


@dataclass
class CZRow:
    T: float
    rhs: str
    ratio: float
    failures: int = 0


@dataclass
class CZProbeResult:
    p: float
    r_prime: float
    r: float
    rows: list
    max_ratio: dict  # T -> max ratio over the rhs family (lower bound for C(T))

    def as_dict(self) -> dict:
        return to_jsonable({"p": self.p, "r_prime": self.r_prime, "r": self.r,
                            "rows": [r.__dict__ for r in self.rows],
                            "max_ratio": {str(k): v for k, v in self.max_ratio.items()}})


def _rhs(kind: str, grid: PeriodicGrid, a: CoefficientField, rng):
    d = grid.d
    x = grid.coordinates()
    if kind == "mode":
        arg = 2 * np.pi * x[0] / grid.L
        f = np.zeros((d,) + grid.shape)
        f[0] = np.cos(arg)
        if d > 1:
            f[1] = np.sin(2 * np.pi * x[1] / grid.L)
        return np.sin(arg), f
    if kind == "noise":
        return rng.standard_normal(grid.shape), rng.standard_normal((d,) + grid.shape)
    if kind == "coefficient":
        f = np.zeros((d,) + grid.shape)
        f[0] = a.values[0]
        return np.zeros(grid.shape), f
    raise KeyError(f"unknown rhs generator {kind!r}")


def _joint(u_like, grad, T):
    return np.concatenate([u_like[None] / math.sqrt(T), grad], axis=0)


def cz_constant_probe(config: EnsembleConfig, p: float, r_prime: float, r: float, T_list,
                      rhs_family=("mode", "noise", "coefficient"), coefficient: str = "random",
                      constant: float = 1.0) -> CZProbeResult:
    """Empirical lower bounds for the smallest ``C`` with
    ``||(u/sqrt T, grad u)||_{p,r'} <= C ||(g/sqrt T, f)||_{p,r}``.

    ``coefficient``: ``"random"`` samples the ensemble, ``"constant"`` uses
    ``constant * Id`` for every sample.
    """
    if not 1 <= r_prime <= r:
        raise ValueError("need 1 <= r' <= r")
    grid = config.grid
    rows = []
    for T in T_list:
        for kind in rhs_family:
            sols, data = [], []
            failures = 0
            for i in range(config.n_samples):
                if coefficient == "random":
                    a, _ = config.coefficient(i)
                else:
                    a = CoefficientField.constant(grid, constant, min(constant, 1.0))
                rng = sample_rng(config.sample_seed(i), 3, int(T) if math.isfinite(T) else 0)
                g, f = _rhs(kind, grid, a, rng)
                coef = a if coefficient == "random" else constant * np.eye(grid.d)
                try:
                    s = solve(MassiveProblem(grid, coef, T, g, f), config.solver)
                except Exception:
                    failures += 1
                    continue
                sols.append(_joint(s.u, s.grad_u, T))
                data.append(_joint(g, f, T))
            if not sols:
                rows.append(CZRow(T, kind, math.nan, failures))
                continue
            num = mixed_norm(grid, np.stack(sols), p, r_prime, kind=KIND_EDGE)
            den = mixed_norm(grid, np.stack(data), p, r, kind=KIND_EDGE)
            rows.append(CZRow(float(T), kind, num / den if den > 0 else 0.0, failures))
    max_ratio = {}
    for row in rows:
        if not math.isnan(row.ratio):
            max_ratio[row.T] = max(max_ratio.get(row.T, 0.0), row.ratio)
    return CZProbeResult(p, r_prime, r, rows, max_ratio)


