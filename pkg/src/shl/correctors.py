"""Massless and massive extended correctors, homogenized coefficients and corrector statistics.

For a diagonal edge coefficient ``a`` the correctors are

* ``phi_i``: ``-div a(grad phi_i + e_i) = 0``, mean-zero;
* ``q_i = a(e_i + grad phi_i)`` and ``abar_box e_i = mean(q_i)``;
* ``sigma_i``: mean-zero solution of ``-Lap_h sigma_ijk = D+_j q_ik - D+_k q_ij``,

so that ``q_i = abar_box e_i + div sigma_i`` up to the solver residual.  The
massive triple ``(phi_T, sigma_T, psi_T)`` replaces ``-Lap_h`` by ``1/T - Lap_h``
and satisfies ``q_T,i = abar_T e_i + div sigma_T,i + psi_T,i / T``.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fieldio import read_field, write_field
from .lattice import (
    KIND_EDGE,
    KIND_PLAQUETTE,
    KIND_SCALAR,
    PeriodicGrid,
    curl,
    divergence,
    divergence_tensor,

    gradient,

    laplacian,
    solve_shifted_laplacian,
)
from .randomfield import CoefficientField, ellipticity_check
from .solver import (
    Coefficient,
    MassiveProblem,
    SolverConfig,
    dual_norm,
    solve_variable,
)
from .stats import MomentEstimate, mean_ci, moment_estimate, mu_d  # noqa: F401  (mu_d re-exported)
from .util import canonical_hash, to_jsonable


def _unit_fluxes(a: CoefficientField) -> np.ndarray:
    """``f[i] = a e_i`` as a batch of edge fields, shape ``(d, d, *grid)``."""
    d = a.grid.d
    f = np.zeros((d, d) + a.grid.shape)
    for i in range(d):
        f[i, i] = a.values[i]
    return f


def _fluxes(a: CoefficientField, grad_phi: np.ndarray) -> np.ndarray:
    d = a.grid.d
    return a.values[None] * (np.eye(d).reshape((d, d) + (1,) * d) + grad_phi)


def _rel(num: float, den: float) -> float:
    return num / den if den > 0 else num


@dataclass
class CorrectorSet:
    """Massless extended correctors on one sample.

    Arrays: ``phi (d, *grid)``, ``grad_phi`` and ``q`` ``(d, d, *grid)`` with the
    corrector index first, ``sigma (d, n_pairs, *grid)``.
    """

    a: CoefficientField = field(repr=False)
    phi: np.ndarray = field(repr=False)
    grad_phi: np.ndarray = field(repr=False)
    q: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)
    abar_box: np.ndarray
    residuals: dict
    iterations: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def grid(self) -> PeriodicGrid:
        return self.a.grid

    @property
    def d(self) -> int:
        return self.a.grid.d

    def coefficient_bounds(self) -> tuple[float, float]:
        """Pooled harmonic and arithmetic means of the coefficient (Reuss and Voigt)."""
        v = self.a.values
        return float(1.0 / np.mean(1.0 / v)), float(np.mean(v))

    def identity_ok(self, tol: float) -> bool:
        r = self.residuals
        return r["flux_decomposition"] <= 10 * tol and r["div_q"] <= 10 * tol

    def save(self, directory, provenance: dict | None = None) -> Path:
        return save_correctors(self, directory, provenance)


@dataclass
class MassiveCorrectorSet:
    a: CoefficientField = field(repr=False)
    T: float
    phi_T: np.ndarray = field(repr=False)
    grad_phi_T: np.ndarray = field(repr=False)
    q_T: np.ndarray = field(repr=False)
    sigma_T: np.ndarray = field(repr=False)
    psi_T: np.ndarray = field(repr=False)
    abar_T: np.ndarray
    residuals: dict
    iterations: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def grid(self) -> PeriodicGrid:
        return self.a.grid

    @property
    def d(self) -> int:
        return self.a.grid.d

    def identity_ok(self, tol: float) -> bool:
        return self.residuals["flux_decomposition"] <= 10 * tol


def compute_correctors(a: CoefficientField, config: SolverConfig = SolverConfig()) -> CorrectorSet:
    """Solve the ``d`` corrector problems (batched PCG) and the flux-corrector Poisson problems."""
    rep = ellipticity_check(a)
    if not rep.passed:
        raise ValueError(f"coefficient field is not elliptic (worst entry at {rep.worst})")
    grid = a.grid
    d = grid.d
    f = _unit_fluxes(a)
    if a.is_constant:
        phi = np.zeros((d,) + grid.shape)
        iters = 0
        solver_res = 0.0
    else:
        sol = solve_variable(MassiveProblem(grid, a, math.inf, None, f), config)
        phi, iters, solver_res = sol.u, sol.iterations, sol.residual
    grad_phi = gradient(grid, phi)
    q = _fluxes(a, grad_phi)
    abar = np.mean(q, axis=tuple(range(-d, 0))).T  # abar[j, i] = mean(q_i . e_j)
    sigma = solve_shifted_laplacian(grid, curl(grid, q), 0.0) if d > 1 else np.zeros((d, 0) + grid.shape)
    residuals = _massless_residuals(grid, a, phi, q, sigma, abar, f)
    residuals["solver"] = solver_res
    return CorrectorSet(a, phi, grad_phi, q, sigma, abar, residuals, iters,
                        {"d": d, "n": grid.n, "h": grid.h, "lambda": a.lam, "L": grid.L})


def _massless_residuals(grid, a, phi, q, sigma, abar, f) -> dict:
    d = grid.d
    coef = Coefficient(grid, a)
    abar_pre = coef.mean_scalar
    div_q = divergence(grid, q)
    rhs = divergence(grid, f)
    dq = dual_norm(grid, div_q, math.inf, abar_pre)
    db = dual_norm(grid, rhs, math.inf, abar_pre)
    div_rel = float(np.max(np.where(db > 0, dq / np.where(db > 0, db, 1.0), dq)))
    const = abar.T.reshape((d, d) + (1,) * d)  # abar e_i as a constant edge field
    ds = divergence_tensor(grid, sigma) if d > 1 else 0.0
    defect = q - const - ds
    flux = max(_rel(float(np.linalg.norm(defect[i])), float(np.linalg.norm(q[i]))) for i in range(d))
    mean_grad = float(np.max(np.abs(np.mean(gradient(grid, phi), axis=tuple(range(-d, 0))))))
    out = {
        "div_q": div_rel,
        "flux_decomposition": flux,
        "mean_grad_phi": mean_grad,
        "mean_phi": float(np.max(np.abs(np.mean(phi, axis=tuple(range(-d, 0)))))),
        "abar_asymmetry": float(np.max(np.abs(abar - abar.T))),
    }
    if d > 1:
        cq = curl(grid, q)
        eq = -laplacian(grid, sigma) - cq
        out["sigma_equation"] = _rel(float(np.linalg.norm(eq)), float(np.linalg.norm(cq)))
        out["mean_sigma"] = float(np.max(np.abs(np.mean(sigma, axis=tuple(range(-d, 0))))))
    return out


def compute_massive_correctors(a: CoefficientField, T: float,
                               config: SolverConfig = SolverConfig()) -> MassiveCorrectorSet:
    if not (1.0 <= T < math.inf):
        raise ValueError("massive correctors need 1 <= T < inf")
    rep = ellipticity_check(a)
    if not rep.passed:
        raise ValueError(f"coefficient field is not elliptic (worst entry at {rep.worst})")
    grid = a.grid
    d = grid.d
    f = _unit_fluxes(a)
    if a.is_constant:
        phi = np.zeros((d,) + grid.shape)
        iters, solver_res = 0, 0.0
    else:
        sol = solve_variable(MassiveProblem(grid, a, T, None, f), config)
        phi, iters, solver_res = sol.u, sol.iterations, sol.residual
    grad_phi = gradient(grid, phi)
    q = _fluxes(a, grad_phi)
    abar = np.mean(q, axis=tuple(range(-d, 0))).T
    mass = 1.0 / T
    sigma = solve_shifted_laplacian(grid, curl(grid, q), mass) if d > 1 else np.zeros((d, 0) + grid.shape)
    const = abar.T.reshape((d, d) + (1,) * d)
    psi_rhs = q - const - grad_phi
    psi = solve_shifted_laplacian(grid, psi_rhs, mass)

    coef = Coefficient(grid, a)
    eq = phi / T - divergence(grid, q)
    rhs = divergence(grid, f)
    en = dual_norm(grid, eq, T, coef.mean_scalar)
    bn = dual_norm(grid, rhs, T, coef.mean_scalar)
    ds = divergence_tensor(grid, sigma) if d > 1 else 0.0
    defect = q - const - ds - psi / T
    residuals = {
        "phi_equation": float(np.max(np.where(bn > 0, en / np.where(bn > 0, bn, 1.0), en))),
        "psi_equation": _rel(float(np.linalg.norm(mass * psi - laplacian(grid, psi) - psi_rhs)),
                             float(np.linalg.norm(psi_rhs))),
        "flux_decomposition": max(
            _rel(float(np.linalg.norm(defect[i])), float(np.linalg.norm(q[i]))) for i in range(d)
        ),
        "solver": solver_res,
    }
    if d > 1:
        cq = curl(grid, q)
        residuals["sigma_equation"] = _rel(
            float(np.linalg.norm(mass * sigma - laplacian(grid, sigma) - cq)), float(np.linalg.norm(cq))
        )
    return MassiveCorrectorSet(a, T, phi, grad_phi, q, sigma, psi, abar, residuals, iters,
                               {"d": d, "n": grid.n, "h": grid.h, "lambda": a.lam, "T": T})


@dataclass
class HomogenizedEstimate:
    abar: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    n: int
    eigenvalues: np.ndarray
    reuss: float  # harmonic-mean lower bound
    voigt: float  # arithmetic-mean upper bound
    stderr: float
    within_bounds: bool

    def as_dict(self) -> dict:
        return to_jsonable(self.__dict__)


def homogenized_estimate(sets, level: float = 0.9, slack: float = 3.0) -> HomogenizedEstimate:
    """Ensemble average of ``abar_box`` with per-entry t-intervals and the Voigt-Reuss check.

    The bounds are computed from the pooled coefficient values of the same
    samples; eigenvalues of the symmetrized estimate must lie in
    ``[reuss - slack*se, voigt + slack*se]``.
    """
    sets = list(sets)
    if not sets:
        raise ValueError("need at least one sample")
    mats = np.stack([s.abar_box for s in sets])
    n = mats.shape[0]
    mean = mats.mean(axis=0)
    if n > 1:
        lo = np.empty_like(mean)
        hi = np.empty_like(mean)
        for idx in np.ndindex(mean.shape):
            _, lo[idx], hi[idx] = mean_ci(mats[(slice(None),) + idx], level)
        se = float(np.max(mats.std(axis=0, ddof=1))) / math.sqrt(n)
    else:
        lo, hi, se = mean.copy(), mean.copy(), 0.0
    inv = np.mean([np.mean(1.0 / s.a.values) for s in sets])
    arith = np.mean([np.mean(s.a.values) for s in sets])
    reuss, voigt = float(1.0 / inv), float(arith)
    eig = np.linalg.eigvalsh(0.5 * (mean + mean.T))
    tol = 1e-12
    ok = bool(eig.min() >= reuss - slack * se - tol and eig.max() <= voigt + slack * se + tol)
    return HomogenizedEstimate(mean, lo, hi, n, eig, reuss, voigt, se, ok)


def _lag_vectors(d: int, lag) -> list[tuple[int, ...]]:
    """An integer lag means ``|x| e_j`` averaged over the axes; a tuple is used as is."""
    if np.ndim(lag) == 0:
        out = []
        for j in range(d):
            v = [0] * d
            v[j] = int(lag)
            out.append(tuple(v))
        return out
    return [tuple(int(c) for c in lag)]


def increment_power_means(grid: PeriodicGrid, field_values: np.ndarray, lag, r: float) -> float:
    """Spatial mean over base points of ``|F(y + x) - F(y)|^(2r)``, ``|.|`` over leading components."""
    vals = np.asarray(field_values, dtype=float)
    vals = vals.reshape((-1,) + grid.shape)
    acc = 0.0
    vecs = _lag_vectors(grid.d, lag)
    for v in vecs:
        shifted = np.roll(vals, tuple(-c for c in v), axis=tuple(range(1, grid.d + 1)))
        inc2 = np.sum((shifted - vals) ** 2, axis=0)
        acc += float(np.mean(inc2**r))
    return acc / len(vecs)


def corrector_increment_moments(sets, lags, r: float = 1.0, seed: int = 0, level: float = 0.9) -> dict:
    """``<|(phi,sigma)(x) - (phi,sigma)(0)|^(2r)>^(1/r)`` per lag, for ``phi`` and ``sigma`` separately.

    Stationarity lets every base point contribute, so each sample enters through
    its spatial mean of the increment power; the bootstrap runs over samples.
    """
    sets = list(sets)
    grid = sets[0].grid
    out = {"phi": {}, "sigma": {}}
    for lag in lags:
        norm = math.sqrt(sum(c * c for c in _lag_vectors(grid.d, lag)[0]))
        if norm * grid.h > grid.L / 4 + 1e-12:
            warnings.warn(f"lag {lag} exceeds L/4; periodization dominates", RuntimeWarning, stacklevel=2)
        for name in ("phi", "sigma"):
            if name == "sigma" and grid.d == 1:
                continue
            pm = [increment_power_means(grid, getattr(s, name), lag, r) for s in sets]
            if len(pm) >= 8:
                est = moment_estimate(pm, r, seed=seed, powered=True, level=level)
            else:
                raw = float(np.mean(pm))
                est = MomentEstimate(r, raw ** (1 / r), raw ** (1 / r), raw ** (1 / r), len(pm), raw,
                                     "fewer than 8 samples: no interval")
            if est.warning:
                warnings.warn(est.warning, RuntimeWarning, stacklevel=2)
            out[name][lag if np.ndim(lag) == 0 else tuple(lag)] = est
    return out


# ---------------------------------------------------------------------------
# sensitivity (vertical derivative) checks


@dataclass
class SensitivityReport:
    eps: list
    fd: list
    formula: float
    rel_errors: list
    slope: float
    fd_flux: list = field(default_factory=list)
    formula_flux: float = 0.0
    rel_errors_flux: list = field(default_factory=list)
    slope_flux: float = math.nan

    def as_dict(self) -> dict:
        return to_jsonable(self.__dict__)


def _check_perturbation(a: CoefficientField, delta_a: np.ndarray, eps_list) -> None:
    for eps in eps_list:
        for s in (1.0, -1.0):
            v = a.values + s * eps * delta_a
            if v.min() < a.lam - 1e-14 or v.max() > 1.0 + 1e-14:
                raise ValueError(f"ellipticity violated at eps={eps:g}")


def _slope(eps, errs) -> float:
    e = np.asarray(eps, dtype=float)
    r = np.asarray(errs, dtype=float)
    ok = r > 0
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(e[ok]), np.log(r[ok]), 1)[0])


def _rel_err(fd, exact) -> float:
    scale = abs(exact)
    return abs(fd - exact) / scale if scale > 0 else abs(fd - exact)


def corrector_sensitivity_check(a: CoefficientField, g_test: np.ndarray, delta_a: np.ndarray,
                                eps_list=(1e-2, 1e-3, 1e-4), i: int = 0,
                                config: SolverConfig = SolverConfig(tol=1e-12)) -> SensitivityReport:
    """Finite differences of ``F = int g . grad phi_i`` and ``F* = int g . (q_i - abar e_i)``.

    The derivative formulas are ``dF = sum_edges grad v delta_a grad u`` with
    ``div(a grad v + g) = 0`` and ``dF* = sum_edges (grad v' + g) delta_a grad u``
    with ``div a(grad v' + g) = 0``, where ``u = x_i + phi_i``; ``abar`` is frozen.
    Central differences are formed from difference solves so no cancellation occurs.
    """
    grid = a.grid
    d = grid.d
    delta_a = np.asarray(delta_a, dtype=float).reshape((d,) + grid.shape)
    g_test = np.asarray(g_test, dtype=float).reshape((d,) + grid.shape)
    _check_perturbation(a, delta_a, eps_list)
    vol = grid.cell_volume
    ei = np.zeros((d,) + grid.shape)
    ei[i] = 1.0
    phi = solve_variable(MassiveProblem(grid, a, math.inf, None, a.values * ei), config).u
    grad_u = ei + gradient(grid, phi)
    # adjoint problems (a symmetric)
    both = np.stack([g_test, a.values * g_test])
    V = solve_variable(MassiveProblem(grid, a, math.inf, None, both), config)
    grad_v, grad_vp = V.grad_u[0], V.grad_u[1]
    formula = vol * float(np.sum(grad_v * delta_a * grad_u))
    formula_flux = vol * float(np.sum((grad_vp + g_test) * delta_a * grad_u))

    fd, fd_flux = [], []
    src = delta_a * grad_u
    for eps in eps_list:
        rhs = np.stack([eps * src, -eps * src])
        plus = CoefficientField(grid, a.values + eps * delta_a, a.lam)
        minus = CoefficientField(grid, a.values - eps * delta_a, a.lam)
        dp = solve_variable(MassiveProblem(grid, plus, math.inf, None, rhs[0]), config).grad_u
        dm = solve_variable(MassiveProblem(grid, minus, math.inf, None, rhs[1]), config).grad_u
        fd.append(vol * float(np.sum(g_test * (dp - dm))) / (2 * eps))
        # q(a +- e da) - q(a) = +-e da grad_u + (a +- e da) grad(delta phi)
        dq_p = eps * src + plus.values * dp
        dq_m = -eps * src + minus.values * dm
        fd_flux.append(vol * float(np.sum(g_test * (dq_p - dq_m))) / (2 * eps))
    errs = [_rel_err(x, formula) for x in fd]
    errs_f = [_rel_err(x, formula_flux) for x in fd_flux]
    return SensitivityReport(list(eps_list), fd, formula, errs, _slope(eps_list, errs),
                             fd_flux, formula_flux, errs_f, _slope(eps_list, errs_f))


# ---------------------------------------------------------------------------
# persistence


def save_correctors(cs: CorrectorSet, directory, provenance: dict | None = None) -> Path:
    """Directory of SHF1 fields plus ``manifest.json``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    grid = cs.grid
    prov = dict(provenance or {})
    write_field(out / "a.shf", grid, cs.a.values, KIND_EDGE, prov)
    for i in range(cs.d):
        write_field(out / f"phi_{i}.shf", grid, cs.phi[i], KIND_SCALAR, prov)
        write_field(out / f"q_{i}.shf", grid, cs.q[i], KIND_EDGE, prov)
        if cs.d > 1:
            write_field(out / f"sigma_{i}.shf", grid, cs.sigma[i], KIND_PLAQUETTE, prov)
    manifest = {
        "grid": grid.as_dict(),
        "lambda": cs.a.lam,
        "abar_box": cs.abar_box,
        "residuals": cs.residuals,
        "iterations": cs.iterations,
        "provenance": prov,
    }
    manifest["config_hash"] = prov.get("config_hash", canonical_hash(to_jsonable(manifest)))
    (out / "manifest.json").write_text(json.dumps(to_jsonable(manifest), sort_keys=True, indent=2) + "\n")
    return out


def load_correctors(directory) -> CorrectorSet:
    src = Path(directory)
    manifest = json.loads((src / "manifest.json").read_text())
    grid, _, avals, _ = read_field(src / "a.shf")
    a = CoefficientField(grid, avals, manifest["lambda"])
    d = grid.d
    phi = np.stack([read_field(src / f"phi_{i}.shf")[2] for i in range(d)])
    q = np.stack([read_field(src / f"q_{i}.shf")[2] for i in range(d)])
    if d > 1:
        sigma = np.stack([read_field(src / f"sigma_{i}.shf")[2] for i in range(d)])
    else:
        sigma = np.zeros((d, 0) + grid.shape)
    return CorrectorSet(a, phi, gradient(grid, phi), q, sigma, np.asarray(manifest["abar_box"]),
                        manifest["residuals"], manifest["iterations"], {"loaded_from": str(src)})


def voigt_reuss(a: CoefficientField) -> tuple[float, float]:
    v = a.values
    return float(1.0 / np.mean(1.0 / v)), float(np.mean(v))


