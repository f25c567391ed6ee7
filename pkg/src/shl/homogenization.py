"""Two-scale expansion, homogenization commutator, fluctuation observables and massive splitting.

Conventions on the lattice (all identities below are exact up to solver residuals):

* the macroscopic derivative is ``d_i ubar := D+_i ubar``, a scalar field
  attached to the sites, so ``grad ubar`` equals the diagonal of the macro
  gradient;
* a constant tensor acts site-attached, ``(abar F)_j(x) = sum_k abar_jk F_k(x)``;
* the two-scale expansion ``ut = ubar + phi_i d_i ubar`` has the exact gradient
  ``grad ut = d_i ubar (e_i + grad phi_i) + (S phi_i) grad d_i ubar`` where ``S``
  shifts along the edge direction;
* the error flux is ``R = a (S phi_i) grad d_i ubar - B(sigma_i, d_i ubar)``
  with ``B`` from :func:`shl.lattice.skew_flux`, so ``-div a grad(u - ut) = div R``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .correctors import CorrectorSet, MassiveCorrectorSet, _unit_fluxes
from .lattice import (
    PeriodicGrid,
    apply_constant_tensor,
    divergence,
    gradient,
    pointwise_norm,
    shifted_product,
    site_product,
    skew_flux,
    KIND_EDGE,
)
from .randomfield import CoefficientField
from .solver import (
    Coefficient,
    MassiveProblem,
    SolverConfig,
    apply_operator,
    dual_norm,
    solve_constant,
    solve_variable,
)
from .util import to_jsonable


def _axes(grid):
    return tuple(range(-grid.d, 0))


# ---------------------------------------------------------------------------
# macroscopic data


@dataclass(frozen=True)
class MacroProfile:
    """Band-limited periodic macroscopic data.

    ``f(x) = fhat(eps x)`` and ``g(x) = eps^d ghat(eps x)`` on a torus of side
    ``L = period / eps``.  Modes are ``(m, component, amplitude, phase)`` with
    ``fhat_c(y) += amplitude * cos(2 pi m.y / period + phase)``.
    """

    epsilon: float
    d: int
    period: float = 1.0
    f_modes: tuple = ()
    g_modes: tuple = ()
    h: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in (0, 1]")
        for modes in (self.f_modes, self.g_modes):
            for m, comp, _, _ in modes:
                if len(m) != self.d or not 0 <= comp < self.d:
                    raise ValueError("mode does not match the dimension")
                if max(abs(int(c)) for c in m) > 4:
                    raise ValueError("at most 4 modes per axis")

    @classmethod
    def default(cls, epsilon: float, d: int, period: float = 1.0, h: float = 1.0) -> "MacroProfile":
        f_modes, g_modes = [], []
        for j in range(d):
            m = [0] * d
            m[j] = 1
            f_modes.append((tuple(m), j, 1.0, 0.3 * j))
            g_modes.append((tuple(m), j, 1.0, 0.7 + 0.4 * j))
        if d >= 2:
            m = [0] * d
            m[0], m[1] = 1, 1
            f_modes.append((tuple(m), 0, 0.5, 1.1))
            g_modes.append((tuple(m), 1, 0.5, 0.2))
        return cls(epsilon, d, period, tuple(f_modes), tuple(g_modes), h)

    @property
    def L(self) -> float:
        return self.period / self.epsilon

    def grid(self) -> PeriodicGrid:
        n = self.L / self.h
        if abs(n - round(n)) > 1e-9:
            raise ValueError("period / (epsilon h) must be an integer")
        return PeriodicGrid(self.d, int(round(n)), self.h)

    def check_resolved(self, grid: PeriodicGrid) -> None:
        if abs(grid.L - self.L) > 1e-9 * self.L:
            raise ValueError(f"grid side {grid.L} does not match the macro box {self.L}")
        if 1.0 / (self.epsilon * grid.h) < 8:
            raise ValueError("macro profile under-resolved: need >= 8 grid points per unit macro length")

    def _evaluate(self, grid: PeriodicGrid, modes) -> np.ndarray:
        out = np.zeros((grid.d,) + grid.shape)
        for j in range(grid.d):
            off = np.zeros(grid.d)
            off[j] = 0.5
            y = self.epsilon * grid.coordinates(off)  # (d, *shape) positions of j-edges
            for m, comp, amp, phase in modes:
                if comp != j:
                    continue
                arg = 2 * np.pi * sum(m[k] * y[k] for k in range(grid.d)) / self.period + phase
                out[j] += amp * np.cos(arg)
        return out

    def f(self, grid: PeriodicGrid) -> np.ndarray:
        self.check_resolved(grid)
        return self._evaluate(grid, self.f_modes)

    def g(self, grid: PeriodicGrid) -> np.ndarray:
        self.check_resolved(grid)
        return self.epsilon**grid.d * self._evaluate(grid, self.g_modes)

    def as_dict(self) -> dict:
        return to_jsonable({"epsilon": self.epsilon, "period": self.period, "f_modes": self.f_modes,
                            "g_modes": self.g_modes, "h": self.h})


def macro_norm(grid: PeriodicGrid, eps: float, F: np.ndarray, p: float, kind: int = KIND_EDGE) -> float:
    """``(eps^d h^d sum |F|^p)^(1/p)``: the L^p norm in macroscopic coordinates."""
    mag = pointwise_norm(grid, F, kind)
    if math.isinf(p):
        return float(np.max(mag))
    return float((eps**grid.d * grid.cell_volume * np.sum(mag**p)) ** (1.0 / p))


# ---------------------------------------------------------------------------
# two-scale expansion


@dataclass
class TwoScale:
    u_tilde: np.ndarray = field(repr=False)
    grad_proxy: np.ndarray = field(repr=False)
    dbar: np.ndarray = field(repr=False)  # d_i ubar, (d, *grid)
    grad_u_tilde: np.ndarray = field(repr=False)


def _check_grid(grid: PeriodicGrid, other: PeriodicGrid):
    if grid != other:
        raise ValueError("grid mismatch between macroscopic field and correctors")


def two_scale_expand(u_bar: np.ndarray, correctors, grid: PeriodicGrid | None = None) -> TwoScale:
    """``ut = ubar + phi_i d_i ubar`` and ``grad_proxy = d_i ubar (e_i + grad phi_i)``.

    Works with massless and massive corrector sets.
    """
    cgrid = correctors.grid
    if grid is not None:
        _check_grid(grid, cgrid)
    u_bar = np.asarray(u_bar, dtype=float)
    if u_bar.shape != cgrid.shape:
        raise ValueError("grid mismatch between macroscopic field and correctors")
    phi, grad_phi = _phi_of(correctors)
    d = cgrid.d
    dbar = gradient(cgrid, u_bar)
    u_tilde = u_bar + np.sum(phi * dbar, axis=0)
    eye = np.eye(d).reshape((d, d) + (1,) * d)
    proxy = np.sum(site_product(cgrid, dbar, eye + grad_phi), axis=0)
    hess = gradient(cgrid, dbar)  # (i, j, *grid) = D+_j d_i ubar
    corr = np.sum(shifted_product(cgrid, phi, hess), axis=0)
    return TwoScale(u_tilde, proxy, dbar, proxy + corr)


def _phi_of(cs):
    if isinstance(cs, MassiveCorrectorSet):
        return cs.phi_T, cs.grad_phi_T
    return cs.phi, cs.grad_phi


def _sigma_of(cs):
    return cs.sigma_T if isinstance(cs, MassiveCorrectorSet) else cs.sigma


def error_flux(correctors, ts: TwoScale) -> np.ndarray:
    """``R = a (S phi_i) grad d_i ubar - B(sigma_i, d_i ubar)``."""
    grid = correctors.grid
    phi, _ = _phi_of(correctors)
    sigma = _sigma_of(correctors)
    hess = gradient(grid, ts.dbar)
    R = correctors.a.values * np.sum(shifted_product(grid, phi, hess), axis=0)
    if grid.d > 1:
        for i in range(grid.d):
            R = R - skew_flux(grid, sigma[i], ts.dbar[i])
    return R


def commutator_apply(grid: PeriodicGrid, a: CoefficientField, abar: np.ndarray, F: np.ndarray) -> np.ndarray:
    """``(a - abar) F`` with ``a`` edge-wise and ``abar`` site-attached."""
    return a.values * F - apply_constant_tensor(grid, abar, F)


def _rel(num, den):
    return float(num / den) if den > 0 else float(num)


# ---------------------------------------------------------------------------
# oscillation error


@dataclass
class OscillationResult:
    error_norm: float
    residual_check: float
    epsilon: float
    p: float
    L: float
    abar: np.ndarray
    iterations: int = 0
    fields: dict = field(default_factory=dict, repr=False)

    def as_dict(self) -> dict:
        return {"error_norm": self.error_norm, "residual_check": self.residual_check,
                "epsilon": self.epsilon, "p": self.p, "L": self.L, "abar": self.abar.tolist(),
                "iterations": self.iterations}


def oscillation_error(a: CoefficientField, correctors: CorrectorSet, macro: MacroProfile, p: float = 2.0,
                      config: SolverConfig = SolverConfig(), abar=None, keep_fields: bool = False
                      ) -> OscillationResult:
    """``||grad u - grad ut||_{L^p}`` (macro coordinates) and the residual of the error equation.

    ``u`` solves ``div(a grad u + f) = 0`` and ``ubar`` solves
    ``div(abar grad ubar + f) = 0``; ``abar`` defaults to ``abar_box`` so the
    error equation ``-div a grad(u - ut) = div R`` holds to solver tolerance.
    The residual is reported relative to ``||div f||_* + ||div R||_*``.
    """
    grid = a.grid
    _check_grid(grid, correctors.grid)
    abar = correctors.abar_box if abar is None else np.asarray(abar, dtype=float)
    f = macro.f(grid)
    if a.is_constant:
        sol = solve_constant(grid, a.values[0].flat[0] * np.eye(grid.d), math.inf, None, f)
    else:
        sol = solve_variable(MassiveProblem(grid, a, math.inf, None, f), config)
    ubar = solve_constant(grid, abar, math.inf, None, f).u
    ts = two_scale_expand(ubar, correctors)
    err = sol.grad_u - ts.grad_u_tilde
    norm = macro_norm(grid, macro.epsilon, err, p)
    R = error_flux(correctors, ts)
    coef = Coefficient(grid, a)
    res = apply_operator(grid, coef, math.inf, sol.u - ts.u_tilde) - divergence(grid, R)
    pre = coef.mean_scalar
    scale = float(dual_norm(grid, divergence(grid, f), math.inf, pre) + dual_norm(grid, divergence(grid, R), math.inf, pre))
    resid = _rel(float(dual_norm(grid, res, math.inf, pre)), scale)
    fields = {}
    if keep_fields:
        fields = {"u": sol.u, "u_bar": ubar, "u_tilde": ts.u_tilde, "error": err, "R": R}
    return OscillationResult(norm, resid, macro.epsilon, p, grid.L, abar, sol.iterations, fields)


# ---------------------------------------------------------------------------
# homogenization commutator


@dataclass
class CommutatorResult:
    Xi: np.ndarray = field(repr=False)  # (i, j, *grid): j-component of Xi e_i
    divergence_check: float = 0.0
    defects: list = field(default_factory=list, repr=False)


def _test_functions(grid: PeriodicGrid, count: int = 8) -> list[np.ndarray]:
    x = grid.coordinates()
    out = []
    modes = []
    for j in range(grid.d):
        m = [0] * grid.d
        m[j] = 1
        modes.append(m)
    if grid.d >= 2:
        modes.append([1, 1] + [0] * (grid.d - 2))
        modes.append([1, -1] + [0] * (grid.d - 2))
    modes.append([2] + [0] * (grid.d - 1))
    for m in modes:
        arg = 2 * np.pi * sum(m[k] * x[k] for k in range(grid.d)) / grid.L
        out.append(np.cos(arg))
        out.append(np.sin(arg))
    return out[:count]


def commutator_field(a: CoefficientField, correctors: CorrectorSet, abar=None, n_tests: int = 8
                     ) -> CommutatorResult:
    """``Xi e_i = (a - abar)(e_i + grad phi_i)`` and a weak check of the commutator identity.

    For ``u = x_l + phi_l`` and a test function ``v`` the lattice identity reads
    ``sum_x v [(a - abar_box) grad u]_j = sum_edges (S phi_j) grad v a grad u - sum_x B(sigma_j, v) . grad u``.
    The check always uses ``abar_box``, for which it is exact.
    """
    grid = a.grid
    d = grid.d
    abar_in = correctors.abar_box if abar is None else np.asarray(abar, dtype=float)
    eye = np.eye(d).reshape((d, d) + (1,) * d)
    U = eye + correctors.grad_phi
    Xi = np.stack([commutator_apply(grid, a, abar_in, U[i]) for i in range(d)])
    Xi_box = Xi if abar is None else np.stack(
        [commutator_apply(grid, a, correctors.abar_box, U[i]) for i in range(d)]
    )
    defects = []
    worst = 0.0
    for v in _test_functions(grid, n_tests):
        gv = gradient(grid, v)
        for l in range(d):
            gu = U[l]
            agu = a.values * gu
            for j in range(d):
                lhs = float(np.sum(v * Xi_box[l, j]))
                rhs = float(np.sum(shift_phi(grid, correctors.phi[j]) * gv * agu))
                if d > 1:
                    rhs -= float(np.sum(skew_flux(grid, correctors.sigma[j], v) * gu))
                scale = float(np.sum(np.abs(v) * np.abs(Xi_box[l, j]))) + float(
                    np.sum(np.abs(gv * agu)) * np.max(np.abs(correctors.phi[j]))
                )
                rel = _rel(abs(lhs - rhs), scale)
                defects.append(rel)
                worst = max(worst, rel)
    return CommutatorResult(Xi, worst, defects)


def shift_phi(grid: PeriodicGrid, phi: np.ndarray) -> np.ndarray:
    """``S_k phi`` stacked over the edge directions ``k``."""
    return shifted_product(grid, phi, np.ones((grid.d,) + grid.shape))


# ---------------------------------------------------------------------------
# fluctuations


class IdentityDefect(RuntimeError):
    pass


@dataclass
class FluctuationRecord:
    G: float
    G_tilde: float
    H: float
    F_det: float
    epsilon: float
    gread_defect: float
    split_defect: float
    seed: int | None = None
    iterations: int = 0
    fields: dict = field(default_factory=dict, repr=False)

    def row(self) -> dict:
        return {"seed": self.seed, "eps": self.epsilon, "G": self.G, "G_tilde": self.G_tilde, "H": self.H,
                "F_det": self.F_det, "gread_defect": self.gread_defect, "split_defect": self.split_defect}


def _macro_solves(grid, abar, macro):
    f = macro.f(grid)
    g = macro.g(grid)
    ubar = solve_constant(grid, abar, math.inf, None, f).u
    vbar = solve_constant(grid, np.asarray(abar).T, math.inf, None, g)
    return f, g, ubar, vbar.grad_u


def _H_value(grid, a, abar, h, grad_u, proxy):
    return grid.cell_volume * float(np.sum(h * commutator_apply(grid, a, abar, grad_u - proxy)))


def fluctuation_observables(a: CoefficientField, correctors: CorrectorSet, macro: MacroProfile, abar,
                            config: SolverConfig = SolverConfig(), seed=None, keep_fields: bool = False,
                            defect_limit: float | None = None) -> FluctuationRecord:
    """``G = int g . grad u``, ``F_det = int grad vbar . f``, ``G~ = int grad vbar . Xi grad ubar`` and
    ``H = int h . (a - abar)(grad u - d_i ubar (e_i + grad phi_i))`` with ``h = grad vbar``.

    ``abar`` is a fixed (deterministic) input.  Raises :class:`IdentityDefect`
    if ``G = int grad vbar (a - abar) grad u + F_det`` fails by more than
    ``defect_limit`` (default ``100 tol``).
    """
    grid = a.grid
    _check_grid(grid, correctors.grid)
    abar = np.asarray(abar, dtype=float)
    vol = grid.cell_volume
    f, g, ubar, hfield = _macro_solves(grid, abar, macro)
    if a.is_constant:
        grad_u = solve_constant(grid, a.values[0].flat[0] * np.eye(grid.d), math.inf, None, f).grad_u
        iters = 0
    else:
        sol = solve_variable(MassiveProblem(grid, a, math.inf, None, f), config)
        grad_u, iters = sol.grad_u, sol.iterations
    ts = two_scale_expand(ubar, correctors)
    G = vol * float(np.sum(g * grad_u))
    F_det = vol * float(np.sum(hfield * f))
    comm = vol * float(np.sum(hfield * commutator_apply(grid, a, abar, grad_u)))
    Gt = vol * float(np.sum(hfield * commutator_apply(grid, a, abar, ts.grad_proxy)))
    H = _H_value(grid, a, abar, hfield, grad_u, ts.grad_proxy)
    scale = abs(G) + abs(F_det) + abs(comm)
    gread = _rel(abs(G - comm - F_det), scale)
    split = _rel(abs(G - Gt - H - F_det), scale + abs(Gt) + abs(H))
    limit = 100 * config.tol if defect_limit is None else defect_limit
    if gread > limit:
        raise IdentityDefect(f"fluctuation identity defect {gread:.3e} exceeds {limit:.1e}")
    fields = {"grad_u": grad_u, "u_bar": ubar, "h": hfield} if keep_fields else {}
    return FluctuationRecord(G, Gt, H, F_det, macro.epsilon, gread, split, seed, iters, fields)


@dataclass
class FluctuationSensitivityReport:
    eps: list
    fd: list
    formula: float
    rel_errors: list
    slope: float
    w_consistency: float
    terms: tuple = ()

    def as_dict(self) -> dict:
        return to_jsonable(self.__dict__)


def fluctuation_sensitivity_check(a: CoefficientField, correctors: CorrectorSet, macro: MacroProfile, delta_a,
                                  eps_list=(1e-2, 1e-3, 1e-4), abar=None,
                                  config: SolverConfig = SolverConfig(tol=1e-12)
                                  ) -> FluctuationSensitivityReport:
    """Compare the vertical derivative of ``H`` with central finite differences.

    With ``h = grad vbar`` and ``ubar`` frozen, the derivative contracted with ``delta_a`` is
    ``sum delta_a [h (grad w + (S phi_i) grad d_i ubar) + grad W grad u - sum_i grad W_i (e_i + grad phi_i)]``:

    * ``w`` solves the error equation ``-div a grad w = div R`` (so the first
      factor equals ``grad u - proxy``);
    * ``W`` solves ``div(a grad W + (a - abar)^T h) = 0``;
    * ``W_i`` solve ``div(a grad W_i + d_i ubar (a - abar)^T h) = 0``.
    """
    from .correctors import _check_perturbation, _slope, _rel_err

    grid = a.grid
    d = grid.d
    vol = grid.cell_volume
    abar = correctors.abar_box if abar is None else np.asarray(abar, dtype=float)
    delta_a = np.asarray(delta_a, dtype=float).reshape((d,) + grid.shape)
    _check_perturbation(a, delta_a, eps_list)

    f, g, ubar, hfield = _macro_solves(grid, abar, macro)
    ts = two_scale_expand(ubar, correctors)

    def solve(coef, rhs_flux):
        return solve_variable(MassiveProblem(grid, coef, math.inf, None, rhs_flux), config)

    # a fresh, tighter corrector solve so the finite differences see a consistent base point
    eye = np.eye(d).reshape((d, d) + (1,) * d)
    phi_sol = solve(a, _unit_fluxes(a))
    phi = phi_sol.u
    U = eye + phi_sol.grad_u
    proxy = np.sum(site_product(grid, ts.dbar, U), axis=0)
    usol = solve(a, f)
    grad_u = usol.grad_u

    # auxiliary problems
    hess = gradient(grid, ts.dbar)
    Sphi_hess = np.sum(shifted_product(grid, phi, hess), axis=0)
    R = a.values * Sphi_hess
    if d > 1:
        sig = np.stack([_sigma_from(grid, a, U[i]) for i in range(d)])
        for i in range(d):
            R = R - skew_flux(grid, sig[i], ts.dbar[i])
    w = solve(a, R)
    first = w.grad_u + Sphi_hess
    w_consistency = _rel(float(np.linalg.norm(first - (grad_u - proxy))), float(np.linalg.norm(grad_u - proxy)))
    adj = a.values * hfield - apply_constant_tensor(grid, abar.T, hfield)  # (a - abar)^T h
    rhs = np.stack([adj] + [site_product(grid, ts.dbar[i], adj) for i in range(d)])
    Ws = solve(a, rhs).grad_u
    t1 = vol * float(np.sum(delta_a * hfield * first))
    t2 = vol * float(np.sum(delta_a * Ws[0] * grad_u))
    t3 = -vol * float(sum(np.sum(delta_a * Ws[1 + i] * U[i]) for i in range(d)))
    formula = t1 + t2 + t3

    fd = []
    src_u = delta_a * grad_u
    src_phi = delta_a[None] * U
    for eps in eps_list:
        vals = {}
        for s in (1.0, -1.0):
            ap = CoefficientField(grid, a.values + s * eps * delta_a, a.lam)
            du = solve(ap, s * eps * src_u).grad_u
            dphi = solve(ap, s * eps * src_phi).grad_u
            dproxy = np.sum(site_product(grid, ts.dbar, dphi), axis=0)
            # H(a_s) - H(a) = sum h [s eps da (grad u_s - P_s) + (a - abar)(d grad u - d P)]
            vals[s] = vol * float(np.sum(hfield * (
                s * eps * delta_a * (grad_u + du - proxy - dproxy)
                + commutator_apply(grid, a, abar, du - dproxy)
            )))
        fd.append((vals[1.0] - vals[-1.0]) / (2 * eps))
    errs = [_rel_err(x, formula) for x in fd]
    return FluctuationSensitivityReport(list(eps_list), fd, formula, errs, _slope(eps_list, errs),
                                        w_consistency, (t1, t2, t3))


def _sigma_from(grid, a, U_i):
    from .lattice import curl, solve_shifted_laplacian

    return solve_shifted_laplacian(grid, curl(grid, a.values * U_i), 0.0)


# ---------------------------------------------------------------------------
# massive splitting


@dataclass
class SplittingResult:
    fields: dict = field(repr=False)
    residuals: dict = field(default_factory=dict)


def massive_splitting(a: CoefficientField, T: float, tau: float, g=None, f=None,
                      config: SolverConfig = SolverConfig(), correctors: MassiveCorrectorSet | None = None
                      ) -> SplittingResult:
    """High/low-pass splitting of the massive solution with the massive two-scale error ``w``.

    ``u_>`` solves the problem with mass ``1/tau``; ``u_< := u - u_>``; ``ubar``,
    ``ubar_>``, ``ubar_<`` are constant-coefficient solves with ``abar_tau``.
    """
    if tau > T:
        raise ValueError("need tau <= T")
    if not (1.0 <= tau and T < math.inf):
        raise ValueError("need 1 <= tau <= T < inf")
    grid = a.grid
    d = grid.d
    g = np.zeros(grid.shape) if g is None else np.asarray(g, dtype=float)
    f = np.zeros((d,) + grid.shape) if f is None else np.asarray(f, dtype=float)
    if correctors is None:
        from .correctors import compute_massive_correctors

        correctors = compute_massive_correctors(a, tau, config)
    if correctors.T != tau:
        raise ValueError("massive correctors must be computed at scale tau")
    abar = correctors.abar_T
    coef = Coefficient(grid, a)

    def var(mass_T, gg, ff):
        if a.is_constant:
            return solve_constant(grid, a.values[0].flat[0] * np.eye(d), mass_T, gg, ff)
        return solve_variable(MassiveProblem(grid, a, mass_T, gg, ff), config)

    # u: (1/T) u - div a grad u = g/T + div f;  u_>: same data with mass 1/tau
    u = var(T, g, f).u
    u_gt = u if tau == T else var(tau, g * tau / T, f).u
    u_lt = u - u_gt
    c = 1.0 / tau - 1.0 / T
    ubar = solve_constant(grid, abar, tau, c * tau * u, None).u
    ubar_gt = solve_constant(grid, abar, T, c * T * u_gt, None).u
    ubar_lt = solve_constant(grid, abar, T, c * T * (u_lt - ubar), None).u

    ts = two_scale_expand(ubar, correctors)
    phi = correctors.phi_T
    eye = np.eye(d).reshape((d, d) + (1,) * d)
    U = eye + correctors.grad_phi_T
    w = u_lt - ts.u_tilde
    grad_w = gradient(grid, w)
    dbar_gt = gradient(grid, ubar_gt)
    dbar_lt = gradient(grid, ubar_lt)
    hess = gradient(grid, ts.dbar)
    v_gt = u_gt + ubar_gt
    v_lt = w + ubar_lt + np.sum(phi * ts.dbar, axis=0)
    h_gt = gradient(grid, u_gt) + np.sum(site_product(grid, dbar_gt, U), axis=0)
    h_lt = grad_w + np.sum(site_product(grid, dbar_lt, U), axis=0) + np.sum(shifted_product(grid, phi, hess), axis=0)

    grad_u = gradient(grid, u)
    res = {}
    res["telescope_u"] = _rel(float(np.max(np.abs(u - v_gt - v_lt))), float(np.max(np.abs(u))))
    res["telescope_grad"] = _rel(float(np.max(np.abs(grad_u - h_gt - h_lt))), float(np.max(np.abs(grad_u))))
    res["ubar_split"] = _rel(float(np.max(np.abs(ubar - ubar_gt - ubar_lt))), float(np.max(np.abs(ubar))))

    pre = coef.mean_scalar
    # (1/tau) u_< - div a grad u_< = (1/tau - 1/T) u
    r4 = apply_operator(grid, coef, tau, u_lt) - c * u
    res["low_pass_equation"] = _rel(float(dual_norm(grid, r4, tau, pre)),
                                    float(dual_norm(grid, c * u, tau, pre)))
    # error equation for w
    R = error_flux(correctors, ts) + np.sum(site_product(grid, ts.dbar, correctors.psi_T), axis=0) / tau
    rhs_w = divergence(grid, R) - np.sum(phi * ts.dbar, axis=0) / tau
    r7 = apply_operator(grid, coef, tau, w) - rhs_w
    scale = float(dual_norm(grid, rhs_w, tau, pre) + dual_norm(grid, c * u, tau, pre))
    res["w_equation"] = _rel(float(dual_norm(grid, r7, tau, pre)), scale)
    fields = {"u": u, "u_gt": u_gt, "u_lt": u_lt, "u_bar": ubar, "u_bar_gt": ubar_gt, "u_bar_lt": ubar_lt,
              "w": w, "v_gt": v_gt, "v_lt": v_lt, "h_gt": h_gt, "h_lt": h_lt}
    return SplittingResult(fields, res)
