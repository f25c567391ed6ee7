"""Stationary Gaussian fields with Matern spectrum and lambda-elliptic coefficient fields.

Sampling is spectral synthesis on the torus: real white noise is transformed,
multiplied by the square root of the spectral density sampled at the discrete
wavevectors ``2 pi m / L`` (with a half-cell phase shift so the field sits on
edge midpoints) and transformed back.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

from .lattice import (
    KIND_EDGE,
    PeriodicGrid,
    ScalarField,
    gradient,
)
from .util import sample_rng


@dataclass(frozen=True)
class CovarianceSpec:
    """Matern-type spectrum ``F c(k) = C (1 + |k|^2)^(-nu - d/2)``; ``C`` is fixed by ``variance``."""

    nu: float = 1.0
    variance: float = 1.0
    d: int = 2

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if not self.variance > 0:
            raise ValueError("variance must be positive")

    @property
    def alpha(self) -> float:
        """Hoelder exponent of the realizations (``min(nu, 1)``)."""
        return min(self.nu, 1.0)

    def shape_function(self, k2: np.ndarray) -> np.ndarray:
        """Unnormalized spectral density as a function of ``|k|^2``."""
        return (1.0 + k2) ** (-self.nu - self.d / 2.0)

    def as_dict(self) -> dict:
        return {"nu": self.nu, "variance": self.variance}


def _axis_phase(grid: PeriodicGrid, j: int, s: float) -> np.ndarray:
    """Per-axis shift factor; the Nyquist mode is treated as a cosine to keep the field real."""
    n = grid.n
    m = np.fft.fftfreq(n) * n
    theta = 2 * np.pi * m / n
    ph = np.exp(1j * theta * s)
    ph[n // 2] = np.cos(np.pi * s)
    shape = [1] * grid.d
    shape[j] = n
    return ph.reshape(shape)


def spectral_filter(grid: PeriodicGrid, cov: CovarianceSpec, offset=None) -> tuple[np.ndarray, float]:
    """Full-grid synthesis filter ``H(k)`` and the normalization constant ``C``.

    ``ifftn(H * fftn(W))`` for unit white noise ``W`` has variance ``cov.variance``
    at every site.
    """
    if cov.d != grid.d:
        raise ValueError("covariance dimension does not match the grid")
    k2 = np.zeros(grid.shape)
    phase = np.ones(grid.shape, dtype=complex)
    offset = np.zeros(grid.d) if offset is None else np.asarray(offset, dtype=float)
    for j in range(grid.d):
        m = np.fft.fftfreq(grid.n) * grid.n
        shape = [1] * grid.d
        shape[j] = grid.n
        k2 = k2 + ((2 * np.pi * m / grid.L) ** 2).reshape(shape)
        phase = phase * _axis_phase(grid, j, offset[j])
    # torus Fourier weights: Fc(k) / L^d, times N^2 for the unnormalized DFT pair
    weight = cov.shape_function(k2) * np.abs(phase) ** 2
    var_unit = np.sum(weight) / grid.size
    C = cov.variance / var_unit
    H = np.sqrt(C * cov.shape_function(k2)) * phase
    return H, float(C * grid.size * grid.cell_volume)


def covariance_function(grid: PeriodicGrid, cov: CovarianceSpec, offset=None) -> np.ndarray:
    """Exact torus covariance ``c(x) = <g(x) g(0)>`` of the synthesized field."""
    H, _ = spectral_filter(grid, cov, offset)
    return np.fft.ifftn(np.abs(H) ** 2).real


def sample_gaussian(grid: PeriodicGrid, cov: CovarianceSpec, seed: int, offset="edges",
                    index: int = 0) -> list[ScalarField]:
    """Draw ``d`` independent stationary centered Gaussian fields.

    Parameters
    ----------
    grid, cov
        Torus and spectrum.
    seed, index
        The stream for direction ``j`` is ``(seed, index, j)``; output is
        bitwise reproducible for fixed arguments.
    offset
        ``"edges"`` shifts field ``j`` by half a cell along ``e_j`` (edge
        midpoints); ``None`` keeps all fields on the sites; an explicit
        ``(d, d)`` array gives per-field offsets in units of ``h``.

    Returns
    -------
    list of ScalarField
        One field per direction.
    """
    if grid.L < 8.0:
        warnings.warn(
            f"box side {grid.L:g} resolves few correlation lengths; statistics will be "
            "dominated by periodization",
            RuntimeWarning,
            stacklevel=2,
        )
    if isinstance(offset, str) and offset == "edges":
        offsets = np.eye(grid.d) / 2.0
    elif offset is None:
        offsets = np.zeros((grid.d, grid.d))
    else:
        offsets = np.asarray(offset, dtype=float).reshape(grid.d, grid.d)
    out = []
    for j in range(grid.d):
        rng = sample_rng(seed, index, j)
        white = rng.standard_normal(grid.shape)
        H, _ = spectral_filter(grid, cov, offsets[j])
        g = np.fft.ifftn(H * np.fft.fftn(white)).real
        out.append(ScalarField(grid, g))
    return out


@dataclass(frozen=True)
class CoefficientMap:
    """Lipschitz map ``A`` from Gaussian values into ``[lambda, 1]``.

    The default is the sigmoid ``A(g) = lambda + (1 - lambda) / (1 + exp(-g))``
    with ``||A'||_inf = (1 - lambda)/4``.  A custom monotone map may be passed
    through ``func`` together with its Lipschitz bound.
    """

    lam: float = 0.25
    form: str = "sigmoid"
    func: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False, repr=False)
    lipschitz_bound: float | None = None
    derivative: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not 0.0 < self.lam <= 1.0:
            raise ValueError("lambda must lie in (0, 1]")
        if self.form != "sigmoid" and self.func is None:
            raise ValueError(f"unknown map form {self.form!r}")

    @property
    def lipschitz(self) -> float:
        if self.lipschitz_bound is not None:
            return self.lipschitz_bound
        return (1.0 - self.lam) / 4.0

    def __call__(self, g):
        g = np.asarray(g, dtype=float)
        if self.func is not None:
            return self.func(g)
        return self.lam + (1.0 - self.lam) * expit(g)

    def prime(self, g):
        g = np.asarray(g, dtype=float)
        if self.derivative is not None:
            return self.derivative(g)
        s = expit(g)
        return (1.0 - self.lam) * s * (1.0 - s)

    def gamma(self, cov: CovarianceSpec) -> dict:
        """The fixed parameter tuple the constants of the theory depend on."""
        return {"d": cov.d, "lambda": self.lam, "alpha": cov.alpha, "lipschitz": self.lipschitz}

    def as_dict(self) -> dict:
        return {"lambda": self.lam, "map": self.form}


@dataclass(frozen=True)
class CoefficientField:
    """Diagonal coefficient field: one scalar ``a_j(x)`` per edge, ``lam <= a <= 1``."""

    grid: PeriodicGrid
    values: np.ndarray = field(repr=False)
    lam: float = 0.25

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape((self.grid.d,) + self.grid.shape)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, grid: PeriodicGrid, c: float = 1.0, lam: float | None = None) -> "CoefficientField":
        return cls(grid, np.full((grid.d,) + grid.shape, float(c)), c if lam is None else lam)

    @property
    def kind(self) -> int:
        return KIND_EDGE

    @property
    def is_constant(self) -> bool:
        return bool(np.all(self.values == self.values.flat[0]))

    def mean(self) -> float:
        return float(np.mean(self.values))

    def perturbed(self, delta: np.ndarray, eps: float) -> "CoefficientField":
        return CoefficientField(self.grid, self.values + eps * np.asarray(delta), self.lam)


def coefficient_from_gaussian(gfields, cmap: CoefficientMap) -> CoefficientField:
    """``a_j(x) = A(g_j(x))`` pointwise."""
    grid = gfields[0].grid
    g = np.stack([np.asarray(f.values) for f in gfields])
    return CoefficientField(grid, cmap(g), cmap.lam)


def sample_coefficient(grid: PeriodicGrid, cov: CovarianceSpec, cmap: CoefficientMap, seed: int,
                       index: int = 0) -> tuple[CoefficientField, np.ndarray]:
    """Coefficient field and the underlying Gaussian values for one sample."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        gf = sample_gaussian(grid, cov, seed, index=index)
    return coefficient_from_gaussian(gf, cmap), np.stack([f.values for f in gf])


@dataclass
class EllipticityReport:
    min_value: float
    max_value: float
    lam: float
    passed: bool
    worst: tuple[int, ...] | None = None  # (direction, *site) of the worst offender

    def __bool__(self):
        return self.passed


def ellipticity_check(a: CoefficientField, lam: float | None = None) -> EllipticityReport:
    lam = a.lam if lam is None else lam
    vals = np.asarray(a.values)
    lo, hi = float(vals.min()), float(vals.max())
    tol = 1e-14
    passed = lo >= lam - tol and hi <= 1.0 + tol
    worst = None
    if not passed:
        excess = np.maximum(lam - vals, vals - 1.0)
        worst = tuple(int(i) for i in np.unravel_index(np.argmax(excess), vals.shape))
    return EllipticityReport(lo, hi, lam, passed, worst)


@dataclass
class FieldDiagnostics:
    lags: np.ndarray
    autocovariance: np.ndarray
    holder_seminorm: float


def radial_autocovariance(grid: PeriodicGrid, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Spatially averaged ``g(x) g(x + r)`` binned by distinct ``|r|`` (up to ``L/2``)."""
    g = np.asarray(g, dtype=float)
    G = np.fft.fftn(g - g.mean())
    acov = np.fft.ifftn(np.abs(G) ** 2).real / grid.size
    m = np.fft.fftfreq(grid.n) * grid.n
    r2 = sum(np.meshgrid(*([m**2] * grid.d), indexing="ij"))
    r2 = np.rint(r2).astype(int)
    keep = r2 <= (grid.n // 2) ** 2
    uniq, inv = np.unique(r2[keep], return_inverse=True)
    sums = np.bincount(inv, weights=acov[keep])
    counts = np.bincount(inv)
    return np.sqrt(uniq) * grid.h, sums / counts


def holder_seminorm(grid: PeriodicGrid, g: np.ndarray, alpha_prime: float, radius: float) -> float:
    """``sup_{0 < |x - y| <= radius} |g(x) - g(y)| / |x - y|^alpha'`` over lattice pairs."""
    if radius < grid.h:
        raise ValueError("radius must be at least one lattice spacing")
    g = np.asarray(g, dtype=float)
    m = int(np.floor(radius / grid.h + 1e-12))
    best = 0.0
    for s in np.ndindex(*([2 * m + 1] * grid.d)):
        off = np.array(s) - m
        dist = grid.h * np.sqrt(np.sum(off**2))
        if dist == 0.0 or dist > radius + 1e-12:
            continue
        # x and x + off: half of the offsets suffice by symmetry, but the scan is cheap
        shifted = np.roll(g, tuple(-off), axis=tuple(range(grid.d)))
        best = max(best, float(np.max(np.abs(shifted - g))) / dist**alpha_prime)
    return best


def field_diagnostics(grid: PeriodicGrid, g, alpha_prime: float, radius: float,
                      alpha: float | None = None) -> FieldDiagnostics:
    """Radial autocovariance and a discrete Hoelder seminorm of a sampled field."""
    if alpha is not None and not 0.0 < alpha_prime < alpha:
        raise ValueError("need 0 < alpha' < alpha")
    vals = g.values if isinstance(g, ScalarField) else np.asarray(g)
    lags, acov = radial_autocovariance(grid, vals)
    return FieldDiagnostics(lags, acov, holder_seminorm(grid, vals, alpha_prime, radius))


def coefficient_gradient_scale(a: CoefficientField) -> float:
    """Max edge-to-edge jump of ``a``; a cheap smoothness indicator."""
    return float(np.max(np.abs(gradient(a.grid, a.values))))
