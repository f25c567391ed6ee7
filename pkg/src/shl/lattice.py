"""Periodic lattice, staggered field containers and discrete exterior calculus.

Placement conventions (all arrays carry the d spatial axes last, so any number
of leading batch axes is allowed):

* scalar fields live on sites ``x``; shape ``(..., n, ..., n)``
* edge fields live on ``x + (h/2) e_j``; shape ``(..., d, n, ..., n)``
* plaquette fields live on ``x + (h/2)(e_j + e_k)`` for ``j < k``;
  shape ``(..., d(d-1)/2, n, ..., n)``, pairs in lexicographic order.

Gradients are forward differences and divergences backward differences, so
``divergence(grid, F)`` is exactly the negative adjoint of ``gradient``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations

import numpy as np
import scipy.fft as sfft

from .util import fft_workers


@dataclass(frozen=True)
class PeriodicGrid:
    """Torus ``(h Z / n h Z)^d``; the correlation length of the ensemble is 1."""

    d: int
    n: int
    h: float = 1.0

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.d}")
        if self.n < 4 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 4, got {self.n}")
        if not self.h > 0:
            raise ValueError(f"spacing must be positive, got {self.h}")

    @property
    def L(self) -> float:
        return self.n * self.h

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n**self.d

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    @property
    def volume(self) -> float:
        return self.L**self.d

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return list(combinations(range(self.d), 2))

    @property
    def n_pairs(self) -> int:
        return self.d * (self.d - 1) // 2

    def axis(self, j: int) -> int:
        """Array axis of spatial direction ``j`` (counted from the end)."""
        return j - self.d

    def coordinates(self, offset=None) -> np.ndarray:
        """Physical coordinates, shape ``(d, n, ..., n)``; ``offset`` in units of h."""
        idx = np.indices(self.shape, dtype=float)
        if offset is not None:
            idx = idx + np.asarray(offset, dtype=float).reshape((self.d,) + (1,) * self.d)
        return idx * self.h

    def edge_coordinates(self) -> np.ndarray:
        """Coordinates of the edge midpoints, shape ``(d, d, n, ..., n)``."""
        return np.stack([self.coordinates(np.eye(self.d)[j] / 2) for j in range(self.d)])

    @cached_property
    def symbols(self) -> "FourierSymbols":
        return FourierSymbols(self)

    def as_dict(self) -> dict:
        return {"d": self.d, "n": self.n, "h": self.h, "L": self.L}


KIND_SCALAR, KIND_EDGE, KIND_PLAQUETTE = 0, 1, 2
_KIND_NAMES = {KIND_SCALAR: "scalar", KIND_EDGE: "edge", KIND_PLAQUETTE: "plaquette"}


def n_components(grid: PeriodicGrid, kind: int) -> int:
    return {KIND_SCALAR: 1, KIND_EDGE: grid.d, KIND_PLAQUETTE: grid.n_pairs}[kind]


@dataclass(frozen=True)
class _Field:
    grid: PeriodicGrid
    values: np.ndarray = field(repr=False)
    kind: int = field(default=KIND_SCALAR, init=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        shape = self.expected_shape(self.grid)
        if vals.shape != shape:
            if vals.size != int(np.prod(shape)):
                raise ValueError(
                    f"{_KIND_NAMES[self.kind]} field needs {int(np.prod(shape))} values, got {vals.size}"
                )
            vals = vals.reshape(shape)
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def expected_shape(cls, grid: PeriodicGrid) -> tuple[int, ...]:
        ncomp = n_components(grid, cls.kind)
        return grid.shape if cls.kind == KIND_SCALAR else (ncomp,) + grid.shape


@dataclass(frozen=True)
class ScalarField(_Field):
    kind: int = field(default=KIND_SCALAR, init=False)


@dataclass(frozen=True)
class EdgeField(_Field):
    kind: int = field(default=KIND_EDGE, init=False)


@dataclass(frozen=True)
class PlaquetteField(_Field):
    """Skew tensor ``sigma_jk`` stored for ``j < k``; ``sigma_kj = -sigma_jk``."""

    kind: int = field(default=KIND_PLAQUETTE, init=False)


FIELD_CLASSES = {KIND_SCALAR: ScalarField, KIND_EDGE: EdgeField, KIND_PLAQUETTE: PlaquetteField}


# --- difference operators ---------------------------------------------------


def shift(grid: PeriodicGrid, u: np.ndarray, j: int, steps: int = 1) -> np.ndarray:
    """``(S_j^steps u)(x) = u(x + steps h e_j)``."""
    return np.roll(u, -steps, axis=grid.axis(j))


def dplus(grid: PeriodicGrid, u: np.ndarray, j: int) -> np.ndarray:
    return (np.roll(u, -1, axis=grid.axis(j)) - u) / grid.h


def dminus(grid: PeriodicGrid, u: np.ndarray, j: int) -> np.ndarray:
    return (u - np.roll(u, 1, axis=grid.axis(j))) / grid.h


def gradient(grid: PeriodicGrid, u: np.ndarray) -> np.ndarray:
    """Forward-difference gradient: scalar ``(..., n^d)`` to edge ``(..., d, n^d)``."""
    u = np.asarray(u, dtype=float)
    return np.stack([dplus(grid, u, j) for j in range(grid.d)], axis=-grid.d - 1)


def divergence(grid: PeriodicGrid, F: np.ndarray) -> np.ndarray:
    """Backward-difference divergence of an edge field."""
    F = np.asarray(F, dtype=float)
    comp = -grid.d - 1
    out = dminus(grid, np.take(F, 0, axis=comp), 0)
    for j in range(1, grid.d):
        out = out + dminus(grid, np.take(F, j, axis=comp), j)
    return out


def laplacian(grid: PeriodicGrid, u: np.ndarray) -> np.ndarray:
    """(2d+1)-point Laplacian ``sum_j D-_j D+_j``; acts componentwise on staggered arrays."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    for j in range(grid.d):
        ax = grid.axis(j)
        out += (np.roll(u, -1, axis=ax) - 2.0 * u + np.roll(u, 1, axis=ax)) / grid.h**2
    return out


def curl(grid: PeriodicGrid, q: np.ndarray) -> np.ndarray:
    """Plaquette curl ``(curl q)_jk = D+_j q_k - D+_k q_j`` for ``j < k``."""
    q = np.asarray(q, dtype=float)
    comp = -grid.d - 1
    if grid.d == 1:
        return np.zeros(q.shape[:comp] + (0,) + grid.shape)
    out = [
        dplus(grid, np.take(q, k, axis=comp), j) - dplus(grid, np.take(q, j, axis=comp), k)
        for j, k in grid.pairs
    ]
    return np.stack(out, axis=comp)


def skew_component(grid: PeriodicGrid, sigma: np.ndarray, j: int, k: int) -> np.ndarray:
    """``sigma_jk`` with the implied skew symmetry (zero on the diagonal)."""
    comp = -grid.d - 1
    if j == k:
        return np.zeros(sigma.shape[:comp] + grid.shape)
    if j < k:
        return np.take(sigma, grid.pairs.index((j, k)), axis=comp)
    return -np.take(sigma, grid.pairs.index((k, j)), axis=comp)


def divergence_tensor(grid: PeriodicGrid, sigma: np.ndarray) -> np.ndarray:
    """Row divergence ``(div sigma)_j = sum_k D-_k sigma_jk``; plaquette to edge."""
    sigma = np.asarray(sigma, dtype=float)
    comp = -grid.d - 1
    batch = sigma.shape[:comp]
    out = np.zeros(batch + (grid.d,) + grid.shape)
    for j in range(grid.d):
        for k in range(grid.d):
            if j != k:
                idx = (Ellipsis, j) + (slice(None),) * grid.d
                out[idx] += dminus(grid, skew_component(grid, sigma, j, k), k)
    return out


def skew_to_full(grid: PeriodicGrid, sigma: np.ndarray) -> np.ndarray:
    """Expand stored ``j < k`` components into a full ``(d, d, n^d)`` tensor."""
    return np.stack(
        [np.stack([skew_component(grid, sigma, j, k) for k in range(grid.d)], axis=-grid.d - 1)
         for j in range(grid.d)],
        axis=-grid.d - 2,
    )


def full_to_skew(grid: PeriodicGrid, full: np.ndarray) -> np.ndarray:
    """Inverse of :func:`skew_to_full` (keeps the ``j < k`` entries)."""
    comp = -grid.d - 1
    if grid.d == 1:
        return np.zeros(full.shape[: comp - 1] + (0,) + grid.shape)
    return np.stack(
        [full[(Ellipsis, j, k) + (slice(None),) * grid.d] for j, k in grid.pairs], axis=comp
    )


def edge_average(grid: PeriodicGrid, v: np.ndarray, j: int) -> np.ndarray:
    """Two-point average of a site field onto the ``j``-edges."""
    return 0.5 * (v + shift(grid, v, j))


def apply_constant_tensor(grid: PeriodicGrid, A: np.ndarray, F: np.ndarray) -> np.ndarray:
    """``(A F)_j(x) = sum_k A_jk F_k(x)``, mixing the edge components attached to site ``x``.

    This is the placement whose divergence form has the Fourier symbol
    ``conj(kappa) . A kappa`` used by the constant-coefficient solver.
    """
    A = np.asarray(A, dtype=float)
    return np.einsum("jk,...k" + "xyz"[: grid.d] + "->...j" + "xyz"[: grid.d], A, F)


def pointwise_norm(grid: PeriodicGrid, F: np.ndarray, kind: int) -> np.ndarray:
    """Euclidean norm over the components attached to each site."""
    F = np.asarray(F, dtype=float)
    if kind == KIND_SCALAR:
        return np.abs(F)
    return np.sqrt(np.sum(F**2, axis=-grid.d - 1))


# --- norms and averages -----------------------------------------------------


@dataclass(frozen=True)
class Box:
    """Lattice l-infinity box ``{x : |x - center|_inf <= radius}`` (physical units)."""

    center: tuple[int, ...]
    radius: float

    def offsets(self, grid: PeriodicGrid) -> int:
        if self.radius < 0:
            raise ValueError("empty box: negative radius")
        return int(np.floor(self.radius / grid.h + 1e-12))

    def index(self, grid: PeriodicGrid) -> tuple[np.ndarray, ...]:
        m = self.offsets(grid)
        if 2 * m + 1 > grid.n:
            raise ValueError("box wider than the torus")
        rng = np.arange(-m, m + 1)
        return np.ix_(*[(c + rng) % grid.n for c in self.center])

    def count(self, grid: PeriodicGrid) -> int:
        return (2 * self.offsets(grid) + 1) ** grid.d

    def volume(self, grid: PeriodicGrid) -> float:
        return self.count(grid) * grid.cell_volume


def restrict(grid: PeriodicGrid, values: np.ndarray, box: Box | None) -> np.ndarray:
    """Values on the sites of ``box`` (all components kept)."""
    if box is None:
        return values
    return values[(Ellipsis,) + box.index(grid)]


def lp_norm(grid: PeriodicGrid, values: np.ndarray, p: float = 2.0, box: Box | None = None,
            kind: int = KIND_SCALAR) -> float:
    """``(h^d sum |v|^p)^(1/p)`` over the torus or a sub-box; ``p = inf`` gives the max."""
    if p < 1:
        raise ValueError("p must be in [1, inf]")
    mag = pointwise_norm(grid, restrict(grid, np.asarray(values, dtype=float), box), kind)
    if mag.size == 0:
        raise ValueError("empty box")
    if np.isinf(p):
        return float(np.max(mag))
    return float((grid.cell_volume * np.sum(mag**p)) ** (1.0 / p))


def box_average(grid: PeriodicGrid, values: np.ndarray, box: Box | None = None) -> np.ndarray:
    """Average over the sites of ``box`` (spatial axes reduced, components kept)."""
    sub = restrict(grid, np.asarray(values, dtype=float), box)
    if sub.size == 0:
        raise ValueError("empty box")
    return np.mean(sub, axis=tuple(range(-grid.d, 0)))


def inner(grid: PeriodicGrid, F: np.ndarray, G: np.ndarray) -> float:
    """Lattice inner product ``h^d sum F G`` over all sites and components."""
    return float(grid.cell_volume * np.sum(np.asarray(F) * np.asarray(G)))


# --- Fourier side -----------------------------------------------------------


class FourierSymbols:
    """Symbols of the difference operators on the ``rfftn`` frequency grid."""

    def __init__(self, grid: PeriodicGrid):
        self.grid = grid
        n, d, h = grid.n, grid.d, grid.h
        theta = []
        for j in range(d):
            m = np.fft.rfftfreq(n) * n if j == d - 1 else np.fft.fftfreq(n) * n
            shape = [1] * d
            shape[j] = m.size
            theta.append((2 * np.pi * m / n).reshape(shape))
        self.theta = theta
        # forward difference: FFT(D+ u) = kappa * FFT(u)
        self.kappa = [(np.exp(1j * t) - 1.0) / h for t in theta]
        self.lap = sum(-(np.abs(k) ** 2) for k in self.kappa)  # symbol of laplacian, <= 0
        self.fshape = np.broadcast_shapes(*[t.shape for t in theta])

    def wavevector_sq(self) -> np.ndarray:
        """``|k|^2`` for the physical wavevectors ``k_j = theta_j / h``."""
        h = self.grid.h
        return sum((t / h) ** 2 for t in self.theta)

    def constant_operator(self, A: np.ndarray) -> np.ndarray:
        """Symbol of ``-div A grad`` with :func:`apply_constant_tensor` placement."""
        A = np.asarray(A, dtype=float)
        d = self.grid.d
        out = np.zeros(self.fshape, dtype=complex)
        for j in range(d):
            for k in range(d):
                if A[j, k] != 0.0:
                    out = out + np.conj(self.kappa[j]) * A[j, k] * self.kappa[k]
        return out.real


def fft(grid: PeriodicGrid, u: np.ndarray) -> np.ndarray:
    return sfft.rfftn(u, axes=tuple(range(-grid.d, 0)), workers=fft_workers())


def ifft(grid: PeriodicGrid, U: np.ndarray) -> np.ndarray:
    return sfft.irfftn(U, s=grid.shape, axes=tuple(range(-grid.d, 0)), workers=fft_workers())


def solve_shifted_laplacian(grid: PeriodicGrid, rhs: np.ndarray, mass: float = 0.0) -> np.ndarray:
    """Solve ``(mass - Delta_h) x = rhs`` componentwise; ``mass = 0`` returns the mean-zero solution."""
    R = fft(grid, rhs)
    sym = mass - grid.symbols.lap
    zero = (0,) * grid.d
    if mass == 0.0:
        sym = sym.copy()
        sym[zero] = 1.0
        X = R / sym
        X[(Ellipsis,) + zero] = 0.0
    else:
        X = R / sym
    return ifft(grid, X)


def skew_flux(grid: PeriodicGrid, sigma: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Discrete ``sigma grad v`` with ``div(v div sigma) = -div(skew_flux(sigma, v))`` exactly.

    ``v div sigma`` attaches the site value ``v(x)`` to every edge of ``x``.  The
    second term is the O(h) shift correction that makes the product rule exact
    on the lattice; it vanishes in the continuum limit.
    """
    comp = -grid.d - 1
    batch = np.broadcast_shapes(sigma.shape[:comp], np.shape(v)[: -grid.d] if np.ndim(v) > grid.d else ())
    out = np.zeros(batch + (grid.d,) + grid.shape)
    for j in range(grid.d):
        idx = (Ellipsis, j) + (slice(None),) * grid.d
        for k in range(grid.d):
            if j == k:
                continue
            s = skew_component(grid, sigma, j, k)
            out[idx] += s * dplus(grid, v, k) - 0.5 * dminus(
                grid, s * (shift(grid, v, k) - shift(grid, v, j)), k
            )
    return out


def shifted_product(grid: PeriodicGrid, phi: np.ndarray, F: np.ndarray) -> np.ndarray:
    """``(S_j phi) F_j`` on every j-edge: the site factor of the lattice Leibniz rule.

    ``D+_j(phi psi) = (S_j phi) D+_j psi + psi D+_j phi`` holds exactly.
    """
    comp = -grid.d - 1
    return np.stack(
        [shift(grid, phi, j) * np.take(F, j, axis=comp) for j in range(grid.d)], axis=comp
    )


def site_product(grid: PeriodicGrid, v: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Attach the site value ``v(x)`` to every edge of ``x``: ``(v F)_j(x) = v(x) F_j(x)``."""
    return np.expand_dims(np.asarray(v), -grid.d - 1) * F
