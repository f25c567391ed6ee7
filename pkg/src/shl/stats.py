"""Monte-Carlo statistics: moments with bootstrap intervals, mixed norms, rate fits."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps
from scipy.ndimage import uniform_filter

from .lattice import KIND_SCALAR, PeriodicGrid, pointwise_norm
from .util import sample_rng

LR_THRESHOLD = 3.84  # chi^2_1 at 95%


def mu_d(r, d: int):
    """Sublinearity scale: ``sqrt(r+1)`` (d=1), ``ln^(1/2)(r+2)`` (d=2), ``1`` (d>2)."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("r must be nonnegative")
    if d == 1:
        out = np.sqrt(r + 1.0)
    elif d == 2:
        out = np.sqrt(np.log(r + 2.0))
    else:
        out = np.ones_like(r)
    return float(out) if out.ndim == 0 else out


@dataclass
class MomentEstimate:
    """``<|X|^(2r)>^(1/r)`` with a percentile-bootstrap interval."""

    r: float
    value: float
    ci_low: float
    ci_high: float
    n: int
    raw: float = math.nan  # <|X|^(2r)>
    warning: str | None = None

    def as_dict(self) -> dict:
        return {
            "r": self.r, "value": self.value, "ci_low": self.ci_low, "ci_high": self.ci_high,
            "n": self.n, "raw": self.raw, "warning": self.warning,
        }


def moment_estimate(samples, r: float = 1.0, *, seed: int = 0, n_boot: int = 500, level: float = 0.9,
                    powered: bool = False) -> MomentEstimate:
    """Plug-in ``<|X|^(2r)>^(1/r)`` with a seeded percentile bootstrap.

    ``powered=True`` means ``samples`` already hold ``|X|^(2r)`` (e.g. per-sample
    spatial averages of a stationary field).
    """
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    if n < 8:
        raise ValueError("at least 8 samples are needed for a bootstrap interval")
    w = x if powered else np.abs(x) ** (2 * r)
    if np.any(w < 0):
        raise ValueError("powered samples must be nonnegative")
    raw = float(np.mean(w))
    value = raw ** (1.0 / r)
    warning = None
    tot = float(np.sum(w))
    if tot > 0:
        ess = 1.0 / float(np.sum((w / tot) ** 2))
        if ess < 8:
            warning = f"moment order r={r:g} too large for n={n}: effective sample size {ess:.1f}"
    rng = sample_rng(seed, 0x5EED)
    idx = rng.integers(0, n, size=(n_boot, n))
    boot = np.mean(w[idx], axis=1) ** (1.0 / r)
    alpha = 0.5 * (1.0 - level)
    lo, hi = np.quantile(boot, [alpha, 1.0 - alpha])
    return MomentEstimate(float(r), value, float(min(lo, value)), float(max(hi, value)), n, raw, warning)


def mean_ci(samples, level: float = 0.9) -> tuple[float, float, float]:
    """Sample mean with a Student-t interval."""
    x = np.asarray(samples, dtype=float).ravel()
    m = float(np.mean(x))
    if x.size < 2:
        return m, m, m
    se = float(np.std(x, ddof=1)) / math.sqrt(x.size)
    t = sps.t.ppf(0.5 + level / 2, x.size - 1)
    return m, m - t * se, m + t * se


def _local_average(grid: PeriodicGrid, mag: np.ndarray, q: float) -> np.ndarray:
    m = int(math.floor(1.0 / grid.h + 1e-12))
    axes = tuple(range(mag.ndim - grid.d, mag.ndim))
    avg = uniform_filter(mag**q, size=2 * m + 1, mode="wrap", axes=axes)
    return np.maximum(avg, 0.0) ** (1.0 / q)


def mixed_norm(grid: PeriodicGrid, samples, p: float, r: float, q: float | None = None,
               kind: int = KIND_SCALAR, normalized: bool = False) -> float:
    """``||h||_{p,r} = (int <|h|^r>^(p/r))^(1/p)``; ``<.>`` is the pointwise sample mean.

    ``samples`` has a leading sample axis.  With ``q`` the pointwise ``|h|`` is
    first replaced by its local ``L^q`` average over the unit box.
    ``normalized`` integrates against the unit-mass torus measure.
    """
    vals = np.asarray(samples, dtype=float)
    mag = pointwise_norm(grid, vals, kind)
    if mag.ndim == grid.d:
        mag = mag[None]
    if mag.shape[0] < 2 and r != p:
        warnings.warn("mixed norm from fewer than 2 samples", RuntimeWarning, stacklevel=2)
    if q is not None:
        if grid.h >= 1.0:
            raise ValueError("the local exponent q needs h < 1")
        mag = _local_average(grid, mag, q)
    moment = np.mean(mag**r, axis=0) ** (1.0 / r)
    if math.isinf(p):
        return float(np.max(moment))
    weight = 1.0 / grid.size if normalized else grid.cell_volume
    return float((weight * np.sum(moment**p)) ** (1.0 / p))


@dataclass
class RateFit:
    exponent: float
    intercept: float
    r_squared: float
    with_log_correction: bool
    exponent_ci: tuple[float, float] = (math.nan, math.nan)
    log_exponent: float = math.nan
    log_intercept: float = math.nan
    log_r_squared: float = math.nan
    likelihood_ratio: float = math.nan  # > 0 favours the log-corrected model
    indistinguishable: bool = False
    n: int = 0
    d: int = 0
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "exponent": self.exponent, "intercept": self.intercept, "r_squared": self.r_squared,
            "with_log_correction": self.with_log_correction, "exponent_ci": list(self.exponent_ci),
            "log_exponent": self.log_exponent, "log_intercept": self.log_intercept,
            "log_r_squared": self.log_r_squared, "likelihood_ratio": self.likelihood_ratio,
            "indistinguishable": self.indistinguishable, "n": self.n, "d": self.d, **self.extra,
        }


def _linfit(x, y, w=None):
    res = sps.linregress(x, y) if w is None else None
    if w is None:
        pred = res.intercept + res.slope * x
        return res.slope, res.intercept, res.rvalue**2, np.sum((y - pred) ** 2), res.stderr
    W = np.diag(w)
    X = np.column_stack([np.ones_like(x), x])
    cov = np.linalg.inv(X.T @ W @ X)
    beta = cov @ X.T @ W @ y
    pred = X @ beta
    ybar = np.sum(w * y) / np.sum(w)
    r2 = 1.0 - np.sum(w * (y - pred) ** 2) / np.sum(w * (y - ybar) ** 2)
    return beta[1], beta[0], r2, np.sum(w * (y - pred) ** 2), math.sqrt(cov[1, 1])


def rate_fit(pairs, d: int, sigma=None, level: float = 0.9) -> RateFit:
    """Least-squares exponent of ``value ~ eps^beta``; for ``d = 2`` also against ``eps mu_2(1/eps)``.

    Parameters
    ----------
    pairs
        ``(eps, value)`` with ``eps`` strictly decreasing.
    sigma
        Optional standard errors of ``ln value``; switches the model comparison
        from residual likelihood ratio to a chi-square difference.
    """
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 3:
        raise ValueError("rate_fit needs at least 3 (eps, value) pairs")
    eps, val = arr[:, 0], arr[:, 1]
    if np.any(np.diff(eps) >= 0):
        raise ValueError("eps must be strictly decreasing")
    if np.any(val <= 0) or np.any(eps <= 0):
        raise ValueError("values and eps must be positive")
    x, y = np.log(eps), np.log(val)
    w = None if sigma is None else 1.0 / np.asarray(sigma, dtype=float) ** 2
    slope, icpt, r2, sse, se = _linfit(x, y, w)
    n = len(eps)
    t = sps.t.ppf(0.5 + level / 2, max(n - 2, 1))
    fit = RateFit(float(slope), float(icpt), float(r2), False, (float(slope - t * se), float(slope + t * se)),
                  n=n, d=d)
    if d == 2:
        xl = np.log(eps * mu_d(1.0 / eps, 2))
        s2, i2, r22, sse2, _ = _linfit(xl, y, w)
        fit.log_exponent, fit.log_intercept, fit.log_r_squared = float(s2), float(i2), float(r22)
        if w is None:
            tiny = 1e-300
            lr = n * math.log(max(sse, tiny) / max(sse2, tiny))
        else:
            lr = float(sse - sse2)
        fit.likelihood_ratio = float(lr)
        fit.with_log_correction = bool(lr > 0)
        fit.indistinguishable = bool(abs(lr) < LR_THRESHOLD)
    return fit
