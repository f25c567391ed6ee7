"""TOML experiment configuration: schema validation, defaults and the canonical hash."""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .ensemble import EnsembleConfig
from .lattice import PeriodicGrid
from .randomfield import CoefficientMap, CovarianceSpec
from .solver import SolverConfig
from .util import canonical_hash

EXPERIMENTS = ("sample", "correctors", "massive-correctors", "oscillation", "fluctuation", "splitting",
               "rates", "sg-probe", "cz-probe")

# key -> (types, required)
_NUM = (int, float)
SCHEMA = {
    "grid": {"d": (int, True), "n": (int, True), "h": (_NUM, False)},
    "covariance": {"nu": (_NUM, False), "variance": (_NUM, False)},
    "map": {"lambda": (_NUM, False), "map": (str, False)},
    "solver": {"tol": (_NUM, False), "max_iter": (int, False), "method": (str, False)},
    "ensemble": {"n_samples": (int, False), "base_seed": (int, False)},
    "experiment": {
        "name": (str, True),
        "eps_list": (list, False),
        "eps": (_NUM, False),
        "T": (_NUM, False),
        "T_list": (list, False),
        "tau": (_NUM, False),
        "lags": (list, False),
        "p": (_NUM, False),
        "r": (_NUM, False),
        "r_prime": (_NUM, False),
        "period": (_NUM, False),
        "profiles": (str, False),
        "functional": (str, False),
        "n_list": (list, False),
        "rhs_family": (list, False),
        "coefficient": (str, False),
        "save_fields": (int, False),
        "of": (str, False),
    },
}
REQUIRED_SECTIONS = ("grid", "experiment")


class ConfigError(ValueError):
    """Schema violation; the message names the offending field."""


def _check_type(section: str, key: str, value, types):
    if isinstance(value, bool) and types is not str:
        raise ConfigError(f"[{section}].{key}: expected {_tname(types)}, got bool")
    if types is _NUM and isinstance(value, _NUM):
        return
    if not isinstance(value, types if isinstance(types, tuple) else (types,)):
        raise ConfigError(f"[{section}].{key}: expected {_tname(types)}, got {type(value).__name__}")


def _tname(types) -> str:
    if types is _NUM:
        return "number"
    return types.__name__ if isinstance(types, type) else "/".join(t.__name__ for t in types)


def validate(doc: dict) -> dict:
    """Check sections, keys and types; returns the document unchanged."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a TOML table")
    for section in doc:
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
    for section in REQUIRED_SECTIONS:
        if section not in doc:
            raise ConfigError(f"missing required section [{section}]")
    for section, body in doc.items():
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        spec = SCHEMA[section]
        for key, value in body.items():
            if key not in spec:
                raise ConfigError(f"[{section}].{key}: unknown key")
            _check_type(section, key, value, spec[key][0])
        for key, (_, required) in spec.items():
            if required and key not in body:
                raise ConfigError(f"[{section}].{key}: required key missing")
    name = doc["experiment"]["name"]
    if name not in EXPERIMENTS:
        raise ConfigError(f"[experiment].name: unknown experiment {name!r}")
    g = doc["grid"]
    if g["d"] not in (1, 2, 3):
        raise ConfigError("[grid].d: must be 1, 2 or 3")
    n = g["n"]
    if n < 4 or n & (n - 1):
        raise ConfigError("[grid].n: must be a power of two >= 4")
    if "map" in doc and doc["map"].get("map", "sigmoid") != "sigmoid":
        raise ConfigError("[map].map: only 'sigmoid' is available from config files")
    if "solver" in doc and doc["solver"].get("method", "pcg") not in ("pcg", "meyers"):
        raise ConfigError("[solver].method: must be 'pcg' or 'meyers'")
    lam = doc.get("map", {}).get("lambda", 0.25)
    if not 0 < lam <= 1:
        raise ConfigError("[map].lambda: must lie in (0, 1]")
    return doc


def parse_eps(value) -> float:
    """Accepts numbers and strings such as ``"1/16"``."""
    if isinstance(value, str):
        if "/" in value:
            num, den = value.split("/", 1)
            return float(num) / float(den)
        return float(value)
    return float(value)


def parse_eps_range(text: str) -> list[float]:
    """``"1/16..1/256"`` -> powers-of-two ladder ``[1/16, 1/32, ..., 1/256]``."""
    if ".." not in text:
        return [parse_eps(t) for t in text.split(",")]
    lo, hi = (parse_eps(t) for t in text.split("..", 1))
    start, stop = max(lo, hi), min(lo, hi)
    out = [start]
    while out[-1] / 2 >= stop * (1 - 1e-12):
        out.append(out[-1] / 2)
    return out


@dataclass
class ExperimentConfig:
    doc: dict
    grid: PeriodicGrid
    cov: CovarianceSpec
    cmap: CoefficientMap
    solver: SolverConfig
    n_samples: int
    base_seed: int
    name: str
    params: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        validate(doc)
        g = doc["grid"]
        try:
            grid = PeriodicGrid(g["d"], g["n"], float(g.get("h", 1.0)))
            c = doc.get("covariance", {})
            cov = CovarianceSpec(float(c.get("nu", 1.0)), float(c.get("variance", 1.0)), grid.d)
            m = doc.get("map", {})
            cmap = CoefficientMap(float(m.get("lambda", 0.25)), m.get("map", "sigmoid"))
            s = doc.get("solver", {})
            solver = SolverConfig(float(s.get("tol", 1e-10)), int(s.get("max_iter", 2000)), s.get("method", "pcg"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        e = doc.get("ensemble", {})
        n_samples = int(e.get("n_samples", 8))
        if n_samples < 1:
            raise ConfigError("[ensemble].n_samples: must be >= 1")
        params = {k: v for k, v in doc["experiment"].items() if k != "name"}
        if "eps_list" in params:
            try:
                params["eps_list"] = [parse_eps(v) for v in params["eps_list"]]
            except ValueError as exc:
                raise ConfigError(f"[experiment].eps_list: {exc}") from exc
        return cls(doc, grid, cov, cmap, solver, n_samples, int(e.get("base_seed", 0)),
                   doc["experiment"]["name"], params)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = tomllib.loads(Path(path).read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML: {exc}") from exc
        return cls.from_dict(doc)

    def ensemble(self, grid: PeriodicGrid | None = None) -> EnsembleConfig:
        grid = self.grid if grid is None else grid
        cov = CovarianceSpec(self.cov.nu, self.cov.variance, grid.d)
        return EnsembleConfig(self.n_samples, self.base_seed, grid, cov, self.cmap, self.solver)

    def canonical(self) -> dict:
        """Fully defaulted, override-applied form used for hashing."""
        return {
            "grid": self.grid.as_dict(),
            "covariance": self.cov.as_dict(),
            "map": self.cmap.as_dict(),
            "solver": self.solver.as_dict(),
            "ensemble": {"n_samples": self.n_samples, "base_seed": self.base_seed},
            "experiment": {"name": self.name, **{k: _canon(v) for k, v in sorted(self.params.items())}},
        }

    def hash(self) -> str:
        return canonical_hash(self.canonical())

    def gamma(self) -> dict:
        return self.cmap.gamma(self.cov)


def _canon(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    if isinstance(v, list):
        return [_canon(x) for x in v]
    return v
