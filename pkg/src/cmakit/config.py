"""Run configuration: a TOML file validated into a typed object.

Unknown keys are rejected everywhere.  Functions (densities, weights,
boundary data, test functions) are strings in the grammar of
:mod:`cmakit.expr`.  A minimal file::

    seed = 0
    output = "out"

    [domain]
    n = 1
    N = 33
    L = 1.5

    [density]
    base = "1"

See the README for every section and its defaults.
"""
from __future__ import annotations

import math
import sys
from pathlib import Path
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

from .expr import Expression


class ConfigError(ValueError):
    """Invalid or unreadable configuration; ``diagnostic`` is JSON-ready."""

    def __init__(self, message: str, diagnostic: Optional[dict] = None):
        super().__init__(message)
        self.diagnostic = diagnostic or {"error": "config", "message": message}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _check_expr(src: Optional[str], n: int, name: str) -> None:
    if src is None:
        return
    try:
        Expression(src, n)
    except ValueError as exc:
        raise ValueError(f"{name}: {exc}") from None


class DomainConfig(_Strict):
    n: Literal[1, 2]
    N: int = Field(ge=5)
    L: float = Field(gt=0)
    a: float = Field(default=math.log(2.0), gt=0)
    band: Union[float, Literal["inward"]] = 0.0

    @field_validator("N")
    @classmethod
    def _odd(cls, v):
        if v % 2 == 0:
            raise ValueError("N must be odd")
        return v


class FormsConfig(_Strict):
    A: float = Field(default=1.0, ge=0)
    psi1: Optional[str] = None
    s: List[float] = Field(default_factory=lambda: [0.1])
    t: List[float] = Field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])

    @field_validator("s")
    @classmethod
    def _s(cls, v):
        if not v or any(x <= 0 for x in v) or any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError("s schedule must be positive and strictly decreasing")
        return v

    @field_validator("t")
    @classmethod
    def _t(cls, v):
        if not v or v[0] != 0 or v[-1] > 1 or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("t schedule must start at 0 and increase to at most 1")
        return v


class DensityConfig(_Strict):
    base: str = "1"
    w_E: Optional[str] = None
    w_F: Optional[str] = None
    f: Optional[str] = None
    lam: Literal[0, 1] = 0
    p: float = Field(default=2.0, gt=1)
    Q: float = math.inf


class BoundaryConfig(_Strict):
    psi: str = "0"


class SolverConfig(_Strict):
    tol: float = Field(default=1e-8, gt=0)
    max_iter: int = Field(default=50, ge=1)
    backtrack: float = Field(default=0.5, gt=0, lt=1)
    min_step: float = Field(default=2.0 ** -20, gt=0)
    eps_psh: float = Field(default=1e-10, gt=0)
    linear_tol: float = Field(default=1e-10, gt=0)


class CapacityConfig(_Strict):
    K: str = Field(description="K = {node : expression <= 0}")
    theta: Literal["zero", "fs", "omega", "theta_s"] = "zero"
    method: Literal["envelope", "bruteforce"] = "envelope"
    starts: int = Field(default=64, ge=1)
    tol: float = Field(default=1e-9, gt=0)


class CompareConfig(_Strict):
    u: str
    v: str
    theta: Literal["zero", "fs", "omega", "theta_s"] = "zero"


class LevelsConfig(_Strict):
    start: float
    stop: float
    step: float = Field(gt=0)

    def values(self):
        import numpy as np
        k = int(math.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        return self.start + self.step * np.arange(max(k, 0))


class StatsConfig(_Strict):
    levels: LevelsConfig = LevelsConfig(start=0.02, stop=6.0, step=0.02)
    t: float = Field(default=0.5, gt=0, lt=1)
    A_fit: Optional[float] = Field(default=None, gt=0)
    alpha: float = Field(default=1.0, gt=0)


class DeGiorgiConfig(_Strict):
    F: Optional[str] = Field(default=None, description="F as an expression in l")
    samples: Optional[List[List[float]]] = None
    levels: Optional[LevelsConfig] = None
    A: float = Field(default=1.0, gt=0)
    alpha: float = Field(default=1.0, gt=0)

    @model_validator(mode="after")
    def _source(self):
        if (self.F is None) == (self.samples is None):
            raise ValueError("give exactly one of F (with levels) or samples")
        if self.F is not None:
            if self.levels is None:
                raise ValueError("F needs levels")
            _check_expr(self.F, 1, "F")
        return self


class PolesConfig(_Strict):
    points: List[List[float]] = Field(description="pole coordinates as [re1, im1, re2, im2, ...]")
    weights: List[float]
    psi: str
    log_density: str = Field(description="f + log V as an expression in z and delta")
    deltas: List[float] = Field(default_factory=lambda: [1e-2, 1e-3, 1e-4])
    lam: Literal[0, 1] = 0
    density_exponent: Optional[float] = None
    osc_bound: float = Field(default=0.1, gt=0)
    growth_const: float = Field(default=1.0, ge=0)
    fields: Optional[List[str]] = Field(default=None, description="field files per delta (asymptotics)")


class OutputConfig(_Strict):
    timing: bool = False


class RunConfig(_Strict):
    command: Optional[str] = None
    seed: int = 0
    output: str = "out"
    domain: Optional[DomainConfig] = None
    forms: FormsConfig = FormsConfig()
    density: DensityConfig = DensityConfig()
    boundary: BoundaryConfig = BoundaryConfig()
    solver: SolverConfig = SolverConfig()
    capacity: Optional[CapacityConfig] = None
    compare: Optional[CompareConfig] = None
    stats: StatsConfig = StatsConfig()
    degiorgi: Optional[DeGiorgiConfig] = None
    poles: Optional[PolesConfig] = None
    report: OutputConfig = OutputConfig()

    @model_validator(mode="after")
    def _expressions(self):
        if self.domain is None:
            return self
        n = self.domain.n
        for sec, keys in (("forms", ("psi1",)), ("density", ("base", "w_E", "w_F", "f")),
                          ("boundary", ("psi",)), ("capacity", ("K",)), ("compare", ("u", "v"))):
            obj = getattr(self, sec)
            if obj is None:
                continue
            for k in keys:
                _check_expr(getattr(obj, k), n, f"{sec}.{k}")
        if self.poles is not None:
            for k in ("psi", "log_density"):
                _check_expr(getattr(self.poles, k), n, f"poles.{k}")
            for pt in self.poles.points:
                if len(pt) != 2 * n:
                    raise ValueError(f"poles.points: each pole needs {2 * n} real coordinates")
            if len(self.poles.points) != len(self.poles.weights):
                raise ValueError("poles: one weight per point is required")
        return self


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    """Parse TOML text into a :class:`RunConfig` or raise :class:`ConfigError`."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}", {"error": "config", "file": source,
                                                "message": str(exc)}) from None
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        problems = [{"field": ".".join(str(p) for p in e["loc"]), "message": e["msg"]}
                    for e in exc.errors()]
        msg = "; ".join(f"{p['field'] or '<root>'}: {p['message']}" for p in problems)
        raise ConfigError(f"{source}: {msg}", {"error": "config", "file": source,
                                                "problems": problems}) from None


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}",
                          {"error": "config", "file": str(path), "message": "file not found"})
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}", {"error": "config", "file": str(path),
                                              "message": str(exc)}) from None
    return parse_config(text, str(path))
