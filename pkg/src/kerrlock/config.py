"""Run configuration: YAML text validated against a versioned schema.

Unknown keys are errors. Validation failures are re-raised as
:class:`ConfigError` carrying the dotted field path and, when the text came
from a file, the line it sits on.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

SCHEMA_VERSION = 1

__all__ = [
    "SCHEMA_VERSION",
    "RunConfig",
    "LaserModel",
    "PolaritonModel",
    "PhysicalModel",
    "SolverSection",
    "SweepSection",
    "OutputSection",
    "load_config",
    "parse_config",
    "config_hash",
]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _finite(v):
    if v is not None and not math.isfinite(v):
        raise ValueError("must be finite")
    return v


class LaserModel(_Strict):
    gain: float = Field(ge=0)
    saturation: float = Field(ge=0)
    loss: float = Field(ge=0)
    kerr: float = Field(0.0, ge=0)
    lock: float = Field(0.0, ge=0)

    _fin = field_validator("*")(_finite)


class PolaritonModel(_Strict):
    """Net gain / diffusion form; rates for the Fock route are derived from it."""

    g1: float
    g2: float
    d1: float = Field(gt=0)
    d2: float = Field(gt=0)
    kerr: float = Field(0.0, ge=0)
    lock: float = Field(0.0, ge=0)
    gamma0_share: float = Field(0.5, ge=0, lt=1)

    _fin = field_validator("*")(_finite)


class PhysicalModel(_Strict):
    """SI device parameters plus the gain/loss split of each channel pair."""

    A_area: float = Field(gt=0)
    T: float = Field(gt=0)
    a_B: float = Field(gt=0)
    eps: float = Field(gt=0)
    m_exc: float = Field(gt=0)
    X_hopfield: float = Field(gt=0, le=1)
    gamma0: float = Field(gt=0)
    ratio1: float = Field(1.0, ge=0)
    ratio2: float = Field(1.0, ge=0)
    lock: float = Field(0.0, ge=0)

    _fin = field_validator("*")(_finite)


class ModelSection(_Strict):
    laser: Optional[LaserModel] = None
    polariton: Optional[PolaritonModel] = None
    physical: Optional[PhysicalModel] = None

    @model_validator(mode="after")
    def _exactly_one(self):
        given = [k for k in ("laser", "polariton", "physical") if getattr(self, k) is not None]
        if len(given) != 1:
            raise ValueError(f"exactly one of laser, polariton, physical is required, got {given or 'none'}")
        return self

    @property
    def kind(self) -> str:
        return next(k for k in ("laser", "polariton", "physical") if getattr(self, k) is not None)

    @property
    def body(self):
        return getattr(self, self.kind)


class GridSection(_Strict):
    r_max: float = Field(gt=0)
    nr: int = Field(ge=8, le=4000)
    ntheta: int = Field(ge=8, le=8192)

    @field_validator("ntheta")
    @classmethod
    def _even(cls, v):
        if v % 2:
            raise ValueError("ntheta must be even")
        return v


class SolverSection(_Strict):
    route: Literal["fock", "fp", "both"] = "fp"
    drift_variant: Literal["as-printed", "physical"] = "as-printed"
    n_cut: Optional[int] = Field(None, ge=1, le=400)
    fp_method: Literal["direct", "march"] = "direct"
    grid: Optional[GridSection] = None
    points_per_width: float = Field(6.0, ge=1, le=32)
    tol: float = Field(1e-8, gt=0, le=1e-2)
    t_max: float = Field(200.0, gt=0)
    wigner_n: int = Field(256, ge=64, le=2048)
    wigner_half_width: Optional[float] = Field(None, gt=0)


class SweepSection(_Strict):
    axis: Literal["lock", "kerr", "d2_over_d1"]
    values: list[float]

    @field_validator("values")
    @classmethod
    def _increasing(cls, v):
        if not v:
            raise ValueError("sweep values must not be empty")
        if any(not math.isfinite(x) for x in v):
            raise ValueError("sweep values must be finite")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("sweep values must be strictly increasing")
        return v


class CrossSection(_Strict):
    tolerance: Optional[float] = Field(None, gt=0)
    grid_n: int = Field(256, ge=64, le=2048)


class OutputSection(_Strict):
    directory: str = "runs"
    formats: list[Literal["grid", "csv"]] = ["grid"]


class RunConfig(_Strict):
    schema_version: Literal[1] = Field(alias="schema")
    name: str = "run"
    model: ModelSection
    solver: SolverSection = SolverSection()
    sweep: Optional[SweepSection] = None
    crossvalidate: CrossSection = CrossSection()
    output: OutputSection = OutputSection()

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    @model_validator(mode="after")
    def _sweep_axis(self):
        if self.sweep and self.sweep.axis == "d2_over_d1" and self.model.kind != "polariton":
            raise ValueError("sweep axis d2_over_d1 needs a polariton model")
        if self.sweep and self.sweep.axis == "kerr" and self.model.kind == "physical":
            raise ValueError("sweep axis kerr is not available for a physical model (U is estimated)")
        if self.sweep and self.sweep.axis == "d2_over_d1" and any(v <= 0 for v in self.sweep.values):
            raise ValueError("d2_over_d1 values must be positive")
        if self.sweep and self.sweep.axis in ("lock", "kerr") and any(v < 0 for v in self.sweep.values):
            raise ValueError(f"{self.sweep.axis} values must be non-negative")
        return self

    def resolved(self) -> dict:
        return self.model_dump(mode="json", by_alias=True)


# --------------------------------------------------------------------------


def _line_of(node, loc) -> Optional[int]:
    """Line (1-based) of the YAML node addressed by a pydantic ``loc`` path."""
    best = node.start_mark.line + 1 if node is not None else None
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            hit = None
            for k, v in node.value:
                if k.value == key or (key == "schema_version" and k.value == "schema"):
                    hit = (k, v)
                    break
            if hit is None:
                return best
            best = hit[0].start_mark.line + 1
            node = hit[1]
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
            best = node.start_mark.line + 1
        else:
            return best
    return best


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: not valid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = [p for p in err["loc"] if not (isinstance(p, str) and p.startswith("function-"))]
            path = ".".join(str(p) for p in loc) or "<root>"
            line = _line_of(node, loc)
            where = f"{source}:{line}" if line else source
            msg = err["msg"]
            if err["type"] == "missing":
                msg = f"missing required field '{loc[-1]}'"
            elif err["type"] == "extra_forbidden":
                msg = f"unknown key '{loc[-1]}'"
            lines.append(f"{where}: {path}: {msg}")
        raise ConfigError("\n".join(lines)) from None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.resolved(), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def with_overrides(cfg: RunConfig, **solver) -> RunConfig:
    """Copy of ``cfg`` with solver fields replaced (``None`` values are ignored)."""
    upd = {k: v for k, v in solver.items() if v is not None}
    if not upd:
        return cfg
    return cfg.model_copy(update={"solver": cfg.solver.model_copy(update=upd)})

