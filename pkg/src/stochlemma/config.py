"""Experiment configuration: one JSON document validated with pydantic.

Precedence, lowest first: built-in defaults (the aircraft benchmark), the
``--config`` file, then command-line flags.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import aircraft as ac
from .errors import ConfigError, DataError
from .lti import VarxModel
from .pce import DisturbanceSpec, Gaussian


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelConfig(_Strict):
    """Plant used for simulation: the built-in aircraft, inline VARX
    matrices, or a model JSON file written by :mod:`stochlemma.io`."""

    source: Literal["aircraft", "inline", "file"] = "aircraft"
    A_hat: Optional[List[List[float]]] = None
    B_hat: Optional[List[List[float]]] = None
    lag: Optional[int] = Field(default=None, ge=1)
    path: Optional[Path] = None

    @model_validator(mode="after")
    def _complete(self):
        if self.source == "inline" and (self.A_hat is None or self.B_hat is None or self.lag is None):
            raise ValueError("inline model needs A_hat, B_hat and lag")
        if self.source == "file":
            if self.path is None:
                raise ValueError("file model needs a path")
            if not self.path.is_file():
                raise ValueError(f"model file {self.path} does not exist")
        return self

    def build(self) -> VarxModel:
        if self.source == "aircraft":
            return ac.model()
        if self.source == "inline":
            return VarxModel(np.array(self.A_hat), np.array(self.B_hat), lag=self.lag, assumption2=True)
        from .io import model_from_json, read_json

        m = model_from_json(read_json(self.path))
        if not isinstance(m, VarxModel):
            from .lti import varx_from_state_space

            m = varx_from_state_space(m)
        return m


class DisturbanceConfig(_Strict):
    """Independent components; ``params`` are ``(low, high)`` bounds for
    uniform and ``(mean, std)`` for Gaussian disturbances."""

    kind: Literal["uniform", "gaussian"] = "uniform"
    params: List[Tuple[float, float]] = Field(
        default_factory=lambda: [tuple(b) for b in ac.DISTURBANCE_BOUNDS], min_length=1
    )

    @model_validator(mode="after")
    def _bounds(self):
        for i, (a, b) in enumerate(self.params):
            if self.kind == "uniform" and not a < b:
                raise ValueError(f"component {i}: lower bound must be below upper bound")
            if self.kind == "gaussian" and b < 0:
                raise ValueError(f"component {i}: standard deviation must be non-negative")
        return self

    def build(self) -> DisturbanceSpec:
        if self.kind == "uniform":
            return DisturbanceSpec.uniform(self.params)
        return DisturbanceSpec(tuple(Gaussian(m, s * s) for m, s in self.params))


class SolverConfig(_Strict):
    gap_tol: float = Field(default=1e-9, gt=0)
    feas_tol: float = Field(default=1e-8, gt=0)
    max_iter: int = Field(default=100, ge=1)


class ChanceConfig(_Strict):
    component: int = Field(default=0, ge=0)
    lower: float = -ac.Y1_BOUND
    upper: float = ac.Y1_BOUND
    level: float = Field(default=ac.CHANCE_LEVEL, gt=0, lt=1)
    kappa: float = Field(default=3.0, ge=0)
    enabled: bool = True

    @model_validator(mode="after")
    def _order(self):
        if not self.lower < self.upper:
            raise ValueError("lower must be below upper")
        return self


class DataFiles(_Strict):
    """Recorded data to use instead of simulating; trajectory CSV or JSON."""

    undisturbed: Optional[Path] = None
    disturbed: Optional[Path] = None

    @model_validator(mode="after")
    def _exist(self):
        for name in ("undisturbed", "disturbed"):
            p = getattr(self, name)
            if p is not None and not p.is_file():
                raise ValueError(f"{name} data file {p} does not exist")
        return self


class ExperimentConfig(_Strict):
    model: ModelConfig = Field(default_factory=ModelConfig)
    disturbance: DisturbanceConfig = Field(default_factory=DisturbanceConfig)
    ell: Optional[int] = Field(default=None, ge=1)
    N: int = Field(default=10, ge=1)
    steps: int = Field(default=30, ge=1)
    T: int = Field(default=ac.DATA_LENGTH, ge=2)
    T_hat: Optional[int] = Field(default=None, ge=2)
    schemes: List[Literal["I", "II", "III"]] = Field(default_factory=lambda: ["I", "II", "III"])
    scheme: Literal["I", "II", "III"] = "I"
    solver: SolverConfig = Field(default_factory=SolverConfig)
    chance: ChanceConfig = Field(default_factory=ChanceConfig)
    Q: Optional[List[List[float]]] = None
    R: Optional[List[List[float]]] = None
    init_center: Optional[List[float]] = None
    init_spread: float = Field(default=1.0, ge=0)
    feedback: Literal["none", "lqr", "search"] = "lqr"
    input_scale: float = Field(default=1.0, gt=0)
    include_w: bool = True
    seed: int = Field(default=0, ge=0)
    n_samples: int = Field(default=1000, ge=1)
    workers: int = Field(default=1, ge=1)
    mc_samples: int = Field(default=10_000, ge=1)
    bins: int = Field(default=40, ge=1)
    share: bool = False
    write_runs: bool = True
    inputs_file: Optional[Path] = None
    data: DataFiles = Field(default_factory=DataFiles)
    out: Path = Path("out")

    @field_validator("schemes")
    @classmethod
    def _nonempty(cls, v):
        if not v:
            raise ValueError("select at least one scheme")
        return list(dict.fromkeys(v))

    @field_validator("inputs_file")
    @classmethod
    def _inputs_exist(cls, v):
        if v is not None and not v.is_file():
            raise ValueError(f"inputs file {v} does not exist")
        return v

    @model_validator(mode="after")
    def _consistent(self):
        m = self.model.build()
        if self.ell is not None and self.ell != m.lag:
            raise ValueError(f"ell={self.ell} differs from the model lag {m.lag}")
        if len(self.disturbance.params) != m.n_w:
            raise ValueError(f"disturbance has {len(self.disturbance.params)} components, model expects {m.n_w}")
        for name, n in (("Q", m.n_y), ("R", m.n_u)):
            M = getattr(self, name)
            if M is not None and np.shape(M) != (n, n):
                raise ValueError(f"{name} must be {n}x{n}")
        if self.init_center is not None and len(self.init_center) != m.n_y:
            raise ValueError(f"init_center must have {m.n_y} entries")
        if self.chance.component >= m.n_y:
            raise ValueError(f"chance.component must be below n_y={m.n_y}")
        return self

    # ------------------------------------------------------------ helpers

    def plant(self) -> VarxModel:
        return self.model.build()

    def spec(self) -> DisturbanceSpec:
        return self.disturbance.build()

    def weights(self):
        m = self.plant()
        Q = np.eye(m.n_y) if self.Q is None else np.array(self.Q, dtype=float)
        R = np.eye(m.n_u) if self.R is None else np.array(self.R, dtype=float)
        return Q, R

    def center(self) -> np.ndarray:
        if self.init_center is not None:
            return np.array(self.init_center, dtype=float)
        m = self.plant()
        return ac.INIT_OUTPUT.copy() if self.model.source == "aircraft" else np.zeros(m.n_y)

    def constraints(self):
        from .ocp import ChanceConstraint

        c = self.chance
        if not c.enabled:
            return []
        return [ChanceConstraint(c.component, c.lower, c.upper, c.level, c.kappa)]


def _format_errors(exc: ValidationError) -> List[dict]:
    return [
        {"field": ".".join(str(p) for p in e["loc"]) or "<root>", "message": e["msg"], "type": e["type"]}
        for e in exc.errors()
    ]


def set_path(doc: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    cur = doc
    for k in keys[:-1]:
        nxt = cur.get(k)
        if not isinstance(nxt, dict):
            nxt = {}
            cur[k] = nxt
        cur = nxt
    cur[keys[-1]] = value


def parse_value(text: str):
    """Interpret a command-line override as JSON when possible, else a string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path: Optional[Path] = None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Merge file contents and ``overrides`` (dotted keys) and validate.

    Raises :class:`ConfigError` whose ``fields`` list every offending field.
    """
    doc: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} does not exist", [{"field": "--config", "message": "not found"}])
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {p} is not valid JSON: {exc}", [{"field": "--config", "message": str(exc)}])
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object", [{"field": "<root>", "message": "not an object"}])
    for key, value in (overrides or {}).items():
        set_path(doc, key, value)
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as exc:
        fields = _format_errors(exc)
        names = ", ".join(f["field"] for f in fields)
        raise ConfigError(f"invalid configuration ({names})", fields) from None
    except DataError as exc:
        raise ConfigError(f"invalid model: {exc}", [{"field": "model", "message": str(exc)}]) from None
