"""Run configuration: a JSON document validated before any computation.

Validation errors are reported as ``file:line: location: message`` where the
line is the one holding the offending key.
"""

from __future__ import annotations

import json
import math
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .coefficients import BridgeModel
from .engine import SimConfig
from .levy import ExpCompoundPoisson, TemperedStable

PAPER_DT = 1 / 200_000
PAPER_N = 200_000


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ExpCPSpec(_Strict):
    type: Literal["exp_cp"]
    lambda_: float = Field(alias="lambda", ge=0)
    eta: float = Field(gt=0)

    def build(self):
        return ExpCompoundPoisson(self.lambda_, self.eta)


class TemperedStableSpec(_Strict):
    type: Literal["tempered_stable"]
    c: float = Field(gt=0)
    beta: float = Field(gt=0)
    alpha: float = Field(gt=0, lt=1)

    def build(self):
        return TemperedStable(self.c, self.beta, self.alpha)


DriverSpec = Annotated[Union[ExpCPSpec, TemperedStableSpec], Field(discriminator="type")]


class ModelSpec(_Strict):
    r: float = Field(gt=0)
    p: float = Field(default=0.0, ge=0)
    x0: float = 0.0
    x_hat: float = 0.0
    driver: DriverSpec

    @model_validator(mode="after")
    def _valid(self):
        BridgeModel(self.r, self.driver.build(), self.x0, self.x_hat, self.p)
        return self

    def build(self) -> BridgeModel:
        return BridgeModel(self.r, self.driver.build(), self.x0, self.x_hat, self.p)


class SimSpec(_Strict):
    dt: float = 1 / 20_000
    n_paths: int = 20_000
    seed: int = Field(default=0, ge=0, lt=2**64)
    scheme: Literal["raw", "compensated"] = "raw"
    se_drift: Literal["reduced", "nominal"] = "reduced"
    decimation: int = Field(default=200, ge=1)
    paths_written: int = Field(default=20, ge=0)

    @field_validator("n_paths")
    @classmethod
    def _n_paths(cls, v):
        if v < 2:
            raise ValueError("n_paths must be ≥ 2")
        return v

    @field_validator("dt")
    @classmethod
    def _dt(cls, v):
        if not (v > 0 and math.isfinite(v)):
            raise ValueError("dt must be > 0")
        n = round(1 / v)
        if abs(n * v - 1) > 1e-9:
            raise ValueError("1/dt must be an integer")
        return v

    def build(self) -> SimConfig:
        return SimConfig(self.dt, self.seed, self.scheme, self.se_drift)


class SimulateTask(_Strict):
    kind: Literal["ou", "se", "controlled", "bridge"] = "bridge"
    F: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _f(self):
        if self.kind == "controlled" and self.F is None:
            raise ValueError("kind 'controlled' needs F")
        return self


class MomentsTask(_Strict):
    coefficient_points: int = Field(default=1000, ge=2)


class VerifyTask(_Strict):
    sweep_dts: list[float] = [1 / 5_000, 1 / 10_000, 1 / 20_000]
    variance_deltas: list[float] = [1e-1, 1e-2]
    se_p: float = Field(default=2.0, gt=0)
    floor_control_p: Optional[float] = Field(default=None, gt=0)
    corrupt: Optional[Literal["I1", "A", "B"]] = None


class SyntheticSpec(_Strict):
    interval_seconds: int = Field(default=3600, gt=0)
    n_samples: int = Field(default=100_000, ge=100)
    substeps: int = Field(default=4, ge=1)


class CalibrateTask(_Strict):
    input: Optional[str] = None
    synthetic: Optional[SyntheticSpec] = None
    resample_interval: int = Field(default=3600, gt=0)
    gap_threshold: Optional[int] = Field(default=None, gt=0)
    family: Literal["exp_cp", "tempered_stable"] = "exp_cp"
    se: bool = False
    decay_identifies: Literal["r", "R"] = "r"
    max_lag: Optional[int] = Field(default=None, ge=2)
    n_starts: int = Field(default=10, ge=1)

    @model_validator(mode="after")
    def _source(self):
        if (self.input is None) == (self.synthetic is None):
            raise ValueError("give exactly one of 'input' (CSV path) or 'synthetic'")
        return self


class TaskSpec(_Strict):
    simulate: SimulateTask = SimulateTask()
    moments: MomentsTask = MomentsTask()
    verify: VerifyTask = VerifyTask()
    calibrate: Optional[CalibrateTask] = None


class RunConfig(_Strict):
    model: ModelSpec
    sim: SimSpec = SimSpec()
    task: TaskSpec = TaskSpec()
    output_dir: str = "out"

    def echo(self) -> dict:
        """Config as embedded in artifacts (the output directory is left out)."""
        d = self.model_dump(mode="json", by_alias=True)
        d.pop("output_dir", None)
        return d


def _key_line(text: str, loc) -> int:
    pos = 0
    for part in loc:
        if isinstance(part, str):
            i = text.find(f'"{part}"', pos)
            if i >= 0:
                pos = i
    return text.count("\n", 0, pos) + 1


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = [p for p in err["loc"] if not (isinstance(p, str) and p in ("exp_cp", "tempered_stable"))]
            where = ".".join(str(p) for p in loc) or "<root>"
            msg = err["msg"]
            if msg.startswith("Value error, "):
                msg = msg[len("Value error, "):]
            lines.append(f"{source}:{_key_line(text, loc)}: {where}: {msg}")
        raise ConfigError("\n".join(lines)) from None


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path))


def apply_overrides(cfg: RunConfig, seed=None, scheme=None, paper_scale=False) -> RunConfig:
    sim = cfg.sim.model_dump()
    if seed is not None:
        sim["seed"] = seed
    if scheme is not None:
        sim["scheme"] = scheme
    if paper_scale:
        sim["dt"] = PAPER_DT
        sim["n_paths"] = PAPER_N
    try:
        new_sim = SimSpec.model_validate(sim)
    except ValidationError as exc:
        raise ConfigError("; ".join(f"sim.{'.'.join(map(str, e['loc']))}: {e['msg']}" for e in exc.errors())) from None
    return cfg.model_copy(update=dict(sim=new_sim))
