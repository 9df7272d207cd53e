"""JSON run configuration: schema, canonical form and hashing."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError as SchemaError

from .errors import InvalidConfig
from .levy_model import (
    SHIPPED_MODELS,
    JumpSpec,
    LevyModel,
    RateProfile,
    SmoothLinearClamp,
    SmoothSaturating,
    StepProfile,
    validate,
)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class NoJumps(_Strict):
    kind: Literal["none"] = "none"


class ExponentialJumps(_Strict):
    kind: Literal["exponential"] = "exponential"
    intensity: float
    rate: float


class HyperJumps(_Strict):
    kind: Literal["hyperexponential"] = "hyperexponential"
    intensity: float
    weights: List[float]
    rates: List[float]


class ModelBlock(_Strict):
    fixture: Optional[Literal["CL-A", "BM-A", "HX-B", "JD-C"]] = None
    gamma: Optional[float] = None
    sigma: float = 0.0
    jumps: Union[NoJumps, ExponentialJumps, HyperJumps] = Field(default_factory=NoJumps, discriminator="kind")

    def build(self) -> LevyModel:
        if self.fixture is not None:
            if self.gamma is not None:
                raise InvalidConfig("give either a fixture or explicit parameters", fixture=self.fixture)
            return SHIPPED_MODELS[self.fixture]()
        if self.gamma is None:
            raise InvalidConfig("model needs gamma or a fixture name")
        j = self.jumps
        if isinstance(j, ExponentialJumps):
            spec = JumpSpec.exponential(j.intensity, j.rate)
        elif isinstance(j, HyperJumps):
            spec = JumpSpec.hyperexponential(j.intensity, j.weights, j.rates)
        else:
            spec = JumpSpec.none()
        return LevyModel(self.gamma, self.sigma, spec, name="custom")


class ZeroProfile(_Strict):
    kind: Literal["zero"] = "zero"


class StepBlock(_Strict):
    kind: Literal["step"] = "step"
    barriers: List[float]
    deltas: List[float]


class ClampBlock(_Strict):
    kind: Literal["linear_clamp"] = "linear_clamp"
    slope: float
    cap: float
    blend: float = 0.05


class SaturatingBlock(_Strict):
    kind: Literal["saturating"] = "saturating"
    cap: float
    rate: float


ProfileBlock = Union[ZeroProfile, StepBlock, ClampBlock, SaturatingBlock]


def build_profile(block) -> RateProfile:
    if isinstance(block, StepBlock):
        return StepProfile(tuple(block.barriers), tuple(block.deltas))
    if isinstance(block, ClampBlock):
        return SmoothLinearClamp(block.slope, block.cap, block.blend)
    if isinstance(block, SaturatingBlock):
        return SmoothSaturating(block.cap, block.rate)
    return StepProfile()


class TaskBlock(_Strict):
    kind: Literal["scale", "exit", "resolvent", "ruin", "simulate", "converge"]
    x: List[float] = Field(default_factory=lambda: [1.0])
    d: float = 0.0
    a: Optional[float] = None
    variant: Literal["two_barrier", "lower_only", "upper_only", "free"] = "free"
    window: Optional[Tuple[float, float]] = None
    method: Literal["analytic", "mc"] = "analytic"
    compare: Optional[Tuple[str, str]] = None
    n_list: List[int] = Field(default_factory=lambda: [2, 3, 4, 5, 6])


class NumericBlock(_Strict):
    h: float = 2.0**-8
    x_max: float = 10.0
    q: float = 0.0
    tol: Optional[float] = None
    seed: int = 0
    n_paths: int = 10_000
    horizon: float = 400.0
    h_sim: float = 1e-3
    scheme: Literal["event", "euler"] = "event"
    stride: int = 8


class OutputBlock(_Strict):
    formats: List[Literal["csv", "json"]] = Field(default_factory=lambda: ["csv", "json"])
    plots: bool = True
    path_dump: int = 0


class RunConfig(_Strict):
    model: ModelBlock
    profile: ProfileBlock = Field(default_factory=ZeroProfile, discriminator="kind")
    task: TaskBlock
    numeric: NumericBlock = Field(default_factory=NumericBlock)
    output: OutputBlock = Field(default_factory=OutputBlock)

    def canonical(self) -> dict:
        return self.model_dump(mode="json")

    def canonical_json(self) -> str:
        return json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def objects(self) -> Tuple[LevyModel, RateProfile]:
        model = self.model.build()
        profile = build_profile(self.profile)
        validate(model, profile).raise_first()
        return model, profile


def parse_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except SchemaError as exc:
        errs = [{"loc": ".".join(map(str, e["loc"])), "msg": e["msg"]} for e in exc.errors()]
        raise InvalidConfig("config does not match the schema", errors=errs) from None


def load_config(path: Union[str, Path]) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidConfig(f"cannot read config: {exc}", path=str(path)) from None
    return parse_config(data)
