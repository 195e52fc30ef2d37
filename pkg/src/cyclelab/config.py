"""Run configuration: TOML text validated into typed sections."""
from __future__ import annotations

import math
import sys
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .quotient import CycleCentralData
from .system import CycleSpec
from .tower import TowerConfig

DICTIONARY_IDS = ("constant", "central", "a_phase", "b_phase", "central_log_derivative")


class ConfigParseError(Exception):
    pass


class ConfigValidationError(Exception):
    pass


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(_Section):
    lam: float = Field(0.95, gt=0.0, lt=1.0)
    beta: float = Field(1.2, gt=1.0)
    tau: Literal[-1, 1] = 1
    pi_a: int = Field(1, ge=1)
    pi_b: int = Field(1, ge=1)
    t_ab: int = Field(2, ge=1)
    t_ba: int = Field(2, ge=1)
    regime: bool = False
    s_dim: int = Field(1, ge=0)
    u_dim: int = Field(1, ge=0)
    rho_s: Optional[float] = Field(None, gt=0.0, lt=1.0)
    rho_u: Optional[float] = Field(None, gt=1.0)
    chart_radius: float = Field(1e-3, gt=0.0)
    chart_separation: float = Field(1.0, gt=0.0)
    overflow_tol: float = Field(1e-3, ge=0.0)
    strong_offsets: dict[Literal["ab", "ba"], dict[Literal["s", "u"], list[float]]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _regime(self):
        if self.regime and not 0.9 < self.lam < 1.0:
            raise ValueError("lam must lie in (0.9, 1) when regime = true")
        return self

    def to_spec(self) -> CycleSpec:
        central = CycleCentralData(lam=self.lam, beta=self.beta, tau=self.tau, pi_a=self.pi_a,
                                   pi_b=self.pi_b, t_ab=self.t_ab, t_ba=self.t_ba, regime=self.regime)
        return CycleSpec(central=central, s_dim=self.s_dim, u_dim=self.u_dim, rho_s=self.rho_s,
                         rho_u=self.rho_u, chart_radius=self.chart_radius,
                         chart_separation=self.chart_separation,
                         strong_offsets={k: dict(v) for k, v in self.strong_offsets.items()},
                         overflow_tol=self.overflow_tol)


IntOrList = Union[int, list[int]]
FloatOrList = Union[float, list[float]]


class TowerSection(_Section):
    C: float = Field(320.0, gt=0.0)
    halving_ratio: float = Field(0.5, gt=0.0, lt=1.0)
    levels: int = Field(4, ge=0, le=64)
    m_min: IntOrList = 2
    m_max: IntOrList = 5000
    l_max: IntOrList = 100000
    kappa_floor: FloatOrList = Field(default_factory=lambda: [0.0, 0.0, 0.0, 0.99])
    first_l: Optional[int] = Field(17, ge=0)
    first_m: Optional[int] = Field(5, ge=1)
    first_m_max: int = Field(200, ge=1)
    exit_fraction: float = Field(0.25, gt=0.0, lt=1.0)
    period_cap: int = Field(10 ** 6, ge=1)
    minimize_period: bool = False

    @field_validator("m_min", "m_max", "l_max")
    @classmethod
    def _positive(cls, v):
        vals = v if isinstance(v, list) else [v]
        if not vals or any(x < 0 for x in vals):
            raise ValueError("must be a non-negative integer or a non-empty list of them")
        return v

    @field_validator("kappa_floor")
    @classmethod
    def _fraction(cls, v):
        vals = v if isinstance(v, list) else [v]
        if not vals or any(not 0.0 <= x < 1.0 for x in vals):
            raise ValueError("entries must lie in [0, 1)")
        return v

    def to_config(self) -> TowerConfig:
        return TowerConfig(C=self.C, halving_ratio=self.halving_ratio, max_levels=self.levels,
                           m_min=self.m_min, m_max=self.m_max, l_max=self.l_max,
                           kappa_floor=self.kappa_floor, first_l=self.first_l, first_m=self.first_m,
                           first_m_max=self.first_m_max, exit_fraction=self.exit_fraction,
                           period_cap=self.period_cap, minimize_period=self.minimize_period)


class VerifySection(_Section):
    eps: list[float] = Field(default_factory=lambda: [0.1, 0.05])
    dictionary: list[Literal[DICTIONARY_IDS]] = Field(default_factory=lambda: list(DICTIONARY_IDS))
    support_max_n: int = Field(3, ge=1)

    @field_validator("eps")
    @classmethod
    def _eps(cls, v):
        if any(not x > 0 for x in v):
            raise ValueError("every eps must be positive")
        return v


class CorbdRow(_Section):
    k: int = Field(4, ge=4)
    p: int = Field(2, ge=1)
    q: int = Field(6, ge=1)
    orientation: Optional[Literal["preserving", "reversing"]] = None


class SolveSection(_Section):
    l: list[int] = Field(default_factory=lambda: [1, 10], min_length=2, max_length=2)
    m: list[int] = Field(default_factory=lambda: [1, 10], min_length=2, max_length=2)
    corbd: list[CorbdRow] = Field(default_factory=list)


class OutputSection(_Section):
    format: Literal["json", "csv"] = "json"
    path: Optional[str] = None


class SweepSection(_Section):
    grid: dict[str, list[Union[int, float, bool]]] = Field(default_factory=dict)
    workers: int = Field(1, ge=1)


class RunConfig(_Section):
    model: ModelSection = Field(default_factory=ModelSection)
    tower: TowerSection = Field(default_factory=TowerSection)
    verify: VerifySection = Field(default_factory=VerifySection)
    solve: SolveSection = Field(default_factory=SolveSection)
    output: OutputSection = Field(default_factory=OutputSection)
    sweep: SweepSection = Field(default_factory=SweepSection)
    seed: int = 0

    @model_validator(mode="after")
    def _constant(self):
        bound = 16.0 / abs(math.log(self.model.lam) / self.model.pi_a)
        if not self.tower.C > bound:
            raise ValueError(f"tower.C = {self.tower.C} must exceed 16/|ln(lam)/pi_a| = {bound:.6g}")
        return self

    @model_validator(mode="after")
    def _sweep_keys(self):
        for key in self.sweep.grid:
            sec, _, name = key.partition(".")
            if sec not in ("model", "tower") or name not in type(getattr(self, sec)).model_fields:
                raise ValueError(f"sweep key {key!r} does not name a model.* or tower.* field")
        return self


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        msg = err["msg"].removeprefix("Value error, ")
        loc = ".".join(str(p) for p in err["loc"])
        lines.append(f"{loc}: {msg}" if loc else msg)
    return "; ".join(lines)


def validate_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigValidationError(_format_errors(exc)) from None


def parse_config_text(text: str) -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigParseError(str(exc)) from None


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigParseError(f"cannot read {path}: {exc}") from None
    return validate_config(parse_config_text(text))


def with_override(cfg: RunConfig, dotted: dict) -> RunConfig:
    """Copy of cfg with dotted keys (``section.field``) replaced, re-validated."""
    data = cfg.model_dump()
    for key, value in dotted.items():
        sec, _, name = key.partition(".")
        data[sec][name] = value
    return validate_config(data)
