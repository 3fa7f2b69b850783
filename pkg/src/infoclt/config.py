from __future__ import annotations

import os
from pathlib import Path
from typing import List, Literal, Optional

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .density import GridSpec
from .errors import ConfigError
from .families import DistributionSpec


CommandLiteral = Literal["info", "sweep", "poincare", "project", "debruijn", "verify"]

ENV_PREFIX = "INFOCLT__"


class GridConfig(BaseModel):
    points: int = Field(4096, ge=16)
    domain_halfwidth: float = Field(12.0, gt=0.0)

    def spec(self) -> GridSpec:
        return GridSpec(points=self.points, halfwidth=self.domain_halfwidth)


class ToleranceConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    floor_rel: float = Field(1e-12, gt=0.0, le=1e-2)
    growth: float = Field(0.10, gt=0.0)
    slack: float = Field(1e-6, gt=0.0)
    identity: float = Field(1e-2, gt=0.0)
    intermediate: float = Field(1e-4, gt=0.0)
    prop: float = Field(1e-4, gt=0.0)
    telescoping: float = Field(2e-3, gt=0.0)
    agreement: float = Field(1e-3, gt=0.0)
    scale: float = Field(1e-4, gt=0.0)
    debruijn: float = Field(1e-2, gt=0.0)


class OutputConfig(BaseModel):
    dir: str = Field("out")
    formats: List[Literal["csv", "json"]] = Field(default_factory=lambda: ["csv", "json"])

    @field_validator("formats")
    @classmethod
    def formats_nonempty(cls, v):
        if not v:
            raise ValueError("at least one output format is required")
        return sorted(set(v))


class LogsConfig(BaseModel):
    level: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = Field("INFO")

    @field_validator("level", mode="before")
    @classmethod
    def upper(cls, v):
        return v.upper() if isinstance(v, str) else v


class MetricsConfig(BaseModel):
    enabled: bool = Field(False)
    port: int = Field(9308)


class RuntimeConfig(BaseModel):
    threads: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)
    seed: int = Field(0, ge=0)


class DiscreteConfig(BaseModel):
    """Atoms of the discrete law smoothed by the verify command."""

    atoms: List[float] = Field(default_factory=lambda: [-1.0, 1.0])
    weights: List[float] = Field(default_factory=lambda: [0.5, 0.5])


class RunConfig(BaseModel):
    command: CommandLiteral = Field("info")
    spec: DistributionSpec = Field(default_factory=lambda: DistributionSpec(family="normal"))
    grid: GridConfig = Field(default_factory=GridConfig)
    tolerances: ToleranceConfig = Field(default_factory=ToleranceConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)
    logs: LogsConfig = Field(default_factory=LogsConfig)
    metrics: MetricsConfig = Field(default_factory=MetricsConfig)
    runtime: RuntimeConfig = Field(default_factory=RuntimeConfig)
    discrete: DiscreteConfig = Field(default_factory=DiscreteConfig)
    n_set: List[int] = Field(default_factory=lambda: [1, 2, 4, 8, 16, 32, 64])
    radii: List[float] = Field(default_factory=lambda: [0.0, 0.5, 1.0, 2.0, 3.0, 4.0])
    beta: float = Field(0.5, ge=0.0, le=1.0)
    tau: float = Field(0.25, gt=0.0)
    debruijn_nodes: int = Field(48, ge=4)
    clip: float = Field(1e-4, gt=0.0, lt=0.5)
    telescoping_n: List[int] = Field(default_factory=lambda: [2, 4, 8])
    k_max: int = Field(6, ge=1, le=12)

    @field_validator("n_set")
    @classmethod
    def n_set_valid(cls, v):
        if not v or any(n < 1 or n > 4096 for n in v):
            raise ValueError("n_set entries must lie in 1..4096")
        return sorted(set(v))

    @field_validator("radii")
    @classmethod
    def radii_valid(cls, v):
        if not v or any(r < 0 for r in v):
            raise ValueError("radii must be non-empty and >= 0")
        return sorted(set(v))

    @field_validator("telescoping_n")
    @classmethod
    def telescoping_n_valid(cls, v):
        if any(n < 1 or n > 8 for n in v):
            raise ValueError("telescoping n must lie in 1..8")
        return sorted(set(v))


def deep_update(d: dict, u: dict) -> dict:
    for k, v in u.items():
        if isinstance(v, dict) and isinstance(d.get(k), dict):
            d[k] = deep_update(d.get(k, {}), v)
        else:
            d[k] = v
    return d


def _cast(value: str) -> object:
    if value.lower() in {"true", "false"}:
        return value.lower() == "true"
    if "," in value:
        return [_cast(x.strip()) for x in value.split(",") if x.strip()]
    try:
        if any(c in value for c in ".eE") or value.lower() in {"inf", "nan"}:
            return float(value)
        return int(value)
    except ValueError:
        return value


def env_overlay(prefix: str = ENV_PREFIX) -> dict:
    """Overlay settings from environment variables with a prefix.
    Example: INFOCLT__GRID__POINTS=8192 -> {"grid": {"points": 8192}}
    Booleans: true/false; numbers auto-cast; comma-separated values become lists.
    """
    out: dict = {}
    for key, value in os.environ.items():
        if not key.startswith(prefix):
            continue
        path = key[len(prefix):].lower().split("__")
        ref = out
        for p in path[:-1]:
            ref = ref.setdefault(p, {})
        ref[path[-1]] = _cast(value)
    return out


def load_config(path: str | Path | None, overrides: Optional[dict] = None) -> RunConfig:
    """File, then INFOCLT__ environment, then command-line overrides; later sources win."""
    load_dotenv(override=False)
    base: dict = {}
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                base = yaml.safe_load(f) or {}
        except OSError as e:
            raise ConfigError(f"Cannot read config {path}: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"Malformed config {path}: {e}") from e
        if not isinstance(base, dict):
            raise ConfigError(f"Config {path} must contain a mapping at the top level")

    merged = deep_update(base, env_overlay())
    merged = deep_update(merged, overrides or {})

    try:
        cfg = RunConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigError(f"Invalid config: {e}") from e

    return cfg
