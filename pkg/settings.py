from __future__ import annotations

from logging import getLogger
from pathlib import Path
from typing import Any, Iterable

from pydantic import BaseModel, Field
from pydantic_settings import (
    BaseSettings,
    EnvSettingsSource,
    SettingsConfigDict,
    TomlConfigSettingsSource,
)

from volfeedback.calibrator import CalibrationSettings
from volfeedback.models import MODEL_PARAM_KEYS, ModelParams, validate
from volfeedback.pd_solver import PDGridConfig
from volfeedback.pricer import MCConfig
from volfeedback.simulator import SimConfig

logger = getLogger(__name__)


class ModelSection(BaseModel, frozen=True):
    r: float = 0.02
    alpha: float = 0.05
    gamma: float = 2.0
    beta: float = 0.5
    beta_q: float = 0.5
    sigma_x: float = 0.2
    rho_dx: float = -0.5

    def to_params(self) -> ModelParams:
        return validate(ModelParams(**self.model_dump()))


class RunConfig(BaseSettings, frozen=True):  # type: ignore[misc]
    model: ModelSection = Field(default_factory=ModelSection)
    grid: PDGridConfig = Field(default_factory=PDGridConfig)
    sim: SimConfig = Field(default_factory=SimConfig)
    mc: MCConfig = Field(default_factory=MCConfig)
    calibration: CalibrationSettings = Field(
        default_factory=CalibrationSettings
    )

    seed: int | None = Field(default=None, ge=0)
    threads: int = Field(default=1, ge=1)
    output_dir: Path = Path(".")

    model_config = SettingsConfigDict(
        env_prefix="volfeedback_",
        env_nested_delimiter="__",
        extra="ignore",
    )

    def sim_config(self) -> SimConfig:
        if self.seed is None:
            return self.sim

        return self.sim.model_copy(update={"seed": self.seed})

    def mc_config(self) -> MCConfig:
        if self.seed is None:
            return self.mc

        return self.mc.model_copy(update={"seed": self.seed})


def parse_override(override: str) -> tuple[list[str], str]:
    """
    Split `key=value` into a key path and a raw value. Bare model parameter
    names address the `model` section.
    """
    key, sep, value = override.partition("=")
    key = key.strip()

    if not sep or not key:
        raise ValueError(f"Expected key=value, got {override!r}")

    path = key.split(".")

    if len(path) == 1 and key in MODEL_PARAM_KEYS:
        path = ["model", key]

    return path, value.strip()


def _merge(base: dict[str, Any], changes: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)

    for key, value in changes.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value

    return merged


def _nest(path: list[str], value: Any) -> dict[str, Any]:
    for key in reversed(path):
        value = {key: value}

    return value


def load_run_config(
    path: Path | None = None, overrides: Iterable[str] = ()
) -> RunConfig:
    """
    Overrides win over environment variables, which win over the TOML file,
    which wins over the defaults.
    """
    overrides = list(overrides)
    data: dict[str, Any] = {}

    if path is not None:
        data = TomlConfigSettingsSource(RunConfig, toml_file=path)()

    data = _merge(data, EnvSettingsSource(RunConfig)())

    for override in overrides:
        key_path, value = parse_override(override)
        data = _merge(data, _nest(key_path, value))

    config = RunConfig(**data)

    logger.debug(
        "Loaded run configuration",
        extra={"path": str(path), "overrides": overrides},
    )

    return config
