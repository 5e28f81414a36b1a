"""
Config files.

A config file holds `KEY=value` lines in dotenv syntax (`#` comments, quoted
values allowed). Keys match model fields case-insensitively; list fields take
comma-separated values and particle counts accept `inf` for the exact (Kalman)
estimator. Command-line flags override file values.
"""
import typing
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Type, TypeVar, Union

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, ValidationError, model_validator

from pfsgld.diagnostics import SweepPlan
from pfsgld.exceptions import ConfigError
from pfsgld.gradient import EstimatorKind
from pfsgld.model import ModelKind, ModelParams, SYNTHETIC_PARAMS
from pfsgld.sgld import SgldConfig

M = TypeVar("M", bound=BaseModel)

INF_TOKENS = {"inf", "infinity", "none", "kalman"}

# Estimator presets of the synthetic and exchange-rate experiments
ESTIMATOR_PRESETS: Dict[str, Dict[str, Any]] = {
    "full": {"estimator": EstimatorKind.FULL},
    "buffered": {"estimator": EstimatorKind.BUFFERED, "S": 40, "B": 10},
    "no_buffer": {"estimator": EstimatorKind.NO_BUFFER, "S": 40, "B": 0},
    "fully_buffered": {"estimator": EstimatorKind.FULLY_BUFFERED, "S": 40},
    "weekly": {"estimator": EstimatorKind.WEEKLY},
}

EPS_GRID = (1.0, 0.1, 0.01, 0.001)


class GenerateConfig(BaseModel):
    """Synthetic data settings; params are natural coordinates, or GARCH (alpha, beta, gamma, tau)."""

    model_config = ConfigDict(extra="forbid")

    model: ModelKind = ModelKind.LGSSM
    params: Optional[List[float]] = None
    garch_coefficients: Optional[List[float]] = None
    T: PositiveInt = 256
    seed: int = 0

    @model_validator(mode="after")
    def _one_parametrization(self):
        if self.params is not None and self.garch_coefficients is not None:
            raise ValueError("give params or garch_coefficients, not both")
        if self.garch_coefficients is not None and self.model != ModelKind.GARCH:
            raise ValueError("garch_coefficients only apply to the garch model")
        return self

    def model_params(self) -> ModelParams:
        if self.garch_coefficients is not None:
            if len(self.garch_coefficients) != 4:
                raise ConfigError("garch_coefficients needs alpha,beta,gamma,tau")
            return ModelParams.from_garch_coefficients(*self.garch_coefficients)
        if self.params is not None:
            return ModelParams.from_natural(self.model, self.params)
        return SYNTHETIC_PARAMS[self.model]


class KsdConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    burnin: Optional[int] = Field(default=None, ge=0)
    thin: PositiveInt = 1
    seed: int = 0


def _is_list(annotation) -> bool:
    origin = typing.get_origin(annotation)
    if origin is Union:
        return any(_is_list(arg) for arg in typing.get_args(annotation) if arg is not type(None))
    return origin in (list, List)


def _parse_value(raw: Optional[str], as_list: bool):
    if raw is None:
        return None
    raw = raw.strip()

    def scalar(token: str):
        token = token.strip()
        return None if token.lower() in INF_TOKENS else token

    if as_list:
        return [scalar(tok) for tok in raw.split(",") if tok.strip()]
    return scalar(raw)


def parse_config(values: Mapping[str, Optional[str]], model_cls: Type[M]) -> Dict[str, Any]:
    """Map raw key/value strings onto the fields of model_cls."""
    fields = {name.lower(): name for name in model_cls.model_fields}
    parsed = {}
    for key, raw in values.items():
        name = fields.get(key.strip().lower())
        if name is None:
            raise ConfigError(f"Unknown config key {key!r} for {model_cls.__name__}")
        parsed[name] = _parse_value(raw, _is_list(model_cls.model_fields[name].annotation))
    return parsed


def build_config(model_cls: Type[M], path: Optional[Union[str, Path]] = None, **overrides) -> M:
    """Load model_cls from an optional config file, then apply non-None overrides."""
    values: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Config file not found: {path}")
        values.update(parse_config(dotenv_values(path), model_cls))
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return model_cls(**values)
    except ValidationError as e:
        raise ConfigError(f"Invalid {model_cls.__name__}: {e}") from e


def sgld_config(path=None, preset: Optional[str] = None, **overrides) -> SgldConfig:
    """SgldConfig from preset < config file < overrides."""
    base: Dict[str, Any] = {}
    if preset is not None:
        if preset not in ESTIMATOR_PRESETS:
            raise ConfigError(f"Unknown preset {preset!r}; choose from {sorted(ESTIMATOR_PRESETS)}")
        base.update(ESTIMATOR_PRESETS[preset])
    if path is not None:
        base.update(build_config(SgldConfig, path).model_dump(exclude_unset=True))
    base.update({k: v for k, v in overrides.items() if v is not None})
    return build_config(SgldConfig, **base)


def sweep_plan(path=None, **overrides) -> SweepPlan:
    return build_config(SweepPlan, path, **overrides)


def generate_config(path=None, **overrides) -> GenerateConfig:
    return build_config(GenerateConfig, path, **overrides)


def ksd_config(path=None, **overrides) -> KsdConfig:
    return build_config(KsdConfig, path, **overrides)
