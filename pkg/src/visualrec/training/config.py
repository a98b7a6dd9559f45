"""
Training configuration and the declarative run-configuration file.

A run configuration is a UTF-8 text file with one `key = value` pair per line, `#` comments and
blank lines ignored. Keys are `TrainConfig` field names. Values from the file are overridden by
explicit command-line flags; whatever neither sets falls back to the field default.
"""

from logging import getLogger
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from visualrec.exceptions import ConfigError
from visualrec.models.base import ModelDims, ModelKind, Regularization


logger = getLogger(__name__)

OptimizerName = Literal["sgd", "momentum", "adam"]


class TrainConfig(BaseModel):
    """Every knob of a training run. Defaults are ours; the method description fixes none."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    model_kind: ModelKind = ModelKind.MF
    latent_dim: int = Field(default=16, ge=1)
    mf_latent_dim: int | None = Field(default=None, ge=1)
    visual_dim: int = Field(default=16, ge=0)
    tower_widths: tuple[int, ...] = ()
    use_bias: bool = False

    learning_rate: float = Field(default=0.3, ge=0)
    lambda_u: float = Field(default=0.0, ge=0)
    lambda_v: float = Field(default=0.0, ge=0)
    lambda_net: float = Field(default=0.0, ge=0)
    batch_size: int = Field(default=32, ge=1)
    max_epochs: int = Field(default=100, ge=1)
    patience: int = Field(default=5, ge=1)
    seed: int = Field(default=0, ge=0)
    init_std: float = Field(default=0.01, gt=0)
    clamp_eval: bool = False
    divergence_threshold: float = Field(default=1e6, gt=0)

    optimizer: OptimizerName = "sgd"
    momentum: float = Field(default=0.9, ge=0, lt=1)
    adam_beta1: float = Field(default=0.9, ge=0, lt=1)
    adam_beta2: float = Field(default=0.999, ge=0, lt=1)
    adam_epsilon: float = Field(default=1e-8, gt=0)

    warm_start_mf: Path | None = None
    warm_start_vmlp: Path | None = None
    warm_start_alpha: float = Field(default=0.5, ge=0, le=1)

    @field_validator("model_kind", mode="before")
    @classmethod
    def parse_model_kind(cls, value: Any) -> ModelKind:
        try:
            return ModelKind.parse(value)
        except ValueError as e:
            raise ValueError(str(e)) from e

    @field_validator("optimizer", mode="before")
    @classmethod
    def normalize_optimizer(cls, value: Any) -> Any:
        return value.strip().lower() if isinstance(value, str) else value

    @field_validator("tower_widths", mode="before")
    @classmethod
    def parse_tower_widths(cls, value: Any) -> Any:
        if isinstance(value, str):
            parts = [p.strip() for p in value.split(",") if p.strip()]
            return tuple(int(p) for p in parts)
        return value

    @field_validator("tower_widths")
    @classmethod
    def check_tower_widths(cls, value: tuple[int, ...]) -> tuple[int, ...]:
        if any(w < 1 for w in value):
            raise ValueError(f"tower widths must be positive, got {value}")
        return value

    @model_validator(mode="after")
    def check_warm_start(self) -> "TrainConfig":
        warm = (self.warm_start_mf, self.warm_start_vmlp)
        if any(p is not None for p in warm):
            if self.model_kind is not ModelKind.MF_VMLP:
                raise ValueError("warm start applies to MF-VMLP only")
            if not all(p is not None for p in warm):
                raise ValueError("warm start needs both warm_start_mf and warm_start_vmlp")
        return self

    @property
    def regularization(self) -> Regularization:
        return Regularization(
            lambda_u=self.lambda_u, lambda_v=self.lambda_v, lambda_net=self.lambda_net
        )

    def model_dims(self, dim_f: int) -> ModelDims:
        return ModelDims(
            latent_dim=self.latent_dim,
            mf_latent_dim=self.mf_latent_dim or self.latent_dim,
            visual_dim=self.visual_dim,
            dim_f=dim_f if self.model_kind is not ModelKind.MF else 0,
            tower_widths=self.tower_widths,
            use_bias=self.use_bias,
        )


def read_run_config(path: Path) -> dict[str, str]:
    """Parse a `key = value` file into raw strings; validation happens in `build_train_config`."""
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e

    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{path}: line {lineno}: expected 'key = value', got {raw!r}")
        if key not in TrainConfig.model_fields:
            raise ConfigError(f"{path}: line {lineno}: unknown key {key!r}")
        values[key] = value.strip()
    logger.debug("Read %s keys from %s", len(values), path)
    return values


def build_train_config(
    file_values: dict[str, Any] | None = None, overrides: dict[str, Any] | None = None
) -> TrainConfig:
    """Merge file values under explicit overrides (None means unset) and validate once."""
    merged: dict[str, Any] = dict(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = sorted(set(merged) - set(TrainConfig.model_fields))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    try:
        return TrainConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigError(f"invalid training configuration: {e}") from e
