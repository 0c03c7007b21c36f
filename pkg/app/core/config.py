# app/core/config.py
from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.core.errors import ConfigError

logger = logging.getLogger(__name__)

EncodingKind = Literal["scalar", "bits", "one-hot"]
DatasetKind = Literal["grid", "community-small", "regular-toy", "edge-list"]


class EDMConfig(BaseModel):
    """Training and sampling constants of the diffusion process."""

    sigma_d: float = Field(0.5, gt=0)
    p_mean: float = -1.2
    p_std: float = Field(1.2, ge=0)
    sigma_min: float = Field(0.002, gt=0)
    sigma_max: float = Field(80.0, gt=0)
    rho: float = Field(7.0, gt=0)
    s_tmin: float = 0.05
    s_tmax: float = 50.0
    s_noise: float = Field(1.003, ge=1.0)
    s_churn: float = Field(40.0, ge=0)
    num_steps: int = Field(256, ge=1)
    self_conditioning: bool = True
    second_order: bool = True

    @model_validator(mode="after")
    def _check_sigma_range(self) -> "EDMConfig":
        if not self.sigma_min < self.sigma_max:
            raise ValueError("sigma_min must be smaller than sigma_max")
        return self


class ModelConfig(BaseModel):
    patch_size: int = Field(4, ge=1)
    window_size: int = Field(6, ge=1)
    token_dim: int = Field(60, ge=1)
    ff_dim: Optional[int] = None
    heads: list[int] = Field(default_factory=lambda: [3, 6, 12, 24])
    down_layers: list[int] = Field(default_factory=lambda: [1, 1, 3, 1])
    up_layers: list[int] = Field(default_factory=lambda: [1, 1, 3, 1])
    bottleneck_layers: int = Field(1, ge=0)
    encoding: EncodingKind = "scalar"
    num_node_types: int = Field(0, ge=0)
    num_edge_types: int = Field(2, ge=2)

    @model_validator(mode="after")
    def _check_stages(self) -> "ModelConfig":
        if self.ff_dim is None:
            self.ff_dim = 4 * self.token_dim
        if not (len(self.heads) == len(self.down_layers) == len(self.up_layers)):
            raise ValueError(
                "heads, down_layers and up_layers must have the same length "
                f"(got {len(self.heads)}, {len(self.down_layers)}, {len(self.up_layers)})"
            )
        for stage, heads in enumerate(self.heads):
            dim = self.stage_dim(stage)
            if heads < 1 or dim % heads:
                raise ValueError(f"stage {stage}: {heads} heads do not divide width {dim}")
        return self

    @property
    def num_stages(self) -> int:
        return len(self.down_layers)

    @property
    def attributed(self) -> bool:
        return self.num_node_types > 0 or self.num_edge_types > 2

    def stage_dim(self, stage: int) -> int:
        return self.token_dim * 2**stage

    @property
    def size_unit(self) -> int:
        """Node counts are padded to a multiple of this value before the backbone."""
        return self.patch_size * self.window_size * 2 ** (self.num_stages - 1)


class DatasetSpec(BaseModel):
    kind: DatasetKind = "grid"
    count: int = Field(100, ge=0)
    rows_min: int = Field(4, ge=1)
    rows_max: int = Field(6, ge=1)
    cols_min: int = Field(4, ge=1)
    cols_max: int = Field(6, ge=1)
    min_nodes: int = Field(12, ge=1)
    max_nodes: int = Field(20, ge=1)
    p_intra: float = Field(0.7, ge=0, le=1)
    p_inter: Optional[float] = Field(None, ge=0, le=1)
    path: Optional[Path] = None
    train_ratio: float = Field(0.8, gt=0, le=1)
    permutations: int = Field(1, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _check_ranges(self) -> "DatasetSpec":
        if self.rows_min > self.rows_max or self.cols_min > self.cols_max:
            raise ValueError("grid row/column ranges are empty")
        if self.min_nodes > self.max_nodes:
            raise ValueError("min_nodes must not exceed max_nodes")
        if self.kind == "edge-list" and self.path is None:
            raise ValueError("edge-list datasets need a path")
        return self


class TrainConfig(BaseModel):
    epochs: int = Field(100, ge=0)
    batch_size: int = Field(16, ge=1)
    lr: float = Field(1e-4, gt=0)
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = Field(1e-8, gt=0)
    ema_decay: float = Field(0.99, ge=0, lt=1)
    sample_with_ema: bool = True
    checkpoint_every: int = Field(50, ge=1)
    seed: int = 0
    output_dir: Path = Path("runs/default")


class EvalConfig(BaseModel):
    clustering_bins: int = Field(100, ge=1)
    bandwidth: float = Field(1.0, gt=0)
    recall_max_nodes: int = Field(20, ge=1)
    n_jobs: int = 1


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="SWINGNN_",
        env_nested_delimiter="__",
        extra="ignore",
    )

    log_level: str = "INFO"
    cors_origins: list[str] = Field(default_factory=lambda: ["http://localhost:5173"])
    edm: EDMConfig = Field(default_factory=EDMConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    @field_validator("log_level")
    @classmethod
    def _upper_level(cls, value: str) -> str:
        return value.upper()


def receptive_field(window_size: int, shifts_per_stage: int, stages: int) -> int:
    """Side length reached by window attention: (2kM)^t."""
    return (2 * max(shifts_per_stage, 1) * window_size) ** max(stages, 1)


def load_settings(config_path: str | Path | None = None, **overrides) -> Settings:
    """Read a KEY=value (dotenv) file; the environment takes precedence."""
    if config_path is not None and not Path(config_path).is_file():
        raise ConfigError(f"config file not found: {config_path}")
    try:
        settings = Settings(_env_file=config_path, **overrides)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc

    model = settings.model
    shifts = max(max(model.down_layers) // 2, 1)
    reach = receptive_field(model.window_size, shifts, model.num_stages) * model.patch_size
    largest = _largest_graph(settings.dataset)
    if largest is not None and reach < largest:
        logger.warning(
            "receptive field %d is smaller than the largest graph (%d nodes)", reach, largest
        )
    return settings


def _largest_graph(spec: DatasetSpec) -> Optional[int]:
    if spec.kind == "grid":
        return spec.rows_max * spec.cols_max
    if spec.kind == "community-small":
        return spec.max_nodes
    if spec.kind == "regular-toy":
        return 16
    return None


def settings_snapshot(settings: Settings) -> dict:
    return settings.model_dump(mode="json")


def settings_from_snapshot(snapshot: dict) -> Settings:
    try:
        return Settings.model_validate(snapshot)
    except ValidationError as exc:
        raise ConfigError(f"checkpoint carries an invalid configuration: {exc}") from exc


def stage_ceil(n: int, unit: int) -> int:
    return int(math.ceil(n / unit) * unit)
