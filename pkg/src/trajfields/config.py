"""Run configuration: one YAML/JSON file, validated before any work starts."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .fields import FieldParams
from .model import ModelConfig
from .training import TrainConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SceneConfig(_Strict):
    path: str
    format: Literal["ethucy", "sdd"] = "ethucy"
    extent: Union[Literal["auto"], tuple[float, float]] = "auto"
    origin: Optional[tuple[float, float]] = None
    fps: Optional[float] = None
    semantic_dir: Optional[str] = None
    units: Literal["ethucy", "sdd", "pixels"] = "ethucy"


class DataConfig(_Strict):
    scenes: dict[str, SceneConfig] = Field(default_factory=dict)
    protocol: Literal["leave-one-out", "sdd-standard"] = "leave-one-out"
    test_scene: Optional[str] = None
    train_scenes: list[str] = Field(default_factory=list)
    test_scenes: list[str] = Field(default_factory=list)
    T_obs: int = Field(8, ge=1)
    T_pred: int = Field(12, ge=1)
    stride: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _check_split(self):
        known = set(self.scenes)
        named = set(self.train_scenes) | set(self.test_scenes)
        if self.test_scene:
            named.add(self.test_scene)
        unknown = named - known
        if unknown:
            raise ValueError(f"split names unknown scenes: {sorted(unknown)}")
        return self


class FieldSection(_Strict):
    d0: int = Field(3, ge=0)
    sigma: float = Field(4.0, gt=0)
    p_floor: float = Field(0.1, ge=0, lt=1)
    truncate: float = Field(6.0, gt=0)
    nms_window: int = Field(7, ge=3)
    threshold_ratio: float = Field(0.3, gt=0)
    assoc_p_thresh: float = Field(0.5, ge=0, lt=1)
    refine: bool = True

    def params(self) -> FieldParams:
        return FieldParams(**self.model_dump())


class ModelSection(_Strict):
    variant: Literal["none", "I1", "I2", "I3", "I4"] = "I4"
    enc_channels: tuple[int, int] = (16, 32)
    hidden: int = Field(32, ge=1)
    dec_hidden: int = Field(32, ge=1)
    sem_channels: int = Field(16, ge=1)
    kernel_size: int = Field(3, ge=1)
    norm_groups: int = Field(4, ge=1)
    inter_channels: Optional[int] = None
    shared_theta: bool = False
    nonlocal_impl: Literal["sorted", "dense"] = "sorted"
    head_prior: Optional[float] = Field(0.01, gt=0, lt=1)


class TrainSection(_Strict):
    lr: float = Field(5e-5, gt=0)
    batch: int = Field(20, ge=1)
    epochs: int = Field(100, ge=1)
    decay_every: int = Field(30, ge=1)
    decay_factor: float = Field(0.5, gt=0)
    w_loc: float = Field(1.0, ge=0)
    w_assoc: float = Field(1.0, ge=0)
    grad_clip: float = Field(5.0, gt=0)
    teacher_forcing: bool = True
    augment: bool = True
    checkpoint_every: int = Field(10, ge=0)


class RunConfig(_Strict):
    data: DataConfig = Field(default_factory=DataConfig)
    model: ModelSection = Field(default_factory=ModelSection)
    train: TrainSection = Field(default_factory=TrainSection)
    fields: FieldSection = Field(default_factory=FieldSection)
    output_dir: str = "runs"
    seed: int = 0
    base_dir: Optional[str] = Field(None, exclude=True)

    def model_config_obj(self) -> ModelConfig:
        return ModelConfig(T_obs=self.data.T_obs, T_pred=self.data.T_pred, **self.model.model_dump())

    def train_config_obj(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, **self.train.model_dump())

    def resolve(self, p: str | None) -> Path | None:
        if p is None:
            return None
        path = Path(p)
        if not path.is_absolute() and self.base_dir:
            path = Path(self.base_dir) / path
        return path


def load_config(path) -> RunConfig:
    """Parse and validate a run config; unknown keys raise."""
    path = Path(path)
    text = path.read_text()
    raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    cfg = RunConfig.model_validate(raw or {})
    cfg.base_dir = str(path.resolve().parent)
    return cfg
