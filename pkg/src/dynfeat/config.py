"""Run configuration: every tunable of the pipeline in one JSON document."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import ConfigError
from .evaluation import DEFAULT_MAX_DT
from .flow import BoundaryParams
from .segmentation import DEFAULT_MOVABLE_CLASSES
from .tracking import MIN_STATIC_FEATURES, ConsistencyParams, RobustParams


class EvaluationParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    # None means one second of frames at the trajectory's frame rate
    delta: Optional[int] = Field(None, ge=1)
    max_dt: float = Field(DEFAULT_MAX_DT, gt=0)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    boundary: BoundaryParams = BoundaryParams()
    robust: RobustParams = RobustParams()
    consistency: ConsistencyParams = ConsistencyParams()
    movable_classes: tuple[str, ...] = DEFAULT_MOVABLE_CLASSES
    iou_min: float = Field(0.5, gt=0, le=1)
    overlap_min: float = Field(0.3, gt=0, le=1)
    min_region_area: int = Field(64, ge=1)
    min_static_features: int = Field(MIN_STATIC_FEATURES, ge=3)
    evaluation: EvaluationParams = EvaluationParams()
    disable_classification: bool = False
    disable_consistency_check: bool = False


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(data)


def parse_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def dump_config(config: RunConfig, path):
    Path(path).write_text(config.model_dump_json(indent=2) + "\n")
