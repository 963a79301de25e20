"""Run configuration: one validated document driving train/predict/evaluate."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .fusion_net import ConfigurationError, FusionConfig, TemporalBranchConfig, TextureBranchConfig
from .temporal_prep import FilterConfig
from .training import TrainConfig

CONFIG_ENV_VAR = "TTFUSION_CONFIG"

Strategy = Literal["filter", "monthly_average", "metadata", "augment", "modality_dropout"]


class RunConfigError(ValueError):
    """All validation problems of a run configuration, one per line."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid run configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FilterSection(_Section):
    prob_threshold: int = Field(50, ge=0, le=100)
    coverage_threshold: float = Field(0.60, ge=0.0, le=1.0)


class OptimSection(_Section):
    lr: float = Field(0.001, ge=0.0)
    momentum: float = Field(0.9, ge=0.0, le=1.0)
    plateau_patience: int = Field(10, gt=0)
    plateau_factor: float = Field(0.5, gt=0.0, lt=1.0)


class TrainSection(_Section):
    max_epochs: int = Field(100, gt=0)
    batch_size: int = Field(10, gt=0)
    seed: int = 2022
    early_stop_patience: int = Field(30, gt=0)
    early_stop_min_delta: float = Field(0.0, ge=0.0)
    modality_dropout_threshold: float = Field(0.5, ge=0.0, le=1.0)
    augmentation_prob: float = Field(0.5, ge=0.0, le=1.0)
    train_domains: int = Field(32, gt=0)
    val_domains: int = Field(8, gt=0)
    track_train_miou: bool = False
    stop_at_train_miou: float | None = Field(None, gt=0.0, le=1.0)


class TextureSection(_Section):
    backbone: Literal["resnet34-like", "small"] = "resnet34-like"
    encoder_stage_channels: list[int] | None = None
    decoder_channels: list[int] | None = None
    full_res_block: bool | None = None
    pretrained_weights: str | None = None


class TemporalSection(_Section):
    encoder_widths: list[int] = [32, 32, 64, 128]
    decoder_widths: list[int] = [32, 32, 64, 128]
    attention_heads: int = Field(16, gt=0)
    d_model: int = Field(256, gt=0)
    d_k: int = Field(4, gt=0)
    head_hidden: int = Field(32, gt=0)
    dropout: float = Field(0.2, ge=0.0, lt=1.0)


class FusionSection(_Section):
    sat_superpatch_size: int = Field(40, gt=0, le=110)
    footprint_px: int = Field(10, gt=0)
    use_cropped: bool = True
    use_collapsed: bool = True
    mlp_hidden: list[int] | None = None
    mlp_dropout: float = Field(0.1, ge=0.0, lt=1.0)
    cropped_kernel: int = Field(1, gt=0)


class ModelSection(_Section):
    unet_only: bool = False
    texture: TextureSection = TextureSection()
    temporal: TemporalSection = TemporalSection()
    fusion: FusionSection = FusionSection()


class RunConfig(_Section):
    dataset: Path
    out_dir: Path = Path("runs/default")
    strategies: list[Strategy] = []
    filter: FilterSection = FilterSection()
    optim: OptimSection = OptimSection()
    train: TrainSection = TrainSection()
    model: ModelSection = ModelSection()

    @model_validator(mode="after")
    def _check_components(self):
        # the dataclass constructors carry cross-field rules; run them all and report together
        problems = []
        for name, build in (("model.texture", self.texture_config), ("model.temporal", self.temporal_config),
                            ("model.fusion", self.fusion_config), ("train", self.train_config)):
            try:
                build()
            except (ConfigurationError, ValueError) as exc:
                problems.append(f"{name}: {exc}")
        if len(set(self.strategies)) != len(self.strategies):
            problems.append("strategies: duplicate entries")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    def texture_config(self) -> TextureBranchConfig:
        return TextureBranchConfig(**self.model.texture.model_dump())

    def temporal_config(self) -> TemporalBranchConfig | None:
        if self.model.unet_only:
            return None
        return TemporalBranchConfig(**self.model.temporal.model_dump())

    def fusion_config(self) -> FusionConfig:
        return FusionConfig(**self.model.fusion.model_dump())

    def filter_config(self) -> FilterConfig:
        return FilterConfig(**self.filter.model_dump())

    def train_config(self) -> TrainConfig:
        s = set(self.strategies)
        return TrainConfig(
            **self.optim.model_dump(),
            **self.train.model_dump(),
            use_filter="filter" in s,
            use_monthly_average="monthly_average" in s,
            use_metadata="metadata" in s,
            use_augmentation="augment" in s,
            use_modality_dropout="modality_dropout" in s,
            filter=self.filter_config(),
        )


def _format_errors(exc: ValidationError) -> list[str]:
    out = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        out.append(f"{loc}: {err['msg']}")
    return out


def parse_run_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise RunConfigError(_format_errors(exc)) from None


def load_run_config(path, overrides: dict | None = None) -> RunConfig:
    """Read a JSON run configuration; relative dataset/out_dir paths resolve against the file's directory."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise RunConfigError([f"cannot read {path}: {exc.strerror}"]) from None
    except json.JSONDecodeError as exc:
        raise RunConfigError([f"{path}: not valid JSON ({exc})"]) from None
    if not isinstance(data, dict):
        raise RunConfigError([f"{path}: top level must be an object"])
    for key in ("dataset", "out_dir"):
        if isinstance(data.get(key), str) and not Path(data[key]).is_absolute():
            data[key] = str(path.parent / data[key])
    for key, value in (overrides or {}).items():
        _set_dotted(data, key, value)
    return parse_run_config(data)


def _set_dotted(data: dict, key: str, value) -> None:
    parts = key.split(".")
    for p in parts[:-1]:
        data = data.setdefault(p, {})
    data[parts[-1]] = value
