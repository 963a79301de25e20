from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Literal

from ..data_model import N_CLASSES, N_SAT_BANDS, AERIAL_BANDS


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureMapSpec:
    channels: int
    height: int
    width: int


@dataclass
class TextureBranchConfig:
    backbone: Literal["resnet34-like", "small"] = "resnet34-like"
    encoder_stage_channels: list[int] | None = None
    decoder_channels: list[int] | None = None
    full_res_block: bool | None = None
    n_classes: int = N_CLASSES
    in_channels: int = len(AERIAL_BANDS)
    pretrained_weights: str | None = None

    def __post_init__(self):
        if self.backbone not in ("resnet34-like", "small"):
            raise ConfigurationError(f"unknown backbone {self.backbone!r}")
        if self.encoder_stage_channels is None:
            self.encoder_stage_channels = (
                [64, 64, 128, 256, 512] if self.backbone == "resnet34-like" else [16, 32, 48, 64]
            )
        if self.full_res_block is None:
            self.full_res_block = self.backbone == "resnet34-like"
        if self.decoder_channels is None:
            if self.backbone == "resnet34-like":
                self.decoder_channels = [256, 128, 64, 32, 16]
            else:
                dec = list(reversed(self.encoder_stage_channels[:-1]))
                if self.full_res_block:
                    dec.append(max(8, self.encoder_stage_channels[0] // 2))
                self.decoder_channels = dec
        self.encoder_stage_channels = list(self.encoder_stage_channels)
        self.decoder_channels = list(self.decoder_channels)
        n = len(self.encoder_stage_channels)
        if n < 2:
            raise ConfigurationError("texture branch needs at least 2 encoder stages")
        if self.backbone == "resnet34-like" and n != 5:
            raise ConfigurationError("resnet34-like backbone has exactly 5 encoder stages")
        if self.n_classes != N_CLASSES:
            raise ConfigurationError(f"n_classes must be {N_CLASSES}")
        expected = n - 1 + int(self.full_res_block)
        if len(self.decoder_channels) != expected:
            raise ConfigurationError(f"decoder_channels needs {expected} entries, got {len(self.decoder_channels)}")

    @property
    def n_stages(self) -> int:
        return len(self.encoder_stage_channels)

    def stage_specs(self, height: int, width: int) -> list[FeatureMapSpec]:
        """Encoder feature map shapes for an input of the given size."""
        specs = []
        for i, ch in enumerate(self.encoder_stage_channels):
            f = 2 ** (i + 1)
            specs.append(FeatureMapSpec(ch, height // f, width // f))
        return specs

    @property
    def input_multiple(self) -> int:
        return 2 ** self.n_stages


@dataclass
class TemporalBranchConfig:
    encoder_widths: list[int] = field(default_factory=lambda: [32, 32, 64, 128])
    decoder_widths: list[int] = field(default_factory=lambda: [32, 32, 64, 128])
    attention_heads: int = 16
    d_model: int = 256
    d_k: int = 4
    head_hidden: int = 32
    dropout: float = 0.2
    positional_period: float = 1000.0
    n_classes: int = N_CLASSES
    in_channels: int = N_SAT_BANDS

    def __post_init__(self):
        self.encoder_widths = list(self.encoder_widths)
        self.decoder_widths = list(self.decoder_widths)
        if not self.encoder_widths or not self.decoder_widths:
            raise ConfigurationError("encoder_widths and decoder_widths must be non-empty")
        if len(self.encoder_widths) != len(self.decoder_widths):
            raise ConfigurationError("encoder_widths and decoder_widths must have equal length")
        if self.encoder_widths[-1] != self.decoder_widths[-1]:
            raise ConfigurationError("last encoder width must equal last decoder width")
        if any(w % self.attention_heads for w in self.encoder_widths):
            raise ConfigurationError("every encoder width must be divisible by attention_heads")
        if self.d_model % self.attention_heads:
            raise ConfigurationError("d_model must be divisible by attention_heads")
        if self.n_classes != N_CLASSES:
            raise ConfigurationError(f"n_classes must be {N_CLASSES}")

    @property
    def embedding_channels(self) -> int:
        return self.decoder_widths[0]

    @property
    def input_multiple(self) -> int:
        return 2 ** (len(self.encoder_widths) - 1)


@dataclass
class FusionConfig:
    sat_superpatch_size: int = 40
    footprint_px: int = 10
    use_cropped: bool = True
    use_collapsed: bool = True
    mlp_hidden: list[int] | None = None
    mlp_dropout: float = 0.1
    cropped_kernel: int = 1

    def __post_init__(self):
        if self.footprint_px > self.sat_superpatch_size:
            raise ConfigurationError(
                f"footprint_px {self.footprint_px} exceeds sat_superpatch_size {self.sat_superpatch_size}"
            )
        if not (self.use_cropped or self.use_collapsed):
            raise ConfigurationError("at least one of use_cropped / use_collapsed must be enabled")
        if self.mlp_hidden is not None and len(self.mlp_hidden) != 2:
            raise ConfigurationError("mlp_hidden holds the two hidden widths of the 3-layer MLP")
        if self.cropped_kernel % 2 != 1:
            raise ConfigurationError("cropped_kernel must be odd")


def config_to_dict(cfg) -> dict:
    return asdict(cfg)
