from .config import (
    ConfigurationError,
    FeatureMapSpec,
    FusionConfig,
    TemporalBranchConfig,
    TextureBranchConfig,
)
from .fusion import (
    FusionCollapsed,
    FusionCropped,
    FusionModule,
    build_fusion_masks,
    crop_footprint,
    crop_interp_sat_logits,
    footprint_origin,
)
from .metadata import MetadataError, MetadataInjector, encode_metadata
from .model import UTT, load_checkpoint, normalize_aerial, normalize_sat, save_checkpoint
from .temporal import UTAE, EmptyTemporalAxisError
from .texture import FusionShapeError, TextureUNet

__all__ = [
    "ConfigurationError",
    "EmptyTemporalAxisError",
    "FeatureMapSpec",
    "FusionCollapsed",
    "FusionConfig",
    "FusionCropped",
    "FusionModule",
    "FusionShapeError",
    "MetadataError",
    "MetadataInjector",
    "TemporalBranchConfig",
    "TextureBranchConfig",
    "TextureUNet",
    "UTAE",
    "UTT",
    "build_fusion_masks",
    "crop_footprint",
    "crop_interp_sat_logits",
    "encode_metadata",
    "footprint_origin",
    "load_checkpoint",
    "normalize_aerial",
    "normalize_sat",
    "save_checkpoint",
]
