"""Multi-reference patch matching and texture-transfer super-resolution.

The pipeline matches each position of a low-resolution input against
patch libraries drawn from several reference images, working at the
coarsest scale of a fixed convolutional feature pyramid, then pastes
the corresponding high-resolution reference patches into a bicubic
upscale, blended by a confidence weight map.  A streaming hierarchy
keeps only one reference part in memory at a time; an exhaustive
brute-force scanner doubles as the correctness oracle.
"""

from .config import RunConfig, load_config, parse_config_text
from .errors import (
    CapExceededError,
    ConfigError,
    DivisibilityError,
    FormatError,
    NoCandidateError,
    RefsrError,
    ShapeError,
    SizeError,
)
from .features import (
    Extractor,
    ExtractorConfig,
    FeaturePyramid,
    build_extractor,
    pyramid_from_matching,
)
from .imageio import (
    load_tensor,
    read_png,
    resample_bilinear,
    resize_bicubic,
    rgb_to_y,
    save_tensor,
    write_png,
)
from .matching import (
    MatchField,
    MatchParams,
    SwapOutput,
    match_hierarchical,
    similarity_map,
    verify_provenance,
)
from .memledger import MemoryLedger
from .metrics import (
    gram,
    l1_loss,
    perceptual_loss,
    psnr,
    psnr_y,
    ssim,
    ssim_y,
    texture_loss,
    texture_loss_grad,
)
from .oracle import match_oracle
from .partition import PartitionSpec, auto_nc
from .synthesis import (
    MultiScaleSwap,
    SynthesisConfig,
    assemble_swaps,
    propagate_field,
    synthesize,
)

__version__ = "0.1.0"

__all__ = [
    "CapExceededError",
    "ConfigError",
    "DivisibilityError",
    "Extractor",
    "ExtractorConfig",
    "FeaturePyramid",
    "FormatError",
    "MatchField",
    "MatchParams",
    "MemoryLedger",
    "MultiScaleSwap",
    "NoCandidateError",
    "PartitionSpec",
    "RefsrError",
    "RunConfig",
    "ShapeError",
    "SizeError",
    "SwapOutput",
    "SynthesisConfig",
    "assemble_swaps",
    "auto_nc",
    "build_extractor",
    "gram",
    "l1_loss",
    "load_config",
    "load_tensor",
    "match_hierarchical",
    "match_oracle",
    "parse_config_text",
    "perceptual_loss",
    "propagate_field",
    "psnr",
    "psnr_y",
    "pyramid_from_matching",
    "read_png",
    "resample_bilinear",
    "resize_bicubic",
    "rgb_to_y",
    "save_tensor",
    "similarity_map",
    "ssim",
    "ssim_y",
    "synthesize",
    "texture_loss",
    "texture_loss_grad",
    "verify_provenance",
    "write_png",
]
