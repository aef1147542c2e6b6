"""semagen: multi-object image generation with built-in semantic annotations.

A twin-codebook vector-quantized autoencoder compresses images into two
discrete code grids; two causal autoregressive priors — one over layout
class maps, one over concatenated code grids conditioned on a layout —
generate new (image, annotation) pairs end to end. An evaluation kit scores
the generations by how well a small segmentation network trained on them
performs on real data.
"""

from .backbone import (Decoder, EncodedPair, EncoderPath, SelfAttention2d,
                       TwinVQVAE)
from .checkpoint import Checkpoint
from .config import (BackboneConfig, DataConfig, ModelConfig, OptimizerConfig,
                     PriorConfig, QuantizerConfig, desk_config, format_config,
                     parse_config_file, parse_config_text, tiny_config)
from .errors import ConfigError, PrerequisiteError
from .evalkit import (SegConfig, UNet, f1_protocol, layout_divergence,
                      macro_f1, train_segmenter, violation_rate)
from .priors import AutoregressivePrior
from .quantizer import (Codebook, QuantizationResult, UsageTracker, quantize,
                        straight_through)
from .sampler import (GenerationPipeline, check_constraint, concat_codes,
                      split_code)
from .shapeworld import (SceneDataset, build_dataset, downsample_layout,
                         generate_scene, load_dataset, save_dataset,
                         upsample_layout)
from .trainer import (CodeCorpus, TrainResult, extract_codes,
                      train_latent_prior, train_layout_prior, train_vqvae)
from .verify import run_all as run_verification

__version__ = "0.1.0"

__all__ = [
    "AutoregressivePrior", "BackboneConfig", "Checkpoint", "Codebook",
    "CodeCorpus", "ConfigError", "DataConfig", "Decoder", "EncodedPair",
    "EncoderPath", "GenerationPipeline", "ModelConfig", "OptimizerConfig",
    "PrerequisiteError", "PriorConfig", "QuantizationResult", "QuantizerConfig",
    "SceneDataset", "SegConfig", "SelfAttention2d", "TrainResult", "TwinVQVAE",
    "UNet", "UsageTracker", "build_dataset", "check_constraint", "concat_codes",
    "desk_config", "downsample_layout", "extract_codes", "f1_protocol",
    "format_config", "generate_scene", "layout_divergence", "load_dataset",
    "macro_f1", "parse_config_file", "parse_config_text", "quantize",
    "run_verification", "save_dataset", "split_code", "straight_through",
    "tiny_config", "train_latent_prior", "train_layout_prior",
    "train_segmenter", "train_vqvae", "upsample_layout", "violation_rate",
]
