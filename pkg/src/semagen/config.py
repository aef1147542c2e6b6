"""Configuration objects and the flat key=value config file format.

The on-disk format is one `key=value` pair per line, with `#` comments and
blank lines ignored. Keys mirror the hyperparameter names of the three model
tables (autoencoder, latent prior, layout prior); prior keys carry a
``prior_`` prefix and layout-prior keys a ``layout_`` prefix. Unknown keys
are errors.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .errors import ConfigError

# Spatial loss terms of the quantizer are averaged over grid positions (each
# term is the full squared L2 norm of one position's residual). Recorded in
# every config snapshot so checkpoints are self-describing.
VQ_LOSS_REDUCTION = "mean"

# Object vocabulary of the synthetic dataset: 3 shapes x 4 colors, plus
# background class 0.
NUM_SHAPES = 3
NUM_COLORS = 4
NUM_OBJECT_CLASSES = NUM_SHAPES * NUM_COLORS
NUM_LAYOUT_CLASSES = NUM_OBJECT_CLASSES + 1


@dataclass
class BackboneConfig:
    """Shape and capacity of the two-path convolutional encoder/decoder."""

    image_size: int = 32
    channels: int = 3
    hidden_dim: int = 128
    residual_dim: int = 64
    residual_blocks: int = 2
    downsample_factor: int = 4
    attention_heads: int = 1
    attention_dim: int = 16

    @property
    def latent_size(self) -> int:
        return self.image_size // self.downsample_factor

    def validate(self) -> None:
        if self.image_size % self.downsample_factor != 0:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by "
                f"downsample_factor {self.downsample_factor}"
            )
        f = self.downsample_factor
        if f < 2 or (f & (f - 1)) != 0:
            raise ConfigError(f"downsample_factor must be a power of 2 >= 2, got {f}")
        if self.hidden_dim < self.downsample_factor:
            raise ConfigError("hidden_dim too small for the strided conv stack")


@dataclass
class QuantizerConfig:
    """Codebook geometry and commitment weight (applied by the trainer)."""

    codebook_num: int = 256   # entries per codebook (K)
    codebook_size: int = 64   # prototype-vector dimension (D)
    commitment: float = 0.25  # beta

    def validate(self) -> None:
        if self.codebook_num < 2:
            raise ConfigError("codebook_num must be >= 2")
        if self.codebook_size < 1:
            raise ConfigError("codebook_size must be >= 1")
        if self.commitment <= 0:
            raise ConfigError("commitment must be > 0")


@dataclass
class PriorConfig:
    """Capacity of one causal autoregressive prior.

    The same model class serves both the latent-code prior (conditioned on a
    layout map) and the smaller unconditional layout prior. ``condition_classes``
    is 0 for an unconditional model; a conditional model reserves one extra
    embedding row as the learned null-condition class.
    """

    grid_height: int
    grid_width: int
    vocab_size: int
    hidden_dim: int = 128
    residual_dim: int = 128
    residual_blocks: int = 3
    conditional_residual_blocks: int = 0
    conditional_residual_dim: int = 0
    condition_embedding_dim: int = 0
    condition_classes: int = 0
    attention_dim: int = 64
    attention_heads: int = 8
    dropout: float = 0.1

    def validate(self) -> None:
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be >= 2")
        if self.grid_height < 1 or self.grid_width < 1:
            raise ConfigError("grid dimensions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.attention_dim % self.attention_heads != 0:
            raise ConfigError("attention_dim must be divisible by attention_heads")
        if self.condition_classes > 0 and self.condition_embedding_dim <= 0:
            raise ConfigError("conditional model needs condition_embedding_dim > 0")


@dataclass
class OptimizerConfig:
    """Adam settings and LR schedule for one training phase."""

    learning_rate: float = 1e-3
    scheduler: str = "linear"  # "linear" or "cyclical"
    batch_size: int = 32
    iterations: int = 0        # step-budget phases (autoencoder)
    epochs: int = 0            # epoch-budget phases (priors)
    cycle_steps: int = 2000    # triangular period of the cyclical schedule

    def validate(self) -> None:
        if self.scheduler not in ("linear", "cyclical"):
            raise ConfigError(f"unknown scheduler {self.scheduler!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.cycle_steps < 2:
            raise ConfigError("cycle_steps must be >= 2")


@dataclass
class DataConfig:
    """Synthetic multi-object scene generator settings."""

    num_scenes: int = 10000
    image_size: int = 32
    min_objects: int = 1
    max_objects: int = 3
    min_size: int = 8
    max_size: int = 14
    constraint_mode: bool = False
    corner_margin: int = 4
    box_annotations: bool = False
    val_fraction: float = 0.1

    def validate(self) -> None:
        if not 1 <= self.min_objects <= self.max_objects:
            raise ConfigError("object count range invalid")
        if not 2 <= self.min_size <= self.max_size:
            raise ConfigError("object size range invalid")
        if self.max_size >= self.image_size:
            raise ConfigError("object size must be smaller than the image")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")


@dataclass
class ModelConfig:
    """Everything needed to reproduce one full training pipeline."""

    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    quantizer: QuantizerConfig = field(default_factory=QuantizerConfig)
    latent_prior: PriorConfig = None  # type: ignore[assignment]
    layout_prior: PriorConfig = None  # type: ignore[assignment]
    vqvae_opt: OptimizerConfig = field(default_factory=OptimizerConfig)
    prior_opt: OptimizerConfig = field(
        default_factory=lambda: OptimizerConfig(
            learning_rate=3e-4, scheduler="cyclical", batch_size=32, epochs=5
        )
    )
    layout_opt: OptimizerConfig = field(
        default_factory=lambda: OptimizerConfig(
            learning_rate=3e-4, scheduler="cyclical", batch_size=64, epochs=20
        )
    )
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0
    codebook_restart_interval: int = 250
    codebook_restart_threshold: float = 0.5

    def __post_init__(self):
        if self.latent_prior is None:
            self.latent_prior = _derived_latent_prior(self)
        if self.layout_prior is None:
            self.layout_prior = _derived_layout_prior(self)

    def validate(self) -> None:
        self.backbone.validate()
        self.quantizer.validate()
        self.latent_prior.validate()
        self.layout_prior.validate()
        self.vqvae_opt.validate()
        self.prior_opt.validate()
        self.layout_opt.validate()
        self.data.validate()
        if self.data.image_size != self.backbone.image_size:
            raise ConfigError("data image_size and backbone image_size differ")
        h = self.backbone.latent_size
        if (self.latent_prior.grid_height, self.latent_prior.grid_width) != (2 * h, h):
            raise ConfigError("latent prior grid must be 2H x W of the latent grid")
        if self.latent_prior.vocab_size != self.quantizer.codebook_num:
            raise ConfigError("latent prior vocab must equal codebook_num")

    @property
    def num_classes(self) -> int:
        return NUM_LAYOUT_CLASSES


def _derived_latent_prior(cfg: ModelConfig) -> PriorConfig:
    h = cfg.backbone.latent_size
    return PriorConfig(
        grid_height=2 * h,
        grid_width=h,
        vocab_size=cfg.quantizer.codebook_num,
        hidden_dim=96,
        residual_dim=96,
        residual_blocks=3,
        conditional_residual_blocks=2,
        conditional_residual_dim=64,
        condition_embedding_dim=64,
        condition_classes=NUM_LAYOUT_CLASSES,
        attention_dim=64,
        attention_heads=8,
        dropout=0.1,
    )


def _derived_layout_prior(cfg: ModelConfig) -> PriorConfig:
    h = cfg.backbone.latent_size
    return PriorConfig(
        grid_height=h,
        grid_width=h,
        vocab_size=NUM_LAYOUT_CLASSES,
        hidden_dim=64,
        residual_dim=64,
        residual_blocks=2,
        conditional_residual_blocks=0,
        conditional_residual_dim=0,
        condition_embedding_dim=0,
        condition_classes=0,
        attention_dim=32,
        attention_heads=8,
        dropout=0.15,
    )


def desk_config(**overrides) -> ModelConfig:
    """Default desk-scale pipeline: 32x32 scenes, 8x8 latents, 256 codes of dim 64.

    Keyword overrides are applied through the flat config keys, e.g.
    ``desk_config(iterations=500, seed=3)``.
    """
    cfg = ModelConfig()
    cfg.vqvae_opt.iterations = 3000
    if overrides:
        text = format_config(cfg)
        extra = "\n".join(f"{k}={_format_value(v)}" for k, v in overrides.items())
        cfg = parse_config_text(text + "\n" + extra)
    cfg.validate()
    return cfg


def tiny_config(**overrides) -> ModelConfig:
    """Miniature pipeline (8x8 images, 4x4 latents) for tests and demos."""
    base = dict(
        image_size=8, latent_size=4, hidden_dim=16, residual_dim=8,
        residual_blocks=1, attention_dim=8, attention_heads=1,
        codebook_num=8, codebook_size=4, batch_size=8, iterations=50,
        prior_hidden_dim=32, prior_residual_dim=16, prior_residual_blocks=2,
        prior_conditional_residual_blocks=1, prior_conditional_residual_dim=8,
        prior_condition_dim=8, prior_attention_dim=16, prior_attention_heads=2,
        prior_batch_size=8, prior_epochs=2,
        layout_hidden_dim=16, layout_residual_dim=8, layout_residual_blocks=1,
        layout_attention_dim=8, layout_attention_heads=2,
        layout_batch_size=8, layout_epochs=2,
        data_scenes=32, data_min_size=2, data_max_size=5, data_corner_margin=1,
    )
    base.update(overrides)
    return desk_config(**base)


# --- flat key=value serialization ------------------------------------------

# key -> (section attribute, field name). Section "" means ModelConfig itself.
_KEY_MAP: dict[str, tuple[str, str]] = {
    "seed": ("", "seed"),
    "codebook_restart_interval": ("", "codebook_restart_interval"),
    "codebook_restart_threshold": ("", "codebook_restart_threshold"),
    # autoencoder table
    "image_size": ("backbone", "image_size"),
    "channels": ("backbone", "channels"),
    "hidden_dim": ("backbone", "hidden_dim"),
    "residual_dim": ("backbone", "residual_dim"),
    "residual_blocks": ("backbone", "residual_blocks"),
    "attention_heads": ("backbone", "attention_heads"),
    "attention_dim": ("backbone", "attention_dim"),
    "codebook_num": ("quantizer", "codebook_num"),
    "codebook_size": ("quantizer", "codebook_size"),
    "commitment": ("quantizer", "commitment"),
    "batch_size": ("vqvae_opt", "batch_size"),
    "learning_rate": ("vqvae_opt", "learning_rate"),
    "scheduler": ("vqvae_opt", "scheduler"),
    "iterations": ("vqvae_opt", "iterations"),
    # latent prior table
    "prior_hidden_dim": ("latent_prior", "hidden_dim"),
    "prior_residual_dim": ("latent_prior", "residual_dim"),
    "prior_residual_blocks": ("latent_prior", "residual_blocks"),
    "prior_conditional_residual_blocks": ("latent_prior", "conditional_residual_blocks"),
    "prior_conditional_residual_dim": ("latent_prior", "conditional_residual_dim"),
    "prior_condition_dim": ("latent_prior", "condition_embedding_dim"),
    "prior_attention_dim": ("latent_prior", "attention_dim"),
    "prior_attention_heads": ("latent_prior", "attention_heads"),
    "prior_dropout": ("latent_prior", "dropout"),
    "prior_batch_size": ("prior_opt", "batch_size"),
    "prior_learning_rate": ("prior_opt", "learning_rate"),
    "prior_scheduler": ("prior_opt", "scheduler"),
    "prior_epochs": ("prior_opt", "epochs"),
    "prior_cycle_steps": ("prior_opt", "cycle_steps"),
    # layout prior table
    "layout_hidden_dim": ("layout_prior", "hidden_dim"),
    "layout_residual_dim": ("layout_prior", "residual_dim"),
    "layout_residual_blocks": ("layout_prior", "residual_blocks"),
    "layout_attention_dim": ("layout_prior", "attention_dim"),
    "layout_attention_heads": ("layout_prior", "attention_heads"),
    "layout_dropout": ("layout_prior", "dropout"),
    "layout_batch_size": ("layout_opt", "batch_size"),
    "layout_learning_rate": ("layout_opt", "learning_rate"),
    "layout_scheduler": ("layout_opt", "scheduler"),
    "layout_epochs": ("layout_opt", "epochs"),
    "layout_cycle_steps": ("layout_opt", "cycle_steps"),
    # dataset
    "data_scenes": ("data", "num_scenes"),
    "data_min_objects": ("data", "min_objects"),
    "data_max_objects": ("data", "max_objects"),
    "data_min_size": ("data", "min_size"),
    "data_max_size": ("data", "max_size"),
    "data_constraint_mode": ("data", "constraint_mode"),
    "data_corner_margin": ("data", "corner_margin"),
    "data_box_annotations": ("data", "box_annotations"),
    "data_val_fraction": ("data", "val_fraction"),
}

# Derived/audit keys accepted on input but not freely settable.
_LATENT_SIZE_KEY = "latent_size"
_AUDIT_KEY = "vq_loss_reduction"


def _field_type(section: object, name: str):
    for f in dataclasses.fields(section):
        if f.name == name:
            return f.type
    raise KeyError(name)


def _parse_value(key: str, raw: str, typ: str):
    raw = raw.strip()
    try:
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        if typ == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def parse_config_text(text: str) -> ModelConfig:
    """Parse the flat key=value format into a ModelConfig. Unknown keys raise."""
    cfg = ModelConfig()
    latent_size = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key == _AUDIT_KEY:
            if raw != VQ_LOSS_REDUCTION:
                raise ConfigError(
                    f"{_AUDIT_KEY} is fixed to {VQ_LOSS_REDUCTION!r}, got {raw!r}"
                )
            continue
        if key == _LATENT_SIZE_KEY:
            latent_size = _parse_value(key, raw, "int")
            continue
        if key not in _KEY_MAP:
            raise ConfigError(f"unknown config key {key!r}")
        section_name, field_name = _KEY_MAP[key]
        section = cfg if section_name == "" else getattr(cfg, section_name)
        value = _parse_value(key, raw, _field_type(section, field_name))
        setattr(section, field_name, value)
    if latent_size is not None:
        if cfg.backbone.image_size % latent_size != 0:
            raise ConfigError(
                f"latent_size {latent_size} does not divide image_size "
                f"{cfg.backbone.image_size}"
            )
        cfg.backbone.downsample_factor = cfg.backbone.image_size // latent_size
    cfg.data.image_size = cfg.backbone.image_size
    # Re-derive prior grids/vocabs from the (possibly updated) geometry.
    for name, derive in (("latent_prior", _derived_latent_prior),
                         ("layout_prior", _derived_layout_prior)):
        derived = derive(cfg)
        prior = getattr(cfg, name)
        prior.grid_height = derived.grid_height
        prior.grid_width = derived.grid_width
        prior.vocab_size = derived.vocab_size
        prior.condition_classes = derived.condition_classes
    cfg.validate()
    return cfg


def parse_config_file(path) -> ModelConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def format_config(cfg: ModelConfig) -> str:
    """Render a ModelConfig in the flat file format (stable key order)."""
    lines = [f"{_AUDIT_KEY}={VQ_LOSS_REDUCTION}",
             f"{_LATENT_SIZE_KEY}={cfg.backbone.latent_size}"]
    for key, (section_name, field_name) in _KEY_MAP.items():
        section = cfg if section_name == "" else getattr(cfg, section_name)
        lines.append(f"{key}={_format_value(getattr(section, field_name))}")
    return "\n".join(lines) + "\n"
