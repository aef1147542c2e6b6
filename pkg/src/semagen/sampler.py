"""End-to-end generation: layout grid -> conditioned code grid -> image.

Full mode draws a layout from the layout prior, conditions the latent prior
on it, splits the sampled code grid back into the two codebooks' index
grids, and decodes. The emitted annotation is the sampled layout upsampled
to image resolution. Layout-given mode skips the first stage; unconditional
mode runs the latent prior on its learned null condition (the annotation is
then all background, since no layout exists).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import torch
from scipy import ndimage

from .backbone import TwinVQVAE
from .checkpoint import Checkpoint, unpack_module
from .config import ModelConfig, parse_config_text
from .errors import PrerequisiteError
from .priors import AutoregressivePrior
from .shapeworld import (SceneDataset, downsample_layout, load_dataset,
                         save_dataset, upsample_layout)

MODES = ("full", "layout_given", "unconditional")


def concat_codes(indices_1: torch.Tensor, indices_2: torch.Tensor) -> torch.Tensor:
    """Stack path-1 indices above path-2 along the height axis."""
    if indices_1.shape != indices_2.shape:
        raise ValueError("code grids must share a shape")
    return torch.cat([indices_1, indices_2], dim=-2)


def split_code(grid: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Invert concat_codes: top half is path 1, bottom half path 2."""
    height = grid.shape[-2]
    if height % 2:
        raise ValueError(f"cannot split odd height {height}")
    return grid[..., : height // 2, :], grid[..., height // 2:, :]


@dataclass
class ConstraintReport:
    passed: bool
    reasons: list[str]


def check_constraint(layout: np.ndarray, corner_margin: int = 4) -> ConstraintReport:
    """Geometric coherency rule: one object covers the image center and the
    corner squares of side `corner_margin` hold no object pixels."""
    layout = np.asarray(layout)
    h, w = layout.shape
    reasons = []
    occupied = layout > 0
    labels, _ = ndimage.label(occupied)
    if labels[h // 2, w // 2] == 0:
        reasons.append("no object at the image center")
    m = corner_margin
    corners = [occupied[:m, :m], occupied[:m, w - m:],
               occupied[h - m:, :m], occupied[h - m:, w - m:]]
    if any(c.any() for c in corners):
        reasons.append(f"object pixels inside a {m}px corner margin")
    return ConstraintReport(passed=not reasons, reasons=reasons)


def _derive_seed(seed: int, tag: str) -> int:
    digest = hashlib.blake2b(f"{seed}:{tag}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") & (2 ** 63 - 1)


def _config_of(ckpt: Checkpoint) -> ModelConfig:
    return parse_config_text(ckpt.config_text)


class GenerationPipeline:
    """Holds the trained phases and produces (image, layout) pairs.

    All three checkpoints must stem from the same configuration; the layout
    prior may be omitted when only layout-given or unconditional generation
    is needed.
    """

    def __init__(self, vqvae: Checkpoint, latent_prior: Checkpoint,
                 layout_prior: Checkpoint | None = None):
        if vqvae.phase != "vqvae":
            raise PrerequisiteError(f"expected a vqvae checkpoint, got {vqvae.phase!r}")
        if latent_prior.phase != "latent_prior":
            raise PrerequisiteError(
                f"expected a latent_prior checkpoint, got {latent_prior.phase!r}")
        snapshots = {vqvae.config_text, latent_prior.config_text}
        if layout_prior is not None:
            if layout_prior.phase != "layout_prior":
                raise PrerequisiteError(
                    f"expected a layout_prior checkpoint, got {layout_prior.phase!r}")
            snapshots.add(layout_prior.config_text)
        if len(snapshots) != 1:
            raise PrerequisiteError(
                "checkpoints were built from different configurations")

        self.cfg = _config_of(vqvae)
        self.autoencoder = TwinVQVAE(self.cfg.backbone,
                                     self.cfg.quantizer.codebook_num,
                                     self.cfg.quantizer.codebook_size)
        unpack_module("model", self.autoencoder, vqvae.tensors)
        self.autoencoder.eval()
        self.latent_prior = AutoregressivePrior(self.cfg.latent_prior)
        unpack_module("model", self.latent_prior, latent_prior.tensors)
        self.latent_prior.eval()
        if layout_prior is not None:
            self.layout_prior = AutoregressivePrior(self.cfg.layout_prior)
            unpack_module("model", self.layout_prior, layout_prior.tensors)
            self.layout_prior.eval()
        else:
            self.layout_prior = None

    @property
    def factor(self) -> int:
        return self.cfg.backbone.downsample_factor

    def generate(self, n: int, seed: int = 0, mode: str = "full",
                 layouts: np.ndarray | None = None,
                 temperature: float = 1.0
                 ) -> list[tuple[np.ndarray, np.ndarray]]:
        """Produce n (image, layout) pairs.

        Images are float32 (H, W, 3) in [-1, 1]; layouts are int64 (H, W) at
        image resolution. Identical (seed, mode, inputs) give identical
        output. In layout-given mode `layouts` may be one map (broadcast to
        n) or n maps, at image or latent resolution.
        """
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        if mode == "full":
            if self.layout_prior is None:
                raise PrerequisiteError("full mode needs a layout_prior checkpoint")
            latent_layouts = self.layout_prior.sample(
                n, temperature=temperature, seed=_derive_seed(seed, "layout"))
            condition = latent_layouts
        elif mode == "layout_given":
            latent_layouts = self._normalize_layouts(layouts, n)
            condition = latent_layouts
        else:
            latent_layouts = None
            condition = None

        codes = self.latent_prior.sample(
            n, condition=condition, temperature=temperature,
            seed=_derive_seed(seed, "latent"))
        idx1, idx2 = split_code(codes)
        with torch.no_grad():
            images = self.autoencoder.decode_indices(idx1, idx2)
        images_np = images.numpy().transpose(0, 2, 3, 1).astype(np.float32)

        size = self.cfg.backbone.image_size
        if latent_layouts is None:
            annotations = np.zeros((n, size, size), dtype=np.int64)
        else:
            annotations = upsample_layout(latent_layouts.numpy(), self.factor)
        return [(images_np[i], annotations[i]) for i in range(n)]

    def _normalize_layouts(self, layouts, n: int) -> torch.Tensor:
        if layouts is None:
            raise ValueError("layout_given mode requires layouts")
        arr = np.asarray(layouts)
        if arr.ndim == 2:
            arr = arr[None]
        latent = self.cfg.backbone.latent_size
        if arr.shape[-1] == self.cfg.backbone.image_size:
            arr = downsample_layout(arr, self.factor)
        elif arr.shape[-1] != latent:
            raise ValueError(
                f"layouts must be at image ({self.cfg.backbone.image_size}) or "
                f"latent ({latent}) resolution, got {arr.shape[-1]}")
        if arr.shape[0] == 1 and n > 1:
            arr = np.repeat(arr, n, axis=0)
        if arr.shape[0] != n:
            raise ValueError(f"got {arr.shape[0]} layouts for n={n}")
        if arr.max() >= self.cfg.num_classes or arr.min() < 0:
            raise ValueError("layout class outside the model's class range")
        return torch.from_numpy(arr.astype(np.int64))

    def reconstruct(self, images: np.ndarray) -> np.ndarray:
        """Encode-quantize-decode a batch of (N, 3, H, W) images."""
        with torch.no_grad():
            out = self.autoencoder(torch.from_numpy(images))
        return out.reconstruction.numpy()


def save_generated(pairs: list[tuple[np.ndarray, np.ndarray]],
                   out_dir: str) -> None:
    """Write generated pairs in the dataset directory format."""
    images = np.stack([p[0].transpose(2, 0, 1) for p in pairs])
    layouts = np.stack([p[1] for p in pairs])
    dataset = SceneDataset(images=images.astype(np.float32),
                           layouts=layouts.astype(np.int64),
                           splits=["generated"] * len(pairs))
    save_dataset(dataset, out_dir)


def load_generated(in_dir: str) -> list[tuple[np.ndarray, np.ndarray]]:
    ds = load_dataset(in_dir)
    return [(ds.images[i].transpose(1, 2, 0), ds.layouts[i])
            for i in range(len(ds))]
