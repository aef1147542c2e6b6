"""Synthetic multi-object scenes with pixel-level semantic annotations.

Scenes hold 1-3 non-overlapping flat-colored shapes (square / circle /
triangle, four palette colors) on a light background. Every rendered image
is paired with a layout map: class 0 is background, classes 1..12 encode
shape x color. A constraint mode pins one object to the image center and
keeps all corners empty, which downstream coherency checks rely on.

Also home to the categorical resampling used to move layouts between image
and latent resolution: one-hot encode, bilinear resample each class channel,
argmax back (ties to the lowest class).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .config import DataConfig, NUM_COLORS, NUM_LAYOUT_CLASSES, NUM_SHAPES
from .errors import ConfigError

SHAPES = ("square", "circle", "triangle")

BACKGROUND_RGB = (235, 235, 235)
PALETTE = (
    (200, 40, 40),    # red
    (40, 170, 60),    # green
    (50, 90, 200),    # blue
    (230, 200, 50),   # yellow
)

_MANIFEST = "manifest.txt"


@dataclass
class SceneObject:
    shape: str
    color: int          # palette index, 0..3
    center: tuple[int, int]  # (row, col) in pixels
    size: int           # full extent in pixels (odd)

    @property
    def half(self) -> int:
        return self.size // 2

    @property
    def class_index(self) -> int:
        """1-based layout class: shape major, color minor."""
        return SHAPES.index(self.shape) * NUM_COLORS + self.color + 1

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        """Inclusive (y0, x0, y1, x1)."""
        cy, cx = self.center
        h = self.half
        return (cy - h, cx - h, cy + h, cx + h)


@dataclass
class Scene:
    objects: list[SceneObject]
    image_size: int


@dataclass
class SceneDataset:
    """In-memory dataset: float images in [-1, 1], integer layout maps."""

    images: np.ndarray            # (N, 3, H, W) float32 in [-1, 1]
    layouts: np.ndarray           # (N, H, W) int64
    splits: list[str]             # "train" / "val" per scene
    scenes: list[Scene] = field(default_factory=list)

    def __len__(self) -> int:
        return self.images.shape[0]

    def indices(self, split: str) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.splits) if s == split],
                        dtype=np.int64)

    def subset(self, idx) -> "SceneDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return SceneDataset(
            images=self.images[idx],
            layouts=self.layouts[idx],
            splits=[self.splits[i] for i in idx],
            scenes=[self.scenes[i] for i in idx] if self.scenes else [],
        )


def _shape_mask(obj: SceneObject, size: int) -> np.ndarray:
    """Boolean pixel mask of one object, no anti-aliasing."""
    cy, cx = obj.center
    h = obj.half
    yy, xx = np.mgrid[0:size, 0:size]
    dy, dx = yy - cy, xx - cx
    if obj.shape == "square":
        return (np.abs(dy) <= h) & (np.abs(dx) <= h)
    if obj.shape == "circle":
        return dy * dy + dx * dx <= h * h
    # triangle: apex at the top, width grows by half a pixel per row
    t = dy + h
    inside_rows = (t >= 0) & (t <= 2 * h)
    return inside_rows & (np.abs(dx) <= t // 2)


def _bbox_clear(bbox, others, gap: int = 1) -> bool:
    y0, x0, y1, x1 = bbox
    for oy0, ox0, oy1, ox1 in others:
        if not (y1 + gap < oy0 or oy1 + gap < y0 or
                x1 + gap < ox0 or ox1 + gap < x0):
            return False
    return True


def _bbox_hits_corners(bbox, size: int, margin: int) -> bool:
    y0, x0, y1, x1 = bbox
    top, left = y0 < margin, x0 < margin
    bottom, right = y1 > size - 1 - margin, x1 > size - 1 - margin
    return (top and left) or (top and right) or (bottom and left) or (bottom and right)


def make_scene(config: DataConfig, seed: int,
               constraint_mode: bool | None = None) -> Scene:
    """Sample object placements for one scene, deterministic per seed."""
    constraint = config.constraint_mode if constraint_mode is None else constraint_mode
    size = config.image_size
    half_lo, half_hi = max(1, config.min_size // 2), config.max_size // 2
    if 2 * half_hi + 1 > size - 2:
        raise ConfigError("max object size does not fit inside the image")

    rng = np.random.Generator(np.random.PCG64(seed))
    count = int(rng.integers(config.min_objects, config.max_objects + 1))
    objects: list[SceneObject] = []
    boxes: list[tuple[int, int, int, int]] = []

    for k in range(count):
        placed = False
        for _ in range(500):
            h = int(rng.integers(half_lo, half_hi + 1))
            if constraint and k == 0:
                cy, cx = size // 2, size // 2
            else:
                cy = int(rng.integers(h, size - h))
                cx = int(rng.integers(h, size - h))
            candidate = SceneObject(
                shape=SHAPES[int(rng.integers(0, NUM_SHAPES))],
                color=int(rng.integers(0, NUM_COLORS)),
                center=(cy, cx),
                size=2 * h + 1,
            )
            if not _bbox_clear(candidate.bbox, boxes):
                continue
            if constraint and _bbox_hits_corners(candidate.bbox, size,
                                                 config.corner_margin):
                continue
            objects.append(candidate)
            boxes.append(candidate.bbox)
            placed = True
            break
        if not placed and constraint and k == 0:
            raise ConfigError("cannot place the centered object under constraints")
    return Scene(objects=objects, image_size=size)


def render_scene(scene: Scene, box_annotations: bool = False
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Rasterize a scene into (uint8 RGB image, uint8 layout map)."""
    size = scene.image_size
    image = np.empty((size, size, 3), dtype=np.uint8)
    image[:] = BACKGROUND_RGB
    layout = np.zeros((size, size), dtype=np.uint8)
    for obj in scene.objects:
        mask = _shape_mask(obj, size)
        image[mask] = PALETTE[obj.color]
        if box_annotations:
            y0, x0, y1, x1 = obj.bbox
            layout[y0:y1 + 1, x0:x1 + 1] = obj.class_index
        else:
            layout[mask] = obj.class_index
    return image, layout


def generate_scene(config: DataConfig, seed: int,
                   constraint_mode: bool | None = None
                   ) -> tuple[np.ndarray, np.ndarray]:
    """One (image, layout) pair; image float32 (3, H, W) in [-1, 1]."""
    scene = make_scene(config, seed, constraint_mode)
    image, layout = render_scene(scene, config.box_annotations)
    return image_to_float(image), layout.astype(np.int64)


def build_dataset(config: DataConfig, seed: int = 0,
                  num_scenes: int | None = None) -> SceneDataset:
    """Generate the full dataset with train/val split tags.

    Scene i gets an independent child seed of `seed`, so generation is
    order-independent and parallelizable.
    """
    n = config.num_scenes if num_scenes is None else num_scenes
    child_seeds = np.random.SeedSequence(seed).generate_state(n, dtype=np.uint64)
    images = np.empty((n, 3, config.image_size, config.image_size),
                      dtype=np.float32)
    layouts = np.empty((n, config.image_size, config.image_size), dtype=np.int64)
    scenes: list[Scene] = []
    for i in range(n):
        scene = make_scene(config, int(child_seeds[i]))
        img, lay = render_scene(scene, config.box_annotations)
        images[i] = image_to_float(img)
        layouts[i] = lay
        scenes.append(scene)
    n_val = int(round(n * config.val_fraction))
    splits = ["train"] * (n - n_val) + ["val"] * n_val
    return SceneDataset(images=images, layouts=layouts, splits=splits,
                        scenes=scenes)


def image_to_float(image_u8: np.ndarray) -> np.ndarray:
    """uint8 HWC -> float32 CHW in [-1, 1]."""
    return (image_u8.astype(np.float32) / 127.5 - 1.0).transpose(2, 0, 1)


def float_to_image(image_f: np.ndarray) -> np.ndarray:
    """float CHW in [-1, 1] -> uint8 HWC."""
    arr = np.clip((np.asarray(image_f) + 1.0) * 127.5, 0.0, 255.0)
    return np.rint(arr).astype(np.uint8).transpose(1, 2, 0)


def save_dataset(dataset: SceneDataset, out_dir: str) -> None:
    """Write paired PNGs plus a tab-separated manifest of (image, layout, split)."""
    img_dir = os.path.join(out_dir, "images")
    lay_dir = os.path.join(out_dir, "layouts")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(lay_dir, exist_ok=True)
    lines = []
    for i in range(len(dataset)):
        img_rel = f"images/scene_{i:05d}.png"
        lay_rel = f"layouts/scene_{i:05d}.png"
        Image.fromarray(float_to_image(dataset.images[i]), mode="RGB").save(
            os.path.join(out_dir, img_rel))
        Image.fromarray(dataset.layouts[i].astype(np.uint8), mode="L").save(
            os.path.join(out_dir, lay_rel))
        lines.append(f"{img_rel}\t{lay_rel}\t{dataset.splits[i]}")
    with open(os.path.join(out_dir, _MANIFEST), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(in_dir: str) -> SceneDataset:
    manifest = os.path.join(in_dir, _MANIFEST)
    if not os.path.exists(manifest):
        raise FileNotFoundError(f"no manifest at {manifest}")
    images, layouts, splits = [], [], []
    with open(manifest, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            img_rel, lay_rel, split = line.split("\t")
            img = np.asarray(Image.open(os.path.join(in_dir, img_rel)).convert("RGB"))
            lay = np.asarray(Image.open(os.path.join(in_dir, lay_rel)).convert("L"))
            images.append(image_to_float(img))
            layouts.append(lay.astype(np.int64))
            splits.append(split)
    return SceneDataset(images=np.stack(images), layouts=np.stack(layouts),
                        splits=splits)


# --- categorical bilinear resampling ----------------------------------------

def _resample_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Bilinear sampling weights, edge-replicated, rows sum to exactly 1.

    Output sample i reads the source at coordinate (i + 0.5) * n_in/n_out - 0.5.
    For power-of-two scale factors every weight is dyadic, so the matrix is
    exact in float64.
    """
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    i0 = np.floor(src).astype(np.int64)
    frac = src - i0
    i0c = np.clip(i0, 0, n_in - 1)
    i1c = np.clip(i0 + 1, 0, n_in - 1)
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(mat, (rows, i0c), 1.0 - frac)
    np.add.at(mat, (rows, i1c), frac)
    return mat


def _resample_onehot(layout: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """One-hot -> bilinear -> argmax (first max wins, i.e. lowest class)."""
    squeeze = layout.ndim == 2
    batch = layout[None] if squeeze else layout
    if batch.min() < 0:
        raise ValueError("layout contains negative class indices")
    n, h, w = batch.shape
    n_classes = int(batch.max()) + 1
    onehot = np.zeros((n, n_classes, h, w), dtype=np.float64)
    nn, yy, xx = np.meshgrid(np.arange(n), np.arange(h), np.arange(w),
                             indexing="ij")
    onehot[nn, batch, yy, xx] = 1.0
    wy = _resample_matrix(h, out_h)
    wx = _resample_matrix(w, out_w)
    resampled = np.einsum("oh,nchw,pw->ncop", wy, onehot, wx, optimize=True)
    result = resampled.argmax(axis=1).astype(np.int64)
    return result[0] if squeeze else result


def downsample_layout(layout: np.ndarray, factor: int) -> np.ndarray:
    """Reduce a class map by an integer factor (image -> latent resolution)."""
    h, w = layout.shape[-2], layout.shape[-1]
    if h % factor or w % factor:
        raise ValueError(f"resolution {h}x{w} not divisible by factor {factor}")
    return _resample_onehot(layout, h // factor, w // factor)


def upsample_layout(layout: np.ndarray, factor: int) -> np.ndarray:
    """Expand a class map by an integer factor (latent -> image resolution)."""
    h, w = layout.shape[-2], layout.shape[-1]
    return _resample_onehot(layout, h * factor, w * factor)
