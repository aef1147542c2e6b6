"""Desk-scale evaluation protocol for the generation pipeline.

A miniature U-Net is trained under three regimes sharing seeds and
hyperparameters -- real data only, real + generated, generated only -- and
scored by macro-F1 over object classes on a held-out real validation set.
The generated-only score is the diversity measure: it can only be high when
the synthetic pairs cover the real data's variation. Constraint-violation
rate and layout-distribution divergences complete the report.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy import ndimage
from torch import nn
from torch.nn import functional as F

from .config import NUM_LAYOUT_CLASSES
from .sampler import check_constraint
from .shapeworld import SceneDataset


# --- segmentation network ----------------------------------------------------

class _DoubleConv(nn.Module):
    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 3, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(out_ch, out_ch, 3, padding=1), nn.ReLU(inplace=True))

    def forward(self, x):
        return self.net(x)


class UNet(nn.Module):
    """Two-level encoder-decoder with skip connections."""

    def __init__(self, in_channels: int = 3,
                 num_classes: int = NUM_LAYOUT_CLASSES,
                 base_channels: int = 16):
        super().__init__()
        c = base_channels
        self.enc0 = _DoubleConv(in_channels, c)
        self.down1 = nn.Conv2d(c, 2 * c, 4, stride=2, padding=1)
        self.enc1 = _DoubleConv(2 * c, 2 * c)
        self.down2 = nn.Conv2d(2 * c, 4 * c, 4, stride=2, padding=1)
        self.mid = _DoubleConv(4 * c, 4 * c)
        self.up1 = nn.ConvTranspose2d(4 * c, 2 * c, 4, stride=2, padding=1)
        self.dec1 = _DoubleConv(4 * c, 2 * c)
        self.up2 = nn.ConvTranspose2d(2 * c, c, 4, stride=2, padding=1)
        self.dec0 = _DoubleConv(2 * c, c)
        self.head = nn.Conv2d(c, num_classes, 1)

    def forward(self, x):
        s0 = self.enc0(x)
        s1 = self.enc1(self.down1(s0))
        h = self.mid(self.down2(s1))
        h = self.dec1(torch.cat([self.up1(h), s1], dim=1))
        h = self.dec0(torch.cat([self.up2(h), s0], dim=1))
        return self.head(h)


@dataclass
class SegConfig:
    base_channels: int = 16
    steps: int = 400
    batch_size: int = 16
    learning_rate: float = 1e-3
    num_classes: int = NUM_LAYOUT_CLASSES


def train_segmenter(images: np.ndarray, layouts: np.ndarray,
                    cfg: SegConfig, seed: int = 0) -> UNet:
    """Per-pixel cross-entropy training, deterministic per seed."""
    if images.shape[0] == 0:
        raise ValueError("empty training set")
    torch.manual_seed(seed)
    model = UNet(images.shape[1], cfg.num_classes, cfg.base_channels)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    x = torch.from_numpy(images)
    y = torch.from_numpy(layouts).long()
    n = x.shape[0]
    model.train()
    for step in range(cfg.steps):
        idx = torch.randint(0, n, (min(cfg.batch_size, n),))
        logits = model(x[idx])
        loss = F.cross_entropy(logits, y[idx])
        if not torch.isfinite(loss):
            raise RuntimeError(f"segmenter diverged at step {step}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    model.eval()
    return model


def predict_layouts(model: UNet, images: np.ndarray,
                    batch_size: int = 64) -> np.ndarray:
    out = []
    with torch.no_grad():
        for lo in range(0, images.shape[0], batch_size):
            logits = model(torch.from_numpy(images[lo:lo + batch_size]))
            out.append(logits.argmax(dim=1).numpy())
    return np.concatenate(out, axis=0)


# --- metrics -----------------------------------------------------------------

def confusion_matrix(predicted: np.ndarray, true: np.ndarray,
                     num_classes: int) -> np.ndarray:
    """counts[t, p] = pixels of true class t predicted as p."""
    pred = np.asarray(predicted).reshape(-1)
    ref = np.asarray(true).reshape(-1)
    if pred.shape != ref.shape:
        raise ValueError("prediction and reference sizes differ")
    if pred.min() < 0 or pred.max() >= num_classes or \
            ref.min() < 0 or ref.max() >= num_classes:
        raise ValueError("class index outside range")
    flat = ref * num_classes + pred
    counts = np.bincount(flat, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


def macro_f1(predicted: np.ndarray, true: np.ndarray, num_classes: int,
             ignore_class: int = 0) -> float:
    """Mean per-class F1 over object classes (background excluded).

    Classes absent from both prediction and reference are skipped; a class
    with support but no true positives scores 0.
    """
    counts = confusion_matrix(predicted, true, num_classes)
    scores = []
    for c in range(num_classes):
        if c == ignore_class:
            continue
        tp = counts[c, c]
        fn = counts[c].sum() - tp
        fp = counts[:, c].sum() - tp
        if tp + fp + fn == 0:
            continue
        scores.append(2.0 * tp / (2.0 * tp + fp + fn))
    return float(np.mean(scores)) if scores else 0.0


def pixel_accuracy(predicted: np.ndarray, true: np.ndarray) -> float:
    predicted = np.asarray(predicted)
    true = np.asarray(true)
    return float((predicted == true).mean())


def violation_rate(layouts, corner_margin: int = 4) -> float:
    """Fraction of layouts failing the center/corner coherency rule."""
    layouts = list(layouts)
    if not layouts:
        raise ValueError("need at least one layout")
    failures = sum(not check_constraint(lay, corner_margin).passed
                   for lay in layouts)
    return failures / len(layouts)


def _js_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Jensen-Shannon divergence in nats; 0 iff identical, max ln 2."""
    p = p / p.sum()
    q = q / q.sum()
    m = 0.5 * (p + q)

    def kl(a, b):
        mask = a > 0
        return float(np.sum(a[mask] * np.log(a[mask] / b[mask])))

    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


def layout_objects(layout: np.ndarray, min_area: int = 4) -> list[int]:
    """Connected-component object classes in one layout map."""
    classes = []
    for c in np.unique(layout):
        if c == 0:
            continue
        labels, count = ndimage.label(layout == c)
        for i in range(1, count + 1):
            if (labels == i).sum() >= min_area:
                classes.append(int(c))
    return classes


@dataclass
class DivergenceReport:
    class_js: float
    count_js: float


def layout_divergence(generated_layouts, real_layouts,
                      num_classes: int = NUM_LAYOUT_CLASSES,
                      max_objects: int = 8) -> DivergenceReport:
    """JS divergence of object-class and object-count histograms."""
    gen = list(generated_layouts)
    real = list(real_layouts)
    if not gen or not real:
        raise ValueError("both layout sets must be nonempty")

    def histograms(layouts):
        class_hist = np.zeros(num_classes, dtype=np.float64)
        count_hist = np.zeros(max_objects + 1, dtype=np.float64)
        for lay in layouts:
            objs = layout_objects(np.asarray(lay))
            for c in objs:
                class_hist[min(c, num_classes - 1)] += 1
            count_hist[min(len(objs), max_objects)] += 1
        if class_hist.sum() == 0:
            class_hist[0] = 1.0  # all-background degenerate case
        return class_hist, count_hist

    g_class, g_count = histograms(gen)
    r_class, r_count = histograms(real)
    return DivergenceReport(class_js=_js_divergence(g_class, r_class),
                            count_js=_js_divergence(g_count, r_count))


# --- the three-regime protocol ------------------------------------------------

@dataclass
class RegimeScores:
    f1_baseline: float
    f1_augmented: float
    f1_generated_only: float | None


@dataclass
class ProtocolResult:
    per_seed: list[RegimeScores] = field(default_factory=list)

    def mean(self, regime: str) -> float:
        values = [getattr(s, regime) for s in self.per_seed]
        if any(v is None for v in values):
            raise ValueError(f"regime {regime} was not evaluated")
        return float(np.mean(values))

    def std(self, regime: str) -> float:
        values = [getattr(s, regime) for s in self.per_seed]
        return float(np.std(values))


def _check_class_range(layouts: np.ndarray, num_classes: int, name: str) -> None:
    if layouts.size and (layouts.min() < 0 or layouts.max() >= num_classes):
        raise ValueError(f"{name} layouts use classes outside [0, {num_classes})")


def f1_protocol(real_train: SceneDataset, generated: SceneDataset | None,
                real_val: SceneDataset, seg_cfg: SegConfig | None = None,
                seeds: tuple[int, ...] = (0, 1, 2)) -> ProtocolResult:
    """Train identical segmenters on three data regimes and score each.

    Every regime shares the seed list, so score deltas isolate the data
    variable. `generated` may be None/empty, in which case the augmented
    regime degenerates to the baseline and the generated-only score is None.
    """
    seg_cfg = seg_cfg or SegConfig()
    _check_class_range(real_train.layouts, seg_cfg.num_classes, "real_train")
    _check_class_range(real_val.layouts, seg_cfg.num_classes, "real_val")
    have_generated = generated is not None and len(generated) > 0
    if have_generated:
        _check_class_range(generated.layouts, seg_cfg.num_classes, "generated")
        aug_images = np.concatenate([real_train.images, generated.images])
        aug_layouts = np.concatenate([real_train.layouts, generated.layouts])
    else:
        aug_images, aug_layouts = real_train.images, real_train.layouts

    result = ProtocolResult()
    for seed in seeds:
        def run(images, layouts):
            model = train_segmenter(images, layouts, seg_cfg, seed=seed)
            pred = predict_layouts(model, real_val.images)
            return macro_f1(pred, real_val.layouts, seg_cfg.num_classes)

        baseline = run(real_train.images, real_train.layouts)
        augmented = run(aug_images, aug_layouts)
        gen_only = (run(generated.images, generated.layouts)
                    if have_generated else None)
        result.per_seed.append(RegimeScores(baseline, augmented, gen_only))
    return result


def write_report(result: ProtocolResult, out_csv: str, out_txt: str,
                 extra: dict[str, float] | None = None) -> None:
    """Machine-readable CSV plus a line-oriented text summary."""
    os.makedirs(os.path.dirname(out_csv) or ".", exist_ok=True)
    with open(out_csv, "w", encoding="utf-8") as fh:
        fh.write("seed,f1_baseline,f1_augmented,f1_generated_only\n")
        for i, scores in enumerate(result.per_seed):
            gen = "" if scores.f1_generated_only is None else \
                f"{scores.f1_generated_only:.6f}"
            fh.write(f"{i},{scores.f1_baseline:.6f},"
                     f"{scores.f1_augmented:.6f},{gen}\n")
    lines = [
        f"f1_baseline       mean={result.mean('f1_baseline'):.4f} "
        f"sd={result.std('f1_baseline'):.4f}",
        f"f1_augmented      mean={result.mean('f1_augmented'):.4f} "
        f"sd={result.std('f1_augmented'):.4f}",
    ]
    if all(s.f1_generated_only is not None for s in result.per_seed):
        lines.append(
            f"f1_generated_only mean={result.mean('f1_generated_only'):.4f} "
            f"sd={result.std('f1_generated_only'):.4f}")
    for key, value in (extra or {}).items():
        lines.append(f"{key} = {value:.6f}")
    with open(out_txt, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def brute_force_macro_f1(predicted: np.ndarray, true: np.ndarray,
                         num_classes: int, ignore_class: int = 0) -> float:
    """Independent per-pixel loop oracle for macro_f1 (test reference)."""
    pred = np.asarray(predicted).reshape(-1)
    ref = np.asarray(true).reshape(-1)
    scores = []
    for c in range(num_classes):
        if c == ignore_class:
            continue
        tp = fp = fn = 0
        for p, t in zip(pred, ref):
            if p == c and t == c:
                tp += 1
            elif p == c and t != c:
                fp += 1
            elif p != c and t == c:
                fn += 1
        if tp + fp + fn == 0:
            continue
        scores.append(2.0 * tp / (2.0 * tp + fp + fn))
    return float(np.mean(scores)) if scores else 0.0
