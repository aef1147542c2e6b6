"""Shared helper: tile images / layout maps into a PNG contact sheet."""

import numpy as np
from PIL import Image

# distinct colors for layout classes 0..12 (background stays light gray)
_LAYOUT_COLORS = np.array(
    [[235, 235, 235],
     [200, 40, 40], [40, 170, 60], [50, 90, 200], [230, 200, 50],
     [160, 40, 160], [40, 180, 180], [240, 120, 30], [120, 120, 120],
     [90, 60, 20], [250, 150, 200], [60, 250, 60], [20, 20, 120]],
    dtype=np.uint8)


def image_grid(images_u8: list[np.ndarray], columns: int, pad: int = 2) -> Image.Image:
    h, w = images_u8[0].shape[:2]
    rows = (len(images_u8) + columns - 1) // columns
    canvas = np.full((rows * (h + pad) + pad, columns * (w + pad) + pad, 3),
                     255, dtype=np.uint8)
    for idx, img in enumerate(images_u8):
        r, c = divmod(idx, columns)
        y = pad + r * (h + pad)
        x = pad + c * (w + pad)
        canvas[y:y + h, x:x + w] = img
    return Image.fromarray(canvas)


def colorize_layout(layout: np.ndarray) -> np.ndarray:
    return _LAYOUT_COLORS[np.clip(layout, 0, len(_LAYOUT_COLORS) - 1)]


def float_image_to_u8(img) -> np.ndarray:
    arr = np.asarray(img)
    if arr.ndim == 3 and arr.shape[0] == 3:  # CHW -> HWC
        arr = arr.transpose(1, 2, 0)
    return np.rint(np.clip((arr + 1.0) * 127.5, 0, 255)).astype(np.uint8)
