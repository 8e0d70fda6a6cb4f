"""Image loading and the canonical 64x64 color preprocessing step.

Images travel through the package as float64 arrays of shape
``(height, width, 3)`` with intensities in [0, 1]. Every encoder input
is a square crop bilinearly resampled onto the 64x64 canonical grid.

Resampling uses half-pixel-centered sampling and the nested-lerp form
``a + t*(b - a)``, which keeps constant regions exact and makes the
full-frame 64x64 case a bit-exact identity (so preprocessing is
idempotent on already-canonical images).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DegenerateInputError, InputError

CANONICAL_SIDE = 64

# 8-bit PIL modes we know how to map onto three planes.
_DECODABLE_MODES = {"L", "LA", "P", "RGB", "RGBA"}


@dataclass(frozen=True)
class CropWindow:
    """Square region with top-left corner (x, y); must lie inside the image."""

    x: int
    y: int
    side: int

    def validate(self, height: int, width: int) -> None:
        if self.side < 1:
            raise InputError(f"crop side must be >= 1, got {self.side}")
        if self.x < 0 or self.y < 0:
            raise InputError(f"crop offsets must be non-negative, got ({self.x}, {self.y})")
        if self.x + self.side > width or self.y + self.side > height:
            raise InputError(
                f"crop window x={self.x} y={self.y} side={self.side} "
                f"exceeds image bounds {width}x{height}"
            )


def center_square_window(image: np.ndarray) -> CropWindow:
    """Largest centered square window for an image array."""
    h, w = image.shape[:2]
    side = min(h, w)
    return CropWindow(x=(w - side) // 2, y=(h - side) // 2, side=side)


def validate_color_image(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InputError(f"expected a (height, width, 3) array, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InputError(f"image has empty dimensions: {arr.shape}")
    return arr.astype(np.float64, copy=False)


def load_image(path) -> np.ndarray:
    """Decode an 8-bit PNG/JPEG file into a (H, W, 3) float64 array in [0, 1].

    Grayscale sources are replicated onto three identical planes; an
    alpha channel, if present, is dropped.
    """
    try:
        with Image.open(path) as im:
            if im.mode not in _DECODABLE_MODES:
                raise InputError(f"unsupported image mode {im.mode!r} in {path}")
            if im.mode == "L":
                plane = np.asarray(im, dtype=np.float64)
                arr = np.stack([plane, plane, plane], axis=-1)
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except UnidentifiedImageError as exc:
        raise InputError(f"not a decodable image file: {path}") from exc
    except (OSError, SyntaxError, ValueError) as exc:
        raise InputError(f"failed to decode image {path}: {exc}") from exc
    return arr / 255.0


def _resample_plane(plane: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = plane.shape
    sy = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, float(h - 1))
    sx = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, float(w - 1))
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    fy = (sy - y0)[:, None]
    fx = (sx - x0)[None, :]
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    a = plane[np.ix_(y0, x0)]
    b = plane[np.ix_(y0, x1)]
    c = plane[np.ix_(y1, x0)]
    d = plane[np.ix_(y1, x1)]
    top = a + fx * (b - a)
    bot = c + fx * (d - c)
    return top + fy * (bot - top)


def preprocess(image: np.ndarray, window: CropWindow) -> np.ndarray:
    """Crop ``window`` out of ``image`` and resample it to 64x64x3 in [0, 1].

    Inputs on the 8-bit scale (max value above 1) are divided by 255;
    inputs already in [0, 1] pass through unchanged, so the operation is
    idempotent.
    """
    arr = validate_color_image(image)
    h, w = arr.shape[:2]
    window.validate(h, w)
    crop = arr[window.y : window.y + window.side, window.x : window.x + window.side, :]
    if crop.max() > 1.0 + 1e-9:
        crop = crop / 255.0
    out = np.empty((CANONICAL_SIDE, CANONICAL_SIDE, 3), dtype=np.float64)
    for ch in range(3):
        out[:, :, ch] = _resample_plane(crop[:, :, ch], CANONICAL_SIDE, CANONICAL_SIDE)
    return out


def normalize_patch(patch: np.ndarray) -> np.ndarray:
    """Shift to zero mean and scale to unit population standard deviation.

    Raises DegenerateInputError on (numerically) constant patches.
    """
    arr = np.asarray(patch, dtype=np.float64)
    mean = arr.mean()
    std = np.sqrt(np.mean((arr - mean) ** 2))
    if std < 1e-12:
        raise DegenerateInputError("constant patch: zero standard deviation")
    return (arr - mean) / std
