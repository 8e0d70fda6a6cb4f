"""Circular local binary patterns at multiple radii over color planes.

The code conventions are pinned so an independent reimplementation can
match bit for bit:

* neighbor 0 sits due east of the center pixel and neighbors advance
  counter-clockwise in screen orientation (row axis pointing down),
  i.e. neighbor i lies at ``(row - R*sin(2*pi*i/P), col + R*cos(2*pi*i/P))``;
* bit i carries weight ``2**i`` and is set when the neighbor is >= the
  center value (ties set the bit);
* off-grid neighbors are bilinearly interpolated with the nested-lerp
  form ``a + t*(b - a)``; the integer base offset of each neighbor is
  ``floor(offset)`` taken once per (radius, neighbor), not per pixel;
* pixels closer than R to the border are dropped, so an (H, W) plane
  yields an (H-2R, W-2R) code map.

Raw (non-uniform) codes are kept, giving ``2**P`` histogram bins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .imaging import validate_color_image

DEFAULT_RADII = (1, 2, 3)


@dataclass(frozen=True)
class LbpConfig:
    radius: int
    neighbors: int = 8

    def __post_init__(self):
        if self.radius < 1:
            raise InputError(f"radius must be >= 1, got {self.radius}")
        if not 4 <= self.neighbors <= 24:
            raise InputError(f"neighbor count must be in [4, 24], got {self.neighbors}")


@dataclass
class CodeMap:
    """Integer code image plus the bit depth of its codes."""

    codes: np.ndarray
    code_bits: int

    @property
    def height(self) -> int:
        return self.codes.shape[0]

    @property
    def width(self) -> int:
        return self.codes.shape[1]

    @property
    def bins(self) -> int:
        return 1 << self.code_bits


def _neighbor_offsets(cfg: LbpConfig):
    """Per-neighbor (base_dy, base_dx, frac_y, frac_x) sampling offsets."""
    offsets = []
    for i in range(cfg.neighbors):
        theta = 2.0 * math.pi * i / cfg.neighbors
        dy = -cfg.radius * math.sin(theta)
        dx = cfg.radius * math.cos(theta)
        ay = math.floor(dy)
        ax = math.floor(dx)
        offsets.append((ay, ax, dy - ay, dx - ax))
    return offsets


def lbp_encode(plane: np.ndarray, cfg: LbpConfig) -> CodeMap:
    """Encode one plane into circular LBP codes at the configured radius."""
    p = np.asarray(plane, dtype=np.float64)
    r = cfg.radius
    if p.ndim != 2:
        raise InputError(f"expected a 2-D plane, got shape {p.shape}")
    if p.shape[0] < 2 * r + 1 or p.shape[1] < 2 * r + 1:
        raise InputError(
            f"plane {p.shape} too small for radius {r} (needs at least {2 * r + 1} per side)"
        )
    h, w = p.shape
    ih, iw = h - 2 * r, w - 2 * r
    center = p[r : h - r, r : w - r]
    # One replicate row/column on the bottom/right: the +1 corner slab may
    # step past the border, but only where its interpolation weight is 0.
    padded = np.pad(p, ((0, 1), (0, 1)), mode="edge")
    codes = np.zeros((ih, iw), dtype=np.int32)
    for i, (ay, ax, fy, fx) in enumerate(_neighbor_offsets(cfg)):
        y0, x0 = r + ay, r + ax
        a = padded[y0 : y0 + ih, x0 : x0 + iw]
        b = padded[y0 : y0 + ih, x0 + 1 : x0 + 1 + iw]
        c = padded[y0 + 1 : y0 + 1 + ih, x0 : x0 + iw]
        d = padded[y0 + 1 : y0 + 1 + ih, x0 + 1 : x0 + 1 + iw]
        top = a + fx * (b - a)
        bot = c + fx * (d - c)
        value = top + fy * (bot - top)
        codes |= (value >= center).astype(np.int32) << i
    return CodeMap(codes=codes, code_bits=cfg.neighbors)


def ms_lbp(image: np.ndarray, radii=DEFAULT_RADII, neighbors: int = 8) -> list[CodeMap]:
    """Multiscale color LBP: one CodeMap per (channel, radius).

    Maps come back channel-major (all radii of the red plane, then
    green, then blue) with radii ascending inside each channel.
    """
    arr = validate_color_image(image)
    radii = sorted(set(int(r) for r in radii))
    if not radii:
        raise InputError("radii set must be non-empty")
    maps = []
    for ch in range(3):
        for r in radii:
            maps.append(lbp_encode(arr[:, :, ch], LbpConfig(radius=r, neighbors=neighbors)))
    return maps
