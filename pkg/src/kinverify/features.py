"""Block-histogram feature vectors and multiscale/multichannel tensors.

A code map is split into a 4x4 grid of blocks (remainder pixels go to
the last row/column of blocks), each block yields a count histogram over
the code range, every block histogram is L2-normalized, and the 16
segments are concatenated row-major. Stacking the per-map vectors as
columns gives the two-mode feature tensor: mode 1 is the spatial
histogram axis (blocks x bins), mode 2 indexes (channel, scale) slices.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .fileio import atomic_write_bytes
from .lbp import CodeMap

DEFAULT_GRID = (4, 4)

FEATURES_MAGIC = b"KFEA"
FEATURES_VERSION = 1


@dataclass
class FeatureTensor:
    """(mode1_dim x mode2_dim) matrix of block-histogram features."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise InputError(f"feature tensor must be 2-D, got shape {arr.shape}")
        self.data = arr

    @property
    def mode1_dim(self) -> int:
        return self.data.shape[0]

    @property
    def mode2_dim(self) -> int:
        return self.data.shape[1]


def _block_edges(size: int, blocks: int) -> list[int]:
    base = size // blocks
    edges = [i * base for i in range(blocks)]
    edges.append(size)
    return edges


def block_histograms(
    code_map: CodeMap, grid=DEFAULT_GRID, bins: int | None = None, normalize: bool = True
) -> np.ndarray:
    """Concatenated per-block histograms of one code map.

    Each block histogram is L2-normalized unless ``normalize`` is False,
    in which case raw counts come back (their per-block sums equal the
    block pixel counts exactly).
    """
    rows, cols = grid
    if rows < 1 or cols < 1:
        raise InputError(f"grid must be positive, got {grid}")
    codes = code_map.codes
    if codes.shape[0] < rows or codes.shape[1] < cols:
        raise InputError(f"code map {codes.shape} smaller than grid {grid}")
    if bins is None:
        bins = code_map.bins
    if codes.max() >= bins or codes.min() < 0:
        raise InputError(
            f"codes outside [0, {bins}): map has range [{codes.min()}, {codes.max()}]"
        )
    y_edges = _block_edges(codes.shape[0], rows)
    x_edges = _block_edges(codes.shape[1], cols)
    segments = []
    for by in range(rows):
        for bx in range(cols):
            block = codes[y_edges[by] : y_edges[by + 1], x_edges[bx] : x_edges[bx + 1]]
            counts = np.bincount(block.ravel(), minlength=bins).astype(np.float64)
            segments.append(counts / np.linalg.norm(counts) if normalize else counts)
    return np.concatenate(segments)


def assemble_tensor(maps, grid=DEFAULT_GRID, bins: int | None = None) -> FeatureTensor:
    """Stack per-map block-histogram vectors as tensor columns.

    Column j is the feature vector of ``maps[j]``; the caller's map
    order (channel-major, scale-ascending) is preserved.
    """
    maps = list(maps)
    if not maps:
        raise InputError("need at least one code map")
    bit_counts = {m.code_bits for m in maps}
    if len(bit_counts) != 1:
        raise InputError(f"mixed code bit counts across maps: {sorted(bit_counts)}")
    columns = [block_histograms(m, grid=grid, bins=bins) for m in maps]
    return FeatureTensor(data=np.column_stack(columns))


def flatten(tensor: FeatureTensor) -> np.ndarray:
    """Column-major flattening; length = mode1_dim * mode2_dim."""
    return tensor.data.ravel(order="F")


def unflatten(vector: np.ndarray, mode1_dim: int, mode2_dim: int) -> FeatureTensor:
    vec = np.asarray(vector, dtype=np.float64)
    if vec.size != mode1_dim * mode2_dim:
        raise InputError(
            f"vector of length {vec.size} cannot fill a {mode1_dim}x{mode2_dim} tensor"
        )
    return FeatureTensor(data=vec.reshape((mode1_dim, mode2_dim), order="F"))


# --- persistence -----------------------------------------------------------
#
# "KFEA" layout, little-endian:
#   magic 4s | version u32 | mode1_dim u32 | mode2_dim u32
#   | mode1_dim*mode2_dim float64, column-major

_HEADER = struct.Struct("<4sIII")


def save_features(tensor: FeatureTensor, path) -> None:
    blob = _HEADER.pack(
        FEATURES_MAGIC, FEATURES_VERSION, tensor.mode1_dim, tensor.mode2_dim
    ) + np.asarray(tensor.data, dtype="<f8").tobytes(order="F")
    atomic_write_bytes(path, blob)


def load_features(path) -> FeatureTensor:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise InputError(f"truncated feature file: {path}")
    magic, version, m1, m2 = _HEADER.unpack_from(blob, 0)
    if magic != FEATURES_MAGIC:
        raise InputError(f"bad magic {magic!r} in {path} (expected {FEATURES_MAGIC!r})")
    if version != FEATURES_VERSION:
        raise InputError(f"unsupported feature file version {version} in {path}")
    expected = _HEADER.size + 8 * m1 * m2
    if len(blob) != expected:
        raise InputError(f"feature file size {len(blob)} != expected {expected}: {path}")
    data = np.frombuffer(blob[_HEADER.size :], dtype="<f8").reshape((m1, m2), order="F")
    return FeatureTensor(data=data.copy())
