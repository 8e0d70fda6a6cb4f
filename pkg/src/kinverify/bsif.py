"""Binarized statistical image features with filters learned from face patches.

A filter bank holds ``n`` filters of size ``L x L`` per color channel.
Learning runs per channel: random patches are normalized to zero mean /
unit deviation, the mean patch is removed, the patch covariance is
eigendecomposed, the data is whitened onto the top-n eigenvectors, and a
symmetric fixed-point ICA (cube nonlinearity) produces the unmixing
matrix. Filters are the composition of unmixing and whitening, reshaped
to L x L, L2-normalized, and sign-fixed so the maximum-magnitude
coefficient is positive.

Encoding correlates the replicate-padded plane with each filter and sets
bit i when the response is strictly positive, so the code map keeps the
full image size at every scale. The accumulation order is row-major over
filter taps, which a naive per-pixel oracle can reproduce exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DegenerateInputError, InputError, NumericalError
from .fileio import atomic_write_bytes
from .imaging import validate_color_image
from .lbp import CodeMap

CHANNEL_NAMES = ("red", "green", "blue")
DEFAULT_SCALES = (3, 7, 11, 15, 17)

BANK_MAGIC = b"KBSF"
BANK_VERSION = 1

ICA_TOLERANCE = 1e-5
ICA_MAX_ITERATIONS = 500
# The symmetric fixed point can fall into a limit cycle from an unlucky
# start; each restart draws a fresh seeded initialization before the
# run is declared non-convergent.
ICA_RESTARTS = 5


@dataclass
class PatchSet:
    """Normalized flattened patches from one color channel."""

    patch_side: int
    channel: str
    data: np.ndarray  # (count, patch_side**2), rows zero-mean unit-std

    @property
    def count(self) -> int:
        return self.data.shape[0]


@dataclass
class IcaStats:
    iterations: int
    final_delta: float
    restarts: int = 0


@dataclass(frozen=True)
class FilterBank:
    """Learned per-channel filter stack: filters has shape (3, n, L, L)."""

    patch_side: int
    bit_count: int
    filters: np.ndarray
    learn_seed: int
    source_tag: str = ""

    def __post_init__(self):
        f = np.asarray(self.filters, dtype=np.float64)
        expected = (3, self.bit_count, self.patch_side, self.patch_side)
        if f.shape != expected:
            raise InputError(f"filter tensor shape {f.shape} != expected {expected}")
        object.__setattr__(self, "filters", f)


def _subseed(*parts) -> int:
    """Deterministic child seed from a tuple of non-negative ints."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def sample_patches(images, patch_side: int, count: int, seed: int) -> list[PatchSet]:
    """Draw ``count`` normalized LxL patches per channel from the images.

    Positions (image index, x, y) are uniform under a seeded generator;
    channels are drawn independently, red first. Constant patches are
    rejected and redrawn, with the total number of draws per channel
    bounded at 50x ``count``.
    """
    L = int(patch_side)
    if L < 2:
        raise InputError(f"patch side must be >= 2, got {L}")
    if count < 10 * L * L:
        raise InputError(f"patch count {count} < 10 * L^2 = {10 * L * L}")
    arrs = [validate_color_image(im) for im in images]
    if not arrs:
        raise InputError("need at least one image to sample patches from")
    for a in arrs:
        if a.shape[0] < L or a.shape[1] < L:
            raise InputError(f"image {a.shape} smaller than patch side {L}")
    heights = np.array([a.shape[0] for a in arrs])
    widths = np.array([a.shape[1] for a in arrs])
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    out = []
    for ch, name in enumerate(CHANNEL_NAMES):
        rows = np.empty((count, L * L), dtype=np.float64)
        filled = 0
        drawn = 0
        while filled < count:
            need = count - filled
            if drawn + need > 50 * count:
                raise DegenerateInputError(
                    f"too few non-constant patches in channel {name}: "
                    f"{filled}/{count} after {drawn} draws"
                )
            idx = rng.integers(0, len(arrs), size=need)
            ys = np.floor(rng.random(need) * (heights[idx] - L + 1)).astype(np.intp)
            xs = np.floor(rng.random(need) * (widths[idx] - L + 1)).astype(np.intp)
            batch = np.empty((need, L * L), dtype=np.float64)
            for j in range(need):
                batch[j] = arrs[idx[j]][ys[j] : ys[j] + L, xs[j] : xs[j] + L, ch].ravel()
            drawn += need
            means = batch.mean(axis=1, keepdims=True)
            centered = batch - means
            stds = np.sqrt(np.mean(centered**2, axis=1, keepdims=True))
            good = stds[:, 0] >= 1e-12
            kept = int(good.sum())
            if kept:
                rows[filled : filled + kept] = centered[good] / stds[good]
                filled += kept
        out.append(PatchSet(patch_side=L, channel=name, data=rows))
    return out


def _symmetric_decorrelation(w: np.ndarray) -> np.ndarray:
    # W <- (W W^T)^{-1/2} W
    s, u = np.linalg.eigh(w @ w.T)
    if s[0] <= 1e-14 * max(s[-1], 1.0):
        raise NumericalError("degenerate unmixing matrix during decorrelation")
    return (u * (1.0 / np.sqrt(s))) @ u.T @ w


def _fastica_symmetric(z: np.ndarray, seed: int) -> tuple[np.ndarray, IcaStats]:
    """Symmetric fixed-point ICA with the cube nonlinearity on whitened data."""
    n_samples, n_comp = z.shape
    delta = float("nan")
    for attempt in range(ICA_RESTARTS):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), attempt]))
        w = _symmetric_decorrelation(rng.standard_normal((n_comp, n_comp)))
        for iteration in range(1, ICA_MAX_ITERATIONS + 1):
            proj = z @ w.T  # (n_samples, n_comp)
            w_new = (proj**3).T @ z / n_samples - 3.0 * np.mean(proj**2, axis=0)[:, None] * w
            w_new = _symmetric_decorrelation(w_new)
            delta = float(np.max(np.abs(np.abs(np.einsum("ij,ij->i", w_new, w)) - 1.0)))
            w = w_new
            if delta < ICA_TOLERANCE:
                return w, IcaStats(iterations=iteration, final_delta=delta, restarts=attempt)
    raise ConvergenceError(
        f"ICA did not converge within {ICA_MAX_ITERATIONS} iterations over "
        f"{ICA_RESTARTS} restarts (last delta={delta:.3e})"
    )


def learn_filters(patches: PatchSet, bit_count: int, seed: int):
    """Learn one channel's filter stack; returns (filters (n, L, L), IcaStats)."""
    L = patches.patch_side
    d = L * L
    n = int(bit_count)
    if n < 1:
        raise InputError(f"bit count must be >= 1, got {n}")
    if n > d - 1:
        raise NumericalError(
            f"bit count {n} exceeds usable rank {d - 1} for {L}x{L} patches "
            "(mean removal discards one dimension)"
        )
    x = np.asarray(patches.data, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != d:
        raise InputError(f"patch matrix shape {x.shape} inconsistent with L={L}")
    x = x - x.mean(axis=0)
    cov = x.T @ x / x.shape[0]
    evals, evecs = np.linalg.eigh(cov)  # ascending
    lead = evals[-n:][::-1]
    if lead[-1] <= max(evals[-1], 0.0) * 1e-10 + 1e-300:
        raise NumericalError(
            f"covariance rank too low for {n} filters (smallest kept eigenvalue {lead[-1]:.3e})"
        )
    basis = evecs[:, -n:][:, ::-1]  # (d, n), leading eigenvalue first
    whitener = basis / np.sqrt(lead)  # z = x @ whitener has identity covariance
    unmixing, stats = _fastica_symmetric(x @ whitener, seed)
    flat = unmixing @ whitener.T  # (n, d)
    flat = flat / np.linalg.norm(flat, axis=1, keepdims=True)
    for i in range(n):
        k = int(np.argmax(np.abs(flat[i])))
        if flat[i, k] < 0:
            flat[i] = -flat[i]
    return flat.reshape(n, L, L), stats


def learn_filter_bank(
    images,
    patch_side: int,
    bit_count: int,
    patch_count: int,
    seed: int,
    source_tag: str = "",
    stats_out: list | None = None,
) -> FilterBank:
    """Sample patches and learn filters for all three channels.

    The patch-sampling stream and the three per-channel ICA seeds are
    derived deterministically from ``seed``. When ``stats_out`` is given,
    one IcaStats per channel is appended to it.
    """
    patch_sets = sample_patches(images, patch_side, patch_count, _subseed(seed, 0))
    stacks = []
    for ch, patches in enumerate(patch_sets):
        filters, stats = learn_filters(patches, bit_count, _subseed(seed, 1 + ch))
        stacks.append(filters)
        if stats_out is not None:
            stats_out.append(stats)
    return FilterBank(
        patch_side=int(patch_side),
        bit_count=int(bit_count),
        filters=np.stack(stacks),
        learn_seed=int(seed),
        source_tag=source_tag,
    )


def bsif_encode(plane: np.ndarray, channel_filters: np.ndarray) -> CodeMap:
    """Correlate one plane with a channel's filters and binarize at zero.

    The plane is replicate-padded so the output map matches the input
    size; bit i is set when the correlation response of filter i is
    strictly positive.
    """
    p = np.asarray(plane, dtype=np.float64)
    f = np.asarray(channel_filters, dtype=np.float64)
    if p.ndim != 2:
        raise InputError(f"expected a 2-D plane, got shape {p.shape}")
    if f.ndim != 3 or f.shape[1] != f.shape[2]:
        raise InputError(f"expected filters of shape (n, L, L), got {f.shape}")
    n, L = f.shape[0], f.shape[1]
    if L % 2 != 1:
        raise InputError(f"filter side must be odd, got {L}")
    if p.shape[0] < L or p.shape[1] < L:
        raise InputError(f"plane {p.shape} smaller than filter side {L}")
    h, w = p.shape
    r = L // 2
    padded = np.pad(p, r, mode="edge")
    codes = np.zeros((h, w), dtype=np.int32)
    for i in range(n):
        acc = np.zeros((h, w), dtype=np.float64)
        filt = f[i]
        for u in range(L):
            for v in range(L):
                acc += padded[u : u + h, v : v + w] * filt[u, v]
        codes |= (acc > 0.0).astype(np.int32) << i
    return CodeMap(codes=codes, code_bits=n)


def ms_bsif(image: np.ndarray, banks) -> list[CodeMap]:
    """Multiscale color BSIF: one CodeMap per (channel, scale).

    Maps come back channel-major with filter sizes ascending inside each
    channel; 3 channels x len(banks) scales.
    """
    arr = validate_color_image(image)
    banks = sorted(banks, key=lambda b: b.patch_side)
    if not banks:
        raise InputError("need at least one filter bank")
    maps = []
    for ch in range(3):
        for bank in banks:
            maps.append(bsif_encode(arr[:, :, ch], bank.filters[ch]))
    return maps


# --- persistence -----------------------------------------------------------
#
# "KBSF" layout, little-endian:
#   magic 4s | version u32 | L u32 | n u32 | channels u32 (= 3) | seed u64
#   | 3*n*L*L float64 filter coefficients, channel-major C order
#   | tag_len u32 | tag UTF-8 bytes

_HEADER = struct.Struct("<4sIIIIQ")


def save_filter_bank(bank: FilterBank, path) -> None:
    if not 0 <= bank.learn_seed < 2**64:
        raise InputError(f"seed {bank.learn_seed} does not fit in u64")
    tag = bank.source_tag.encode("utf-8")
    blob = (
        _HEADER.pack(
            BANK_MAGIC, BANK_VERSION, bank.patch_side, bank.bit_count, 3, bank.learn_seed
        )
        + np.ascontiguousarray(bank.filters, dtype="<f8").tobytes()
        + struct.pack("<I", len(tag))
        + tag
    )
    atomic_write_bytes(path, blob)


def load_filter_bank(path) -> FilterBank:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise InputError(f"truncated filter bank file: {path}")
    magic, version, L, n, channels, seed = _HEADER.unpack_from(blob, 0)
    if magic != BANK_MAGIC:
        raise InputError(f"bad magic {magic!r} in {path} (expected {BANK_MAGIC!r})")
    if version != BANK_VERSION:
        raise InputError(f"unsupported filter bank version {version} in {path}")
    if channels != 3:
        raise InputError(f"expected 3 channels, file has {channels}")
    off = _HEADER.size
    n_coeff = 3 * n * L * L
    end = off + 8 * n_coeff
    if len(blob) < end + 4:
        raise InputError(f"truncated filter bank payload: {path}")
    filters = np.frombuffer(blob[off:end], dtype="<f8").reshape(3, n, L, L).copy()
    (tag_len,) = struct.unpack_from("<I", blob, end)
    tag_start = end + 4
    if len(blob) != tag_start + tag_len:
        raise InputError(f"trailing or missing bytes in filter bank file: {path}")
    tag = blob[tag_start : tag_start + tag_len].decode("utf-8")
    return FilterBank(
        patch_side=L, bit_count=n, filters=filters, learn_seed=seed, source_tag=tag
    )
