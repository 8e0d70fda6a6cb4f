"""Pair-supervised tensor discriminant projection (TXQDA-style).

The core per-mode step builds two scatter matrices from labeled pairs
(within-scatter from kin-pair differences, between-scatter from non-kin
differences, each normalized by its pair count), replaces both with
their matrix exponentials, and solves the generalized symmetric
eigenproblem ``exp_b w = lambda exp_w w`` through a Cholesky
factorization of ``exp_w``, keeping the eigenvectors of largest
eigenvalue. Exponentiation cures the small-sample singularity that
plain scatter ratios suffer from.

For two-mode feature tensors the fit alternates that step over the
modes: project along the other mode, unfold, update the mode's
projection. Mode 1 (the large spatial-histogram axis) is PCA-reduced
up front to keep the matrix exponential tractable.

Numerical safeguards (defaults below, overridable per fit):

* scatter spectra are clipped to [0, 50] before exponentiation so
  ``exp`` cannot overflow on large-scale inputs;
* a ridge of ``1e-6 * trace/d`` is added to ``exp_w`` when the scatters
  are exponentiated (not inside the eigensolver), so the solved system
  is exactly the one stored and eigen-residuals stay at machine level;
* modes of extent 1 keep the identity projection: a 1-wide mode can
  only rescale the projected tensor, which the cosine score ignores.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DegenerateInputError, InputError, NumericalError
from .features import FeatureTensor
from .fileio import atomic_write_bytes

DEFAULT_SPECTRUM_CLIP = (0.0, 50.0)
DEFAULT_RIDGE = 1e-6
DEFAULT_SWEEPS = 2
DEFAULT_PCA_CAP = 200

MODEL_MAGIC = b"KTXQ"
MODEL_VERSION = 1

_SYMMETRY_ATOL = 1e-9


@dataclass
class ScatterPair:
    """Pair-difference scatters and (after exponentiation) their exponentials."""

    s_b: np.ndarray
    s_w: np.ndarray
    exp_b: np.ndarray | None = None
    exp_w: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.s_b.shape[0]


@dataclass
class SubspaceModel:
    """Per-mode projections plus the optional mode-1 PCA pre-reduction."""

    projections: list  # mode k: (d_k, m_k) float64
    eigenvalues: list  # mode k: (m_k,) float64, descending
    pca_projection: np.ndarray | None = None
    pca_mean: np.ndarray | None = None
    iteration_count: int = 0
    fit_seed: int = 0

    def __post_init__(self):
        # canonical C-contiguous layout: keeps projection arithmetic
        # bit-identical between a fitted model and its reloaded copy
        self.projections = [np.ascontiguousarray(w, dtype=np.float64) for w in self.projections]
        self.eigenvalues = [np.ascontiguousarray(e, dtype=np.float64) for e in self.eigenvalues]
        if self.pca_projection is not None:
            self.pca_projection = np.ascontiguousarray(self.pca_projection, dtype=np.float64)
            self.pca_mean = np.ascontiguousarray(self.pca_mean, dtype=np.float64)

    @property
    def mode_dims(self) -> tuple:
        return tuple(w.shape[0] for w in self.projections)

    @property
    def output_dims(self) -> tuple:
        return tuple(w.shape[1] for w in self.projections)

    @property
    def input_mode1_dim(self) -> int:
        if self.pca_projection is not None:
            return self.pca_projection.shape[0]
        return self.projections[0].shape[0]


def compute_sild_scatters(pairs, dim: int | None = None) -> ScatterPair:
    """Scatter matrices from labeled (parent, child) vector pairs.

    Within-scatter averages ``(x_p - x_c)(x_p - x_c)^T`` over kin pairs,
    between-scatter does the same over non-kin pairs.
    """
    pos_diffs = []
    neg_diffs = []
    for x_p, x_c, is_kin in pairs:
        a = np.asarray(x_p, dtype=np.float64).ravel()
        b = np.asarray(x_c, dtype=np.float64).ravel()
        if a.shape != b.shape:
            raise InputError(f"pair vectors of mismatched length: {a.shape} vs {b.shape}")
        if dim is not None and a.size != dim:
            raise InputError(f"pair vector length {a.size} != expected {dim}")
        (pos_diffs if is_kin else neg_diffs).append(a - b)
    if not pos_diffs:
        raise DegenerateInputError("no kin pairs: within-scatter undefined")
    if not neg_diffs:
        raise DegenerateInputError("no non-kin pairs: between-scatter undefined")
    dp = np.stack(pos_diffs, axis=1)
    dn = np.stack(neg_diffs, axis=1)
    s_w = dp @ dp.T / dp.shape[1]
    s_b = dn @ dn.T / dn.shape[1]
    return ScatterPair(s_b=(s_b + s_b.T) / 2.0, s_w=(s_w + s_w.T) / 2.0)


def matrix_exp_sym(matrix: np.ndarray, spectrum_clip=None) -> np.ndarray:
    """exp of a symmetric matrix via eigendecomposition, result symmetrized.

    ``spectrum_clip=(lo, hi)`` clamps the eigenvalues before
    exponentiation; the default applies no clipping.
    """
    s = np.asarray(matrix, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise InputError(f"expected a square matrix, got shape {s.shape}")
    if np.max(np.abs(s - s.T)) > _SYMMETRY_ATOL:
        raise InputError("matrix is not symmetric within 1e-9")
    sym = (s + s.T) / 2.0
    evals, q = np.linalg.eigh(sym)
    if spectrum_clip is not None:
        evals = np.clip(evals, spectrum_clip[0], spectrum_clip[1])
    e = (q * np.exp(evals)) @ q.T
    return (e + e.T) / 2.0


def exponentiate_scatters(
    scatters: ScatterPair,
    spectrum_clip=DEFAULT_SPECTRUM_CLIP,
    ridge: float = DEFAULT_RIDGE,
) -> ScatterPair:
    """Populate exp_b / exp_w; exp_w receives the stabilizing ridge here so
    the eigensolver later works on exactly the stored matrices."""
    exp_b = matrix_exp_sym(scatters.s_b, spectrum_clip)
    exp_w = matrix_exp_sym(scatters.s_w, spectrum_clip)
    if ridge:
        d = exp_w.shape[0]
        exp_w = exp_w + (ridge * np.trace(exp_w) / d) * np.eye(d)
    return ScatterPair(s_b=scatters.s_b, s_w=scatters.s_w, exp_b=exp_b, exp_w=exp_w)


def solve_eda(scatters: ScatterPair, m: int):
    """Top-m generalized eigenvectors of ``exp_b w = lambda exp_w w``.

    Returns (W, eigenvalues): W is (d, m) with columns normalized so
    ``w^T exp_w w = 1``, eigenvalues descending.
    """
    if scatters.exp_b is None or scatters.exp_w is None:
        raise InputError("scatters have not been exponentiated")
    d = scatters.dim
    if not 1 <= m <= d:
        raise InputError(f"m must be in [1, {d}], got {m}")
    try:
        chol = np.linalg.cholesky(scatters.exp_w)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("within-scatter exponential is singular despite ridge") from exc
    inv_chol = scipy.linalg.solve_triangular(chol, np.eye(d), lower=True)
    reduced = inv_chol @ scatters.exp_b @ inv_chol.T
    reduced = (reduced + reduced.T) / 2.0
    evals, vecs = np.linalg.eigh(reduced)  # ascending
    order = np.argsort(evals)[::-1][:m]
    w = inv_chol.T @ vecs[:, order]
    # deterministic column signs
    for j in range(m):
        k = int(np.argmax(np.abs(w[:, j])))
        if w[k, j] < 0:
            w[:, j] = -w[:, j]
    return w, evals[order].copy()


def pca_reduce(vectors, target_dim: int):
    """Mean-centered principal projection keeping the top components.

    Returns (components, mean): components is (d, target_dim) with
    orthonormal columns ordered by descending explained variance.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise InputError(f"expected an (n_samples, dim) matrix, got shape {x.shape}")
    n, d = x.shape
    p = int(target_dim)
    if p < 1:
        raise InputError(f"target dim must be >= 1, got {p}")
    if p > min(n - 1, d):
        raise InputError(f"target dim {p} exceeds min(samples - 1, dim) = {min(n - 1, d)}")
    mean = x.mean(axis=0)
    xc = x - mean
    if d <= n:
        cov = xc.T @ xc / n
        cov = (cov + cov.T) / 2.0
        evals, evecs = scipy.linalg.eigh(cov, subset_by_index=[d - p, d - 1])
        evals = evals[::-1]
        components = evecs[:, ::-1]
    else:
        gram = xc @ xc.T / n
        gram = (gram + gram.T) / 2.0
        evals, u = scipy.linalg.eigh(gram, subset_by_index=[n - p, n - 1])
        evals = evals[::-1]
        u = u[:, ::-1]
        scale = np.sqrt(np.maximum(evals, 0.0) * n)
        if scale[-1] <= 0:
            raise NumericalError(f"target dim {p} exceeds the numerical rank of the data")
        components = xc.T @ u / scale
    if evals[-1] <= max(evals[0], 0.0) * 1e-12 + 1e-300:
        raise NumericalError(f"target dim {p} exceeds the numerical rank of the data")
    for j in range(p):
        k = int(np.argmax(np.abs(components[:, j])))
        if components[k, j] < 0:
            components[:, j] = -components[:, j]
    return components, mean


def _as_tensor_array(t) -> np.ndarray:
    if isinstance(t, FeatureTensor):
        return t.data
    arr = np.asarray(t, dtype=np.float64)
    if arr.ndim != 2:
        raise InputError(f"tensors must be 2-D, got shape {arr.shape}")
    return arr


def _mode_pairs(pairs_reduced, projections, mode):
    """Unfold partially projected pair tensors along ``mode`` into column pairs."""
    out = []
    for tp, tc, is_kin in pairs_reduced:
        if mode == 0:
            ap = tp @ projections[1]
            ac = tc @ projections[1]
        else:
            ap = (projections[0].T @ tp).T
            ac = (projections[0].T @ tc).T
        for j in range(ap.shape[1]):
            out.append((ap[:, j], ac[:, j], is_kin))
    return out


def txqda_fit(
    tensor_pairs,
    m_per_mode,
    iterations: int = DEFAULT_SWEEPS,
    pca_cap: int = DEFAULT_PCA_CAP,
    spectrum_clip=DEFAULT_SPECTRUM_CLIP,
    ridge: float = DEFAULT_RIDGE,
    seed: int = 0,
) -> SubspaceModel:
    """Alternating per-mode discriminant fit over labeled tensor pairs.

    ``tensor_pairs`` is a sequence of (parent_tensor, child_tensor,
    is_kin) triples sharing one shape. Mode projections start at the
    identity and each of ``iterations`` sweeps updates every mode from
    the scatter -> exponential -> generalized-eigen chain. Mode 1 is
    PCA-pre-reduced to min(d1, n_pairs - 1, pca_cap) beforehand;
    when that target equals d1 the reduction is skipped entirely.
    """
    triples = [(_as_tensor_array(tp), _as_tensor_array(tc), bool(y)) for tp, tc, y in tensor_pairs]
    if not triples:
        raise InputError("no tensor pairs given")
    shape = triples[0][0].shape
    for tp, tc, _ in triples:
        if tp.shape != shape or tc.shape != shape:
            raise InputError(f"inconsistent tensor shapes: {tp.shape}/{tc.shape} vs {shape}")
    labels = {y for _, _, y in triples}
    if labels != {True, False}:
        raise DegenerateInputError("need both kin and non-kin pairs to fit")
    if iterations < 0:
        raise InputError(f"iterations must be >= 0, got {iterations}")
    d1, d2 = shape
    n_pairs = len(triples)

    pca_projection = None
    pca_mean = None
    target = min(d1, n_pairs - 1, int(pca_cap))
    if target < d1:
        columns = np.concatenate(
            [np.concatenate([tp.T, tc.T], axis=0) for tp, tc, _ in triples], axis=0
        )
        pca_projection, pca_mean = pca_reduce(columns, target)
        triples = [
            (
                pca_projection.T @ (tp - pca_mean[:, None]),
                pca_projection.T @ (tc - pca_mean[:, None]),
                y,
            )
            for tp, tc, y in triples
        ]
        d1 = target

    dims = (d1, d2)
    m_per_mode = tuple(int(m) for m in m_per_mode)
    if len(m_per_mode) != 2:
        raise InputError(f"expected m for 2 modes, got {m_per_mode}")
    for k in range(2):
        if not 1 <= m_per_mode[k] <= dims[k]:
            raise InputError(f"m for mode {k + 1} must be in [1, {dims[k]}], got {m_per_mode[k]}")

    projections = [np.eye(d1), np.eye(d2)]
    eigenvalues = [np.ones(d1), np.ones(d2)]
    for _sweep in range(iterations):
        for mode in range(2):
            if dims[mode] == 1:
                continue  # a 1-wide mode can only rescale; cosine ignores it
            pairs = _mode_pairs(triples, projections, mode)
            scatters = exponentiate_scatters(
                compute_sild_scatters(pairs, dim=dims[mode]),
                spectrum_clip=spectrum_clip,
                ridge=ridge,
            )
            w, evals = solve_eda(scatters, m_per_mode[mode])
            projections[mode] = w
            eigenvalues[mode] = evals

    return SubspaceModel(
        projections=projections,
        eigenvalues=[np.asarray(e, dtype=np.float64) for e in eigenvalues],
        pca_projection=pca_projection,
        pca_mean=pca_mean,
        iteration_count=int(iterations),
        fit_seed=int(seed),
    )


def project(model: SubspaceModel, tensor) -> np.ndarray:
    """Apply the PCA pre-reduction (if any) and both mode projections,
    then flatten column-major to a vector of length prod(m_k)."""
    x = _as_tensor_array(tensor)
    if x.shape[0] != model.input_mode1_dim or x.shape[1] != model.projections[1].shape[0]:
        raise InputError(
            f"tensor shape {x.shape} does not match model "
            f"({model.input_mode1_dim}, {model.projections[1].shape[0]})"
        )
    if model.pca_projection is not None:
        x = model.pca_projection.T @ (x - model.pca_mean[:, None])
    z = model.projections[0].T @ x @ model.projections[1]
    return z.ravel(order="F")


def eigen_residual(scatters: ScatterPair, w: np.ndarray, eigenvalues: np.ndarray) -> float:
    """Max-norm residual of the generalized eigensystem; diagnostic."""
    r = scatters.exp_b @ w - scatters.exp_w @ w @ np.diag(eigenvalues)
    return float(np.max(np.abs(r)))


# --- persistence -----------------------------------------------------------
#
# "KTXQ" layout, little-endian:
#   magic 4s | version u32 | mode_count u32 | iteration_count u32
#   | per mode: d_k u32, m_k u32, d_k*m_k float64 row-major
#   | pca flag u8; if 1: d u32, p u32, d*p float64 row-major, d float64 mean
#   | per mode: m_k float64 eigenvalues
#   | fit seed u64

_MODEL_HEADER = struct.Struct("<4sIII")


def save_model(model: SubspaceModel, path) -> None:
    if not 0 <= model.fit_seed < 2**64:
        raise InputError(f"seed {model.fit_seed} does not fit in u64")
    parts = [
        _MODEL_HEADER.pack(
            MODEL_MAGIC, MODEL_VERSION, len(model.projections), model.iteration_count
        )
    ]
    for w in model.projections:
        parts.append(struct.pack("<II", w.shape[0], w.shape[1]))
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
    if model.pca_projection is not None:
        d, p = model.pca_projection.shape
        parts.append(struct.pack("<BII", 1, d, p))
        parts.append(np.ascontiguousarray(model.pca_projection, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(model.pca_mean, dtype="<f8").tobytes())
    else:
        parts.append(struct.pack("<B", 0))
    for w, evals in zip(model.projections, model.eigenvalues):
        if evals.shape != (w.shape[1],):
            raise InputError(
                f"eigenvalue vector {evals.shape} inconsistent with projection {w.shape}"
            )
        parts.append(np.ascontiguousarray(evals, dtype="<f8").tobytes())
    parts.append(struct.pack("<Q", model.fit_seed))
    atomic_write_bytes(path, b"".join(parts))


def load_model(path) -> SubspaceModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _MODEL_HEADER.size:
        raise InputError(f"truncated model file: {path}")
    magic, version, mode_count, iteration_count = _MODEL_HEADER.unpack_from(blob, 0)
    if magic != MODEL_MAGIC:
        raise InputError(f"bad magic {magic!r} in {path} (expected {MODEL_MAGIC!r})")
    if version != MODEL_VERSION:
        raise InputError(f"unsupported model version {version} in {path}")
    off = _MODEL_HEADER.size

    def take(n):
        nonlocal off
        if off + n > len(blob):
            raise InputError(f"truncated model payload: {path}")
        chunk = blob[off : off + n]
        off += n
        return chunk

    projections = []
    for _ in range(mode_count):
        d_k, m_k = struct.unpack("<II", take(8))
        w = np.frombuffer(take(8 * d_k * m_k), dtype="<f8").reshape(d_k, m_k).copy()
        projections.append(w)
    (flag,) = struct.unpack("<B", take(1))
    pca_projection = None
    pca_mean = None
    if flag == 1:
        d, p = struct.unpack("<II", take(8))
        pca_projection = np.frombuffer(take(8 * d * p), dtype="<f8").reshape(d, p).copy()
        pca_mean = np.frombuffer(take(8 * d), dtype="<f8").copy()
    elif flag != 0:
        raise InputError(f"bad PCA flag {flag} in {path}")
    eigenvalues = []
    for w in projections:
        eigenvalues.append(np.frombuffer(take(8 * w.shape[1]), dtype="<f8").copy())
    (seed,) = struct.unpack("<Q", take(8))
    if off != len(blob):
        raise InputError(f"trailing bytes in model file: {path}")
    return SubspaceModel(
        projections=projections,
        eigenvalues=eigenvalues,
        pca_projection=pca_projection,
        pca_mean=pca_mean,
        iteration_count=iteration_count,
        fit_seed=seed,
    )
