"""Cosine verification scores, threshold selection, and decisions.

Tie rules are fixed explicitly: a score equal to the threshold decides
kin, and when several candidate thresholds reach the best training
accuracy the largest one wins.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, InputError


@dataclass(frozen=True)
class Threshold:
    value: float
    source: str = "accuracy-max"


def cosine_score(z1, z2) -> float:
    """Inner product over the product of norms, clamped to [-1, 1]."""
    a = np.asarray(z1, dtype=np.float64).ravel()
    b = np.asarray(z2, dtype=np.float64).ravel()
    if a.size != b.size:
        raise InputError(f"vectors of mismatched length: {a.size} vs {b.size}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine score undefined for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def choose_threshold(scores, labels) -> Threshold:
    """Midpoint between adjacent sorted scores maximizing training accuracy."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if s.shape != y.shape or s.ndim != 1:
        raise InputError(f"scores/labels shape mismatch: {s.shape} vs {y.shape}")
    if y.all() or not y.any():
        raise DegenerateInputError("threshold selection needs both kin and non-kin scores")
    ordered = np.sort(s)
    candidates = (ordered[:-1] + ordered[1:]) / 2.0
    best_t = candidates[0]
    best_acc = -1.0
    for t in candidates:
        acc = float(np.mean((s >= t) == y))
        if acc >= best_acc:  # >=: ties break toward the larger threshold
            best_acc = acc
            best_t = t
    return Threshold(value=float(best_t), source="accuracy-max")


def decide(score: float, threshold) -> bool:
    """True (kin) iff score >= threshold."""
    t = threshold.value if isinstance(threshold, Threshold) else float(threshold)
    return bool(score >= t)


def fuse_scores(scores, weights=None) -> float:
    """Weighted arithmetic mean of scores; uniform weights by default."""
    s = np.asarray(list(scores), dtype=np.float64)
    if s.size == 0:
        raise DegenerateInputError("cannot fuse an empty score list")
    if weights is None:
        return float(s.mean())
    w = np.asarray(list(weights), dtype=np.float64)
    if w.shape != s.shape:
        raise InputError(f"weights shape {w.shape} != scores shape {s.shape}")
    if (w < 0).any():
        raise InputError("weights must be non-negative")
    total = w.sum()
    if total <= 0:
        raise InputError("weights must sum to a positive value")
    return float((s * w).sum() / total)
