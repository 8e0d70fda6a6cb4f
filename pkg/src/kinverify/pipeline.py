"""Per-fold training and scoring engine used by the cross-validation harness.

Everything a fold learns (patches, filter banks, PCA, mode projections,
decision threshold) is derived from training-fold images only; the fold
audit records the image hashes consumed by each learning stage so a
leakage check can compare them against the test-fold hashes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import bsif, features, lbp, scoring, subspace
from .config import RunConfig
from .errors import InputError
from .fileio import sha256_file
from .imaging import CropWindow, center_square_window, load_image, preprocess

log = logging.getLogger("kinverify")


def preprocess_file(path, crop: CropWindow | None = None) -> np.ndarray:
    """Load one image file and run the canonical crop + resample."""
    img = load_image(path)
    window = crop if crop is not None else center_square_window(img)
    return preprocess(img, window)


class ImageStore:
    """Caches preprocessed images and content hashes keyed by path."""

    def __init__(self, crop_map: dict | None = None):
        self.crop_map = crop_map or {}
        self._images: dict = {}
        self._hashes: dict = {}

    def image(self, path) -> np.ndarray:
        key = str(path)
        if key not in self._images:
            self._images[key] = preprocess_file(key, self.crop_map.get(key))
        return self._images[key]

    def content_hash(self, path) -> str:
        key = str(path)
        if key not in self._hashes:
            self._hashes[key] = sha256_file(key)
        return self._hashes[key]

    def hashes(self, paths) -> list:
        return sorted({self.content_hash(p) for p in paths})


def active_streams(config: RunConfig) -> list:
    """Descriptor streams the configuration asks for.

    Feature fusion concatenates all code maps into one tensor; score
    fusion models BSIF and LBP separately and averages their scores.
    """
    have_bsif = bool(config.bsif_sizes)
    have_lbp = bool(config.lbp_radii)
    if config.fusion == "feature" or not (have_bsif and have_lbp):
        return ["fused"]
    return ["bsif", "lbp"]


def method_label(config: RunConfig) -> str:
    have_bsif = bool(config.bsif_sizes)
    have_lbp = bool(config.lbp_radii)
    if have_bsif and have_lbp:
        return f"Color MS-BSIF Learning + MS-LBP ({config.fusion} fusion)"
    if have_bsif:
        return "Color MS-BSIF Learning"
    return "Color MS-LBP"


def image_tensors(image: np.ndarray, banks, config: RunConfig) -> dict:
    """Per-stream feature tensors for one preprocessed image."""
    bsif_maps = bsif.ms_bsif(image, banks) if banks else []
    lbp_maps = (
        lbp.ms_lbp(image, radii=config.lbp_radii, neighbors=config.lbp_neighbors)
        if config.lbp_radii
        else []
    )
    grid = config.grid()
    out = {}
    for name in active_streams(config):
        if name == "fused":
            maps = bsif_maps + lbp_maps
        elif name == "bsif":
            maps = bsif_maps
        else:
            maps = lbp_maps
        out[name] = features.assemble_tensor(maps, grid=grid)
    return out


def learn_fold_banks(train_images, config: RunConfig, fold: int, stats_sink=None) -> list:
    """One filter bank per configured scale, trained on the given images."""
    banks = []
    for scale in sorted(config.bsif_sizes):
        seed = int(
            np.random.SeedSequence(
                [config.seed_patch, config.seed_ica, fold, scale]
            ).generate_state(1)[0]
        )
        stats: list = []
        bank = bsif.learn_filter_bank(
            train_images,
            patch_side=scale,
            bit_count=config.bsif_bits,
            patch_count=config.patch_count,
            seed=seed,
            source_tag=f"fold={fold} scale={scale}",
            stats_out=stats,
        )
        banks.append(bank)
        if stats_sink is not None:
            stats_sink.append(
                {
                    "fold": fold,
                    "scale": scale,
                    "channels": [
                        {"iterations": s.iterations, "final_delta": s.final_delta}
                        for s in stats
                    ],
                }
            )
    return banks


@dataclass
class FoldOutcome:
    fold: int
    threshold: float
    accuracy: float
    test_rows: list = field(default_factory=list)
    stage_hashes: dict = field(default_factory=dict)
    test_hashes: list = field(default_factory=list)
    model_dims: dict = field(default_factory=dict)
    bank_stats: list = field(default_factory=list)


def pair_paths(pairs) -> list:
    out = set()
    for p in pairs:
        out.add(p.parent_path)
        out.add(p.child_path)
    return sorted(out)


def evaluate_fold(
    fold: int,
    pairs,
    config: RunConfig,
    store: ImageStore,
    global_banks=None,
) -> FoldOutcome:
    """Train on every other fold, evaluate on ``fold``."""
    train_pairs = [p for p in pairs if p.fold != fold]
    test_pairs = [p for p in pairs if p.fold == fold]
    if not train_pairs or not test_pairs:
        raise InputError(f"fold {fold} leaves an empty train or test partition")
    train_paths = pair_paths(train_pairs)
    test_only_paths = sorted(set(pair_paths(test_pairs)) - set(train_paths))

    outcome = FoldOutcome(fold=fold, threshold=float("nan"), accuracy=float("nan"))
    outcome.test_hashes = store.hashes(pair_paths(test_pairs))

    if config.bsif_sizes:
        if config.per_fold_banks:
            train_images = [store.image(p) for p in train_paths]
            banks = learn_fold_banks(
                train_images, config, fold, stats_sink=outcome.bank_stats
            )
            outcome.stage_hashes["patch_sampling"] = store.hashes(train_paths)
            outcome.stage_hashes["filter_learning"] = store.hashes(train_paths)
        else:
            if not global_banks:
                raise InputError(
                    "no filter banks available: run `kinverify learn-filters` or "
                    "enable per_fold_banks"
                )
            banks = global_banks
            outcome.stage_hashes["patch_sampling"] = []
            outcome.stage_hashes["filter_learning"] = []
    else:
        banks = []

    tensors = {}
    for path in train_paths + test_only_paths:
        tensors[path] = image_tensors(store.image(path), banks, config)

    train_hashes = store.hashes(train_paths)
    outcome.stage_hashes["pca"] = train_hashes
    outcome.stage_hashes["txqda"] = train_hashes
    outcome.stage_hashes["threshold"] = train_hashes

    models = {}
    for stream in active_streams(config):
        triples = [
            (tensors[p.parent_path][stream], tensors[p.child_path][stream], p.is_kin)
            for p in train_pairs
        ]
        d1 = triples[0][0].mode1_dim
        d2 = triples[0][0].mode2_dim
        reduced_d1 = min(d1, len(triples) - 1, config.pca_cap)
        m1 = min(config.m_mode1, reduced_d1)
        m2 = min(config.m_mode2, d2)
        models[stream] = subspace.txqda_fit(
            triples,
            m_per_mode=(m1, m2),
            iterations=config.sweeps,
            pca_cap=config.pca_cap,
            seed=config.seed_ica,
        )
        outcome.model_dims[stream] = {
            "mode_dims": list(models[stream].mode_dims),
            "output_dims": list(models[stream].output_dims),
        }

    def pair_score(p) -> float:
        per_stream = [
            scoring.cosine_score(
                subspace.project(models[s], tensors[p.parent_path][s]),
                subspace.project(models[s], tensors[p.child_path][s]),
            )
            for s in active_streams(config)
        ]
        return scoring.fuse_scores(per_stream)

    train_scores = np.array([pair_score(p) for p in train_pairs])
    train_labels = np.array([p.is_kin for p in train_pairs], dtype=bool)
    threshold = scoring.choose_threshold(train_scores, train_labels)
    outcome.threshold = threshold.value

    correct = 0
    for p in test_pairs:
        s = pair_score(p)
        d = scoring.decide(s, threshold)
        correct += int(d == p.is_kin)
        outcome.test_rows.append(
            {
                "relation": p.relation,
                "score": float(s),
                "is_kin": bool(p.is_kin),
                "decision": bool(d),
                "fold": fold,
            }
        )
    outcome.accuracy = 100.0 * correct / len(test_pairs)
    log.info("fold %d: %d train / %d test pairs, accuracy %.2f%%",
             fold, len(train_pairs), len(test_pairs), outcome.accuracy)
    return outcome
