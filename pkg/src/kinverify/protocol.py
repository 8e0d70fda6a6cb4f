"""Dataset manifests, negative-pair generation, cross-validation, metrics,
and a synthetic-kin generator for testing without restricted face data.

Manifests are UTF-8 CSV with header
``relation,parent,child,label,fold,crop_x,crop_y,crop_side`` (the crop
columns are optional; a row's window applies to both of its images).
Image paths are resolved relative to the manifest's directory. Fold
values may be left blank, in which case seeded stratified folds are
assigned. Negative pairs, when absent from the manifest, are generated
as a seeded derangement of child images within each (relation, fold)
cell so no parent is ever paired with its own child.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import DegenerateInputError, InputError
from .imaging import CANONICAL_SIDE, CropWindow, _resample_plane
from .pipeline import ImageStore, active_streams, evaluate_fold, method_label
from .fileio import atomic_write_text

log = logging.getLogger("kinverify")

RELATIONS = ("father-son", "father-daughter", "mother-son", "mother-daughter")

# Published mix of the four relations in the 143-pair benchmark protocol.
REFERENCE_RELATION_MIX = {
    "father-son": 0.40,
    "father-daughter": 0.22,
    "mother-son": 0.13,
    "mother-daughter": 0.25,
}

LABEL_KIN = "kin"
LABEL_NONKIN = "non-kin"
N_FOLDS = 5

MANIFEST_COLUMNS = ("relation", "parent", "child", "label", "fold")
CROP_COLUMNS = ("crop_x", "crop_y", "crop_side")


@dataclass(frozen=True)
class PairRecord:
    relation: str
    parent_path: str
    child_path: str
    is_kin: bool
    fold: int | None = None
    crop: CropWindow | None = None


@dataclass
class Metrics:
    mean_accuracy: float
    fold_accuracies: list
    per_relation: dict
    overall_accuracy: float
    eer: float
    roc: list
    n_pairs: int

    def to_dict(self) -> dict:
        return {
            "mean_accuracy": self.mean_accuracy,
            "fold_accuracies": self.fold_accuracies,
            "per_relation": self.per_relation,
            "overall_accuracy": self.overall_accuracy,
            "eer": self.eer,
            "roc": [[float(a), float(b)] for a, b in self.roc],
            "n_pairs": self.n_pairs,
        }


# --- manifest --------------------------------------------------------------


def load_manifest(path, require_files: bool = True) -> list:
    """Read and validate a pair manifest; paths come back absolute."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"manifest not found: {path}")
    base = path.parent
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise InputError(f"empty manifest: {path}")
        missing = [c for c in MANIFEST_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise InputError(f"manifest {path} lacks required columns: {missing}")
        has_crop = all(c in reader.fieldnames for c in CROP_COLUMNS)
        for lineno, row in enumerate(reader, 2):
            relation = (row["relation"] or "").strip()
            if relation not in RELATIONS:
                raise InputError(f"{path}:{lineno}: unknown relation {relation!r}")
            label = (row["label"] or "").strip()
            if label not in (LABEL_KIN, LABEL_NONKIN):
                raise InputError(f"{path}:{lineno}: label must be kin/non-kin, got {label!r}")
            raw_fold = (row["fold"] or "").strip()
            fold = None
            if raw_fold:
                try:
                    fold = int(raw_fold)
                except ValueError:
                    raise InputError(f"{path}:{lineno}: fold must be an integer") from None
                if not 1 <= fold <= N_FOLDS:
                    raise InputError(f"{path}:{lineno}: fold {fold} outside [1, {N_FOLDS}]")
            parent = str((base / row["parent"].strip()).resolve())
            child = str((base / row["child"].strip()).resolve())
            if parent == child:
                raise InputError(f"{path}:{lineno}: parent and child paths must differ")
            if require_files:
                for p in (parent, child):
                    if not Path(p).is_file():
                        raise InputError(f"{path}:{lineno}: missing image file {p}")
            crop = None
            if has_crop and (row["crop_x"] or "").strip():
                try:
                    crop = CropWindow(
                        x=int(row["crop_x"]), y=int(row["crop_y"]), side=int(row["crop_side"])
                    )
                except (ValueError, TypeError):
                    raise InputError(f"{path}:{lineno}: malformed crop fields") from None
            records.append(
                PairRecord(
                    relation=relation,
                    parent_path=parent,
                    child_path=child,
                    is_kin=(label == LABEL_KIN),
                    fold=fold,
                    crop=crop,
                )
            )
    if not records:
        raise InputError(f"manifest has no pair rows: {path}")
    return records


def relation_distribution(records) -> dict:
    """Fraction of positive pairs per relation (reported against the
    published benchmark mix, which is what REFERENCE_RELATION_MIX holds)."""
    positives = [r for r in records if r.is_kin]
    if not positives:
        raise DegenerateInputError("manifest has no positive pairs")
    out = {}
    for rel in RELATIONS:
        out[rel] = sum(1 for r in positives if r.relation == rel) / len(positives)
    return out


def crop_window_map(records) -> dict:
    """Per-image crop windows collected from manifest rows.

    A row's window applies to both of its images; conflicting windows
    for one image are an error.
    """
    crops: dict = {}
    for r in records:
        if r.crop is None:
            continue
        for p in (r.parent_path, r.child_path):
            if p in crops and crops[p] != r.crop:
                raise InputError(f"conflicting crop windows for image {p}")
            crops[p] = r.crop
    return crops


# --- folds and negatives ---------------------------------------------------


def assign_folds(records, seed: int, k: int = N_FOLDS) -> list:
    """Seeded stratified fold assignment for records lacking folds.

    Records are shuffled within each relation and split into k
    contiguous chunks, so every (relation, fold) cell is as balanced
    as the relation's size allows.
    """
    if any(r.fold is not None for r in records):
        if all(r.fold is not None for r in records):
            return list(records)
        raise InputError("manifest mixes assigned and missing folds")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    out = [None] * len(records)
    order = sorted(range(len(records)), key=lambda i: (records[i].relation,
                                                       records[i].parent_path,
                                                       records[i].child_path))
    by_rel: dict = {}
    for i in order:
        by_rel.setdefault(records[i].relation, []).append(i)
    for rel in sorted(by_rel):
        idx = by_rel[rel]
        perm = rng.permutation(len(idx))
        for j, pos in enumerate(perm):
            fold = 1 + (j * k) // len(idx)
            out[idx[pos]] = replace(records[idx[pos]], fold=fold)
    return out


def generate_negatives(positives, seed: int) -> list:
    """One non-kin pair per positive: a seeded derangement of child images
    within each (relation, fold) cell."""
    for r in positives:
        if not r.is_kin:
            raise InputError("generate_negatives expects positive pairs only")
        if r.fold is None:
            raise InputError("assign folds before generating negatives")
    cells: dict = {}
    for r in positives:
        cells.setdefault((r.relation, r.fold), []).append(r)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    negatives = []
    for key in sorted(cells):
        group = cells[key]
        if len(group) < 2:
            raise DegenerateInputError(
                f"cannot derange a single pair in cell (relation={key[0]}, fold={key[1]})"
            )
        children = [r.child_path for r in group]
        perm = None
        for _ in range(10000):
            cand = rng.permutation(len(group))
            if all(children[cand[i]] != children[i] for i in range(len(group))):
                perm = cand
                break
        if perm is None:
            # duplicate-heavy cells may admit no derangement by path
            raise DegenerateInputError(
                f"no derangement found for cell (relation={key[0]}, fold={key[1]})"
            )
        for i, r in enumerate(group):
            negatives.append(
                PairRecord(
                    relation=r.relation,
                    parent_path=r.parent_path,
                    child_path=children[perm[i]],
                    is_kin=False,
                    fold=r.fold,
                    crop=None,
                )
            )
    return negatives


def validate_fold_split(pairs, k: int = N_FOLDS) -> None:
    """Folds must partition the pairs, be non-empty, and hold equally many
    positives and negatives each."""
    by_fold: dict = {}
    for p in pairs:
        if p.fold is None or not 1 <= p.fold <= k:
            raise InputError(f"pair with invalid fold: {p.fold}")
        by_fold.setdefault(p.fold, []).append(p)
    for fold in range(1, k + 1):
        group = by_fold.get(fold, [])
        if not group:
            raise InputError(f"fold {fold} is empty")
        pos = sum(1 for p in group if p.is_kin)
        if pos * 2 != len(group):
            raise InputError(
                f"fold {fold} is unbalanced: {pos} positive vs {len(group) - pos} negative"
            )


def shuffle_pair_labels(pairs, seed: int) -> list:
    """Permute kin labels within each fold; a negative control that keeps
    the fold balance intact."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    out = list(pairs)
    by_fold: dict = {}
    for i, p in enumerate(out):
        by_fold.setdefault(p.fold, []).append(i)
    for fold in sorted(by_fold):
        idx = by_fold[fold]
        labels = [out[i].is_kin for i in idx]
        perm = rng.permutation(len(idx))
        for j, i in enumerate(idx):
            out[i] = replace(out[i], is_kin=labels[perm[j]])
    return out


# --- metrics ---------------------------------------------------------------


def roc_curve(scores, labels) -> list:
    """(FAR, TPR) points from thresholds swept over the unique scores,
    starting at (0, 0) and ending at (1, 1)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    pos = s[y]
    neg = s[~y]
    if pos.size == 0 or neg.size == 0:
        raise DegenerateInputError("ROC needs both kin and non-kin scores")
    points = [(0.0, 0.0)]
    for t in np.unique(s)[::-1]:
        far = float(np.mean(neg >= t))
        tpr = float(np.mean(pos >= t))
        points.append((far, tpr))
    return points


def equal_error_rate(roc_points) -> float:
    """Percent EER: linear interpolation at the FAR = FRR crossing."""
    far = np.array([p[0] for p in roc_points])
    frr = 1.0 - np.array([p[1] for p in roc_points])
    diff = far - frr
    for k in range(len(diff)):
        if diff[k] >= 0.0:
            if k == 0 or diff[k] == 0.0:
                return 100.0 * far[k]
            span = diff[k] - diff[k - 1]
            alpha = -diff[k - 1] / span
            return 100.0 * (far[k - 1] + alpha * (far[k] - far[k - 1]))
    return 100.0 * far[-1]


def compute_metrics(scores, labels, relations, decisions, folds=None) -> Metrics:
    """Accuracy of the supplied decisions plus threshold-sweep ROC and EER.

    When ``folds`` is given, mean accuracy is the mean of per-fold
    accuracies; otherwise it equals the overall accuracy.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    d = np.asarray(decisions, dtype=bool)
    rels = list(relations)
    if not (len(s) == len(y) == len(d) == len(rels)):
        raise InputError("scores/labels/relations/decisions are not aligned")
    if y.all() or not y.any():
        raise DegenerateInputError("metrics need both kin and non-kin pairs")
    overall = 100.0 * float(np.mean(d == y))
    per_relation = {}
    for rel in sorted(set(rels)):
        mask = np.array([r == rel for r in rels])
        per_relation[rel] = 100.0 * float(np.mean(d[mask] == y[mask]))
    if folds is not None:
        f = np.asarray(list(folds))
        fold_accuracies = []
        for fold in sorted(set(f.tolist())):
            mask = f == fold
            fold_accuracies.append(100.0 * float(np.mean(d[mask] == y[mask])))
        mean_accuracy = float(np.mean(fold_accuracies))
    else:
        fold_accuracies = [overall]
        mean_accuracy = overall
    roc = roc_curve(s, y)
    return Metrics(
        mean_accuracy=mean_accuracy,
        fold_accuracies=fold_accuracies,
        per_relation=per_relation,
        overall_accuracy=overall,
        eer=equal_error_rate(roc),
        roc=roc,
        n_pairs=int(len(s)),
    )


# --- synthetic data --------------------------------------------------------


def _smooth_field(rng, grid: int = 16) -> np.ndarray:
    """Standardized low-frequency 64x64x3 texture field.

    The coarse values are cubed so the field is heavy-tailed like
    natural image patches; filter learning needs non-Gaussian patch
    statistics (a Gaussian field leaves the ICA rotation undetermined).
    """
    coarse = rng.standard_normal((grid, grid, 3)) ** 3
    field_ = np.stack(
        [_resample_plane(coarse[:, :, c], CANONICAL_SIDE, CANONICAL_SIDE) for c in range(3)],
        axis=-1,
    )
    return (field_ - field_.mean()) / field_.std()


def _basis_combination(rng, basis: np.ndarray) -> np.ndarray:
    """Standardized sparse combination of the dataset's texture basis."""
    coeff = rng.standard_normal(basis.shape[0]) ** 3
    field_ = np.tensordot(coeff, basis, axes=1)
    return (field_ - field_.mean()) / field_.std()


def synth_kin_dataset(out_dir, n_families: int = 50, difficulty: float = 0.5, seed: int = 7):
    """Write a synthetic kin dataset: 64x64 color images plus a manifest.

    Textures are sparse combinations of two dataset-wide dictionaries of
    smooth heavy-tailed fields, so train and test families share a
    common appearance space the way real faces do: family identity is a
    combination of the first dictionary (shared by a family's parent and
    child), and each image mixes in a fresh combination of the second
    dictionary with weight ``difficulty`` (0 = identical kin images,
    1 = kin pairs share nothing). Distinguishing the two subspaces is
    exactly the structure pair-difference discriminants exploit.
    Relations are spread so every (relation, fold) cell keeps at least
    two pairs; with fewer than 40 families only a subset of the four
    relation names is used.

    Returns the manifest path. Identical seeds reproduce identical bytes.
    """
    if n_families < 10:
        raise InputError(f"need at least 10 families, got {n_families}")
    if not 0.0 <= difficulty <= 1.0:
        raise InputError(f"difficulty must be in [0, 1], got {difficulty}")
    from PIL import Image  # local import keeps module import light

    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    n_relations = max(1, min(4, n_families // 10))
    relations = RELATIONS[:n_relations]
    amplitude = 0.22
    family_basis = np.stack([_smooth_field(rng) for _ in range(10)])
    image_basis = np.stack([_smooth_field(rng) for _ in range(10)])

    # families cycle through the relations; fold chunks stay contiguous per relation
    rel_totals = {
        rel: (n_families - i - 1) // n_relations + 1 for i, rel in enumerate(relations)
    }
    rows = []
    rel_counter: dict = {rel: 0 for rel in relations}
    for fam in range(n_families):
        relation = relations[fam % n_relations]
        j = rel_counter[relation]
        rel_counter[relation] += 1
        n_rel = rel_totals[relation]
        family_texture = _basis_combination(rng, family_basis)
        names = []
        for role in ("parent", "child"):
            own_texture = _basis_combination(rng, image_basis)
            tex = (1.0 - difficulty) * family_texture + difficulty * own_texture
            img = np.clip(0.5 + amplitude * tex, 0.0, 1.0)
            data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
            name = f"fam{fam:04d}_{role}.png"
            Image.fromarray(data, mode="RGB").save(image_dir / name, format="PNG")
            names.append(f"images/{name}")
        fold = 1 + (j * N_FOLDS) // n_rel
        rows.append((relation, names[0], names[1], LABEL_KIN, fold))

    manifest_path = out_dir / "manifest.csv"
    lines = ["relation,parent,child,label,fold"]
    for row in rows:
        lines.append(",".join(str(v) for v in row))
    atomic_write_text(manifest_path, "\n".join(lines) + "\n")
    return manifest_path


# --- cross-validation ------------------------------------------------------


def prepare_pairs(records, config: RunConfig) -> list:
    """Folds assigned, negatives generated (when absent), labels optionally
    shuffled, and the resulting 5-fold split validated."""
    records = assign_folds(records, seed=config.seed_folds)
    positives = [r for r in records if r.is_kin]
    provided_negatives = [r for r in records if not r.is_kin]
    if not positives:
        raise DegenerateInputError("manifest has no positive pairs")
    if provided_negatives:
        pairs = records
    else:
        pairs = positives + generate_negatives(positives, seed=config.seed_negatives)
    if config.shuffle_labels_seed is not None:
        pairs = shuffle_pair_labels(pairs, seed=config.shuffle_labels_seed)
    validate_fold_split(pairs)
    return pairs


def run_cross_validation(records, config: RunConfig, global_banks=None) -> dict:
    """Per-fold train/evaluate over the 5-fold split; returns the full report.

    For every fold f, filter banks, PCA, mode projections, and the
    decision threshold are learned from the other folds only; seeds and
    the per-stage image hashes consumed by each learning step are
    recorded so the no-leakage property is auditable from the report.
    """
    pairs = prepare_pairs(records, config)
    store = ImageStore(crop_map=crop_window_map(records))

    outcomes = []
    for fold in range(1, N_FOLDS + 1):
        outcomes.append(
            evaluate_fold(fold, pairs, config, store, global_banks=global_banks)
        )

    rows = [row for o in outcomes for row in o.test_rows]
    metrics = compute_metrics(
        scores=[r["score"] for r in rows],
        labels=[r["is_kin"] for r in rows],
        relations=[r["relation"] for r in rows],
        decisions=[r["decision"] for r in rows],
        folds=[r["fold"] for r in rows],
    )

    audit = {
        str(o.fold): {
            "test_image_hashes": o.test_hashes,
            "stages": o.stage_hashes,
        }
        for o in outcomes
    }
    report = {
        "method": method_label(config),
        "bank_mode": "per-fold" if config.per_fold_banks else "external",
        "streams": active_streams(config),
        "config": config.to_dict(),
        "seeds": {
            "patch": config.seed_patch,
            "ica": config.seed_ica,
            "negatives": config.seed_negatives,
            "folds": config.seed_folds,
            "shuffle_labels": config.shuffle_labels_seed,
        },
        "relation_distribution": relation_distribution(records),
        "reference_relation_mix": REFERENCE_RELATION_MIX,
        "metrics": metrics.to_dict(),
        "folds": [
            {
                "fold": o.fold,
                "threshold": o.threshold,
                "accuracy": o.accuracy,
                "model_dims": o.model_dims,
                "bank_stats": o.bank_stats,
            }
            for o in outcomes
        ],
        "audit": audit,
    }
    if config.reference_mean is not None:
        delta = metrics.mean_accuracy - config.reference_mean
        report["reference_comparison"] = {
            "reference_mean": config.reference_mean,
            "delta": delta,
            "within_3_points": bool(abs(delta) <= 3.0),
            "informational_only": True,
        }
    return report


def format_table(report: dict) -> str:
    """Plain-text accuracy table mirroring the benchmark layout."""
    metrics = report["metrics"]
    lines = []
    lines.append(f"{'Method':<44s}{'Mean':>8s}")
    lines.append("-" * 52)
    lines.append(f"{report['method']:<44s}{metrics['mean_accuracy']:>8.2f}")
    lines.append("")
    lines.append("Per-relation accuracy (%):")
    for rel, acc in sorted(metrics["per_relation"].items()):
        lines.append(f"  {rel:<24s}{acc:>8.2f}")
    lines.append("")
    lines.append(f"  {'EER (%)':<24s}{metrics['eer']:>8.2f}")
    lines.append(f"  {'pairs evaluated':<24s}{metrics['n_pairs']:>8d}")
    if "reference_comparison" in report:
        rc = report["reference_comparison"]
        lines.append("")
        lines.append(
            f"  reference mean {rc['reference_mean']:.2f}: delta "
            f"{rc['delta']:+.2f} (informational only; "
            f"within +/-3: {'yes' if rc['within_3_points'] else 'no'})"
        )
    return "\n".join(lines) + "\n"
