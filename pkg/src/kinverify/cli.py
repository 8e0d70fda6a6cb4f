"""Command-line entry point.

Subcommands: ``learn-filters``, ``extract``, ``eval``, ``synth``,
``inspect``. Options may come from a flat key=value config file
(``--config``); explicit flags win over file values. All outputs are
written atomically, every report embeds the resolved configuration and
seeds, and exit status is 0 on success or 1 with a single
``error:<category>: <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import bsif, features, protocol, subspace
from .config import RunConfig, apply_overrides, load_config
from .errors import InputError, KinverifyError
from .fileio import atomic_write_text, sha256_bytes, sha256_file
from .pipeline import ImageStore, image_tensors, learn_fold_banks, pair_paths

log = logging.getLogger("kinverify")


def _int_list(raw: str) -> tuple:
    raw = raw.strip()
    if not raw:
        return ()
    try:
        return tuple(int(tok) for tok in raw.split(","))
    except ValueError as exc:
        raise InputError(f"expected a comma-separated integer list, got {raw!r}") from exc


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    for key in (
        "manifest",
        "banks_dir",
        "cache_dir",
        "out_dir",
        "bsif_bits",
        "patch_count",
        "fusion",
        "jobs",
        "m_mode1",
        "m_mode2",
        "sweeps",
        "pca_cap",
        "shuffle_labels_seed",
        "reference_mean",
        "seed_patch",
        "seed_ica",
        "seed_negatives",
        "seed_folds",
    ):
        if hasattr(args, key):
            overrides[key] = getattr(args, key)
    if getattr(args, "sizes", None) is not None:
        overrides["bsif_sizes"] = _int_list(args.sizes)
    if getattr(args, "radii", None) is not None:
        overrides["lbp_radii"] = _int_list(args.radii)
    if getattr(args, "all_data_banks", False):
        overrides["per_fold_banks"] = False
    return apply_overrides(cfg, overrides)


def _cache_dir(cfg: RunConfig) -> Path:
    env = os.environ.get("KINVERIFY_CACHE_DIR")
    if env:
        return Path(env)
    return Path(cfg.cache_dir or "feature-cache")


def _bank_paths(cfg: RunConfig) -> list:
    directory = Path(cfg.banks_dir or "banks")
    return [directory / f"bsif_L{scale}.kbsf" for scale in sorted(cfg.bsif_sizes)]


def _load_banks(cfg: RunConfig) -> list:
    banks = []
    for path in _bank_paths(cfg):
        if not path.is_file():
            raise InputError(
                f"missing filter bank {path}; create it with "
                f"`kinverify learn-filters --sizes "
                f"{','.join(str(s) for s in sorted(cfg.bsif_sizes))}`"
            )
        banks.append(bsif.load_filter_bank(path))
    return banks


def cmd_learn_filters(args) -> int:
    cfg = _resolve_config(args)
    if not cfg.manifest:
        raise InputError("learn-filters needs --manifest")
    records = protocol.load_manifest(cfg.manifest)
    store = ImageStore(crop_map=protocol.crop_window_map(records))
    paths = pair_paths(records)
    images = [store.image(p) for p in paths]
    out_dir = Path(cfg.banks_dir or "banks")
    stats_sink: list = []
    banks = learn_fold_banks(images, cfg, fold=0, stats_sink=stats_sink)
    for bank, path in zip(banks, _bank_paths(cfg)):
        bsif.save_filter_bank(bank, path)
        print(f"wrote {path}")
    for entry in stats_sink:
        for ch, stat in zip(bsif.CHANNEL_NAMES, entry["channels"]):
            print(
                f"scale L={entry['scale']} channel {ch}: "
                f"ICA converged in {stat['iterations']} iterations "
                f"(delta {stat['final_delta']:.2e})"
            )
    log.info("learned %d filter banks from %d images into %s", len(banks), len(paths), out_dir)
    return 0


def _feature_key(cfg: RunConfig, image_hash: str, bank_hashes) -> str:
    material = "\n".join([image_hash, cfg.feature_fingerprint(), *bank_hashes])
    return sha256_bytes(material.encode())[:24]


def cmd_extract(args) -> int:
    cfg = _resolve_config(args)
    if not cfg.manifest:
        raise InputError("extract needs --manifest")
    records = protocol.load_manifest(cfg.manifest)
    store = ImageStore(crop_map=protocol.crop_window_map(records))
    banks = _load_banks(cfg) if cfg.bsif_sizes else []
    bank_hashes = [sha256_file(p) for p in _bank_paths(cfg)] if cfg.bsif_sizes else []
    cache = _cache_dir(cfg)
    cache.mkdir(parents=True, exist_ok=True)
    paths = pair_paths(records)

    def one(path: str):
        stem = Path(path).stem
        key = _feature_key(cfg, store.content_hash(path), bank_hashes)
        target = cache / f"{stem}.{key}.kfea"
        if target.is_file():
            return ("cached", target)
        tensors = image_tensors(store.image(path), banks, cfg)
        stream = "fused" if "fused" in tensors else sorted(tensors)[0]
        features.save_features(tensors[stream], target)
        return ("written", target)

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(one, paths))
    else:
        results = [one(p) for p in paths]
    written = sum(1 for status, _ in results if status == "written")
    cached = len(results) - written
    for status, target in results:
        log.info("%s %s", status, target)
    print(f"extracted {written} feature files, {cached} cache hits, cache dir {cache}")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    if not cfg.manifest:
        raise InputError("eval needs --manifest")
    records = protocol.load_manifest(cfg.manifest)
    global_banks = None
    if not cfg.per_fold_banks and cfg.bsif_sizes:
        global_banks = _load_banks(cfg)
    report = protocol.run_cross_validation(records, cfg, global_banks=global_banks)
    out_dir = Path(cfg.out_dir)
    json_path = out_dir / "report.json"
    text_path = out_dir / "report.txt"
    atomic_write_text(json_path, json.dumps(report, sort_keys=True, indent=2) + "\n")
    table = protocol.format_table(report)
    atomic_write_text(text_path, table)
    print(table, end="")
    print(f"report written to {json_path} and {text_path}")
    return 0


def cmd_synth(args) -> int:
    if args.families < 2:
        raise InputError("need at least 2 families")
    manifest = protocol.synth_kin_dataset(
        args.out_dir,
        n_families=args.families,
        difficulty=args.difficulty,
        seed=args.seed,
    )
    print(f"synthetic dataset written; manifest at {manifest}")
    return 0


def _inspect_payload(path: Path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == bsif.BANK_MAGIC:
        bank = bsif.load_filter_bank(path)
        return {
            "kind": "filter-bank",
            "patch_side": bank.patch_side,
            "bit_count": bank.bit_count,
            "learn_seed": bank.learn_seed,
            "source_tag": bank.source_tag,
            "filters": bank.filters.tolist(),
        }
    if magic == features.FEATURES_MAGIC:
        tensor = features.load_features(path)
        return {
            "kind": "feature-tensor",
            "mode1_dim": tensor.mode1_dim,
            "mode2_dim": tensor.mode2_dim,
            "data": tensor.data.tolist(),
        }
    if magic == subspace.MODEL_MAGIC:
        model = subspace.load_model(path)
        return {
            "kind": "subspace-model",
            "mode_dims": list(model.mode_dims),
            "output_dims": list(model.output_dims),
            "iteration_count": model.iteration_count,
            "fit_seed": model.fit_seed,
            "pca": None
            if model.pca_projection is None
            else {
                "input_dim": model.pca_projection.shape[0],
                "reduced_dim": model.pca_projection.shape[1],
            },
            "eigenvalues": [e.tolist() for e in model.eigenvalues],
        }
    raise InputError(f"unrecognized file magic {magic!r} in {path}")


def cmd_inspect(args) -> int:
    path = Path(args.path)
    if not path.is_file():
        raise InputError(f"no such file: {path}")
    print(json.dumps(_inspect_payload(path), sort_keys=True, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kinverify",
        description="Kinship verification from face-image pairs: learned color "
        "BSIF + multiscale LBP features, tensor discriminant projection, "
        "cosine scoring, and a 5-fold evaluation harness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--manifest", help="pair manifest CSV")
        p.add_argument("--banks-dir", dest="banks_dir", help="filter bank directory")
        p.add_argument("--out-dir", dest="out_dir", help="output directory")
        p.add_argument("--sizes", help="comma list of BSIF filter sizes")
        p.add_argument("--radii", help="comma list of LBP radii")
        p.add_argument("--bits", dest="bsif_bits", type=int, help="BSIF bit count")
        p.add_argument("--patches", dest="patch_count", type=int, help="patches per channel")
        p.add_argument("--seed", dest="seed_patch", type=int, help="patch sampling seed")
        p.add_argument("--seed-ica", dest="seed_ica", type=int)
        p.add_argument("--seed-negatives", dest="seed_negatives", type=int)
        p.add_argument("--seed-folds", dest="seed_folds", type=int)

    p_learn = sub.add_parser("learn-filters", help="learn BSIF filter banks")
    common(p_learn)
    p_learn.set_defaults(func=cmd_learn_filters)

    p_extract = sub.add_parser("extract", help="extract per-image feature files")
    common(p_extract)
    p_extract.add_argument("--cache-dir", dest="cache_dir", help="feature cache directory")
    p_extract.add_argument("--jobs", type=int, help="concurrent extraction workers")
    p_extract.set_defaults(func=cmd_extract)

    p_eval = sub.add_parser("eval", help="run the 5-fold cross-validation")
    common(p_eval)
    p_eval.add_argument("--fusion", choices=("feature", "score"))
    p_eval.add_argument("--m1", dest="m_mode1", type=int, help="mode-1 output dim")
    p_eval.add_argument("--m2", dest="m_mode2", type=int, help="mode-2 output dim")
    p_eval.add_argument("--sweeps", type=int, help="alternation sweeps")
    p_eval.add_argument("--pca-cap", dest="pca_cap", type=int)
    p_eval.add_argument(
        "--shuffle-labels-seed",
        dest="shuffle_labels_seed",
        type=int,
        help="negative control: permute kin labels within folds",
    )
    p_eval.add_argument(
        "--reference-mean",
        dest="reference_mean",
        type=float,
        help="report an informational delta against this accuracy",
    )
    p_eval.add_argument(
        "--all-data-banks",
        action="store_true",
        help="use pre-learned banks from --banks-dir instead of per-fold learning",
    )
    p_eval.set_defaults(func=cmd_eval)

    p_synth = sub.add_parser("synth", help="generate a synthetic kin dataset")
    p_synth.add_argument("--families", type=int, default=50)
    p_synth.add_argument("--difficulty", type=float, default=0.5)
    p_synth.add_argument("--seed", type=int, default=7)
    p_synth.add_argument("--out-dir", dest="out_dir", default="synth-data")
    p_synth.set_defaults(func=cmd_synth)

    p_inspect = sub.add_parser("inspect", help="dump a binary artifact as JSON")
    p_inspect.add_argument("path")
    p_inspect.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KinverifyError as exc:
        print(f"error:{exc.category}: {exc}", file=sys.stderr)
        return 1
    except np.linalg.LinAlgError as exc:
        print(f"error:numerical: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
