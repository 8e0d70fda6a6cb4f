"""Run configuration: a flat key=value file with CLI-flag overrides.

Every random choice in a run flows from the named seeds below; there
are no wall-clock defaults, so re-running a config reproduces a run
exactly. Unknown keys in a config file are rejected.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import InputError
from .fileio import sha256_bytes

_INT_TUPLE_FIELDS = {"lbp_radii", "bsif_sizes"}
_OPTIONAL_INT_FIELDS = {"shuffle_labels_seed"}
_OPTIONAL_FLOAT_FIELDS = {"reference_mean"}


@dataclass
class RunConfig:
    # descriptor parameters
    lbp_radii: tuple = (1, 2, 3)
    lbp_neighbors: int = 8
    bsif_sizes: tuple = (3, 7, 11, 15, 17)
    bsif_bits: int = 8
    patch_count: int = 50000
    grid_rows: int = 4
    grid_cols: int = 4
    # subspace parameters
    pca_cap: int = 200
    m_mode1: int = 12
    m_mode2: int = 8
    sweeps: int = 2
    # protocol
    fusion: str = "feature"  # "feature" or "score"
    per_fold_banks: bool = True
    shuffle_labels_seed: int | None = None
    reference_mean: float | None = None
    # seeds
    seed_patch: int = 42
    seed_ica: int = 7
    seed_negatives: int = 1
    seed_folds: int = 3
    # paths
    manifest: str = ""
    banks_dir: str = ""
    cache_dir: str = ""
    out_dir: str = "runs"
    jobs: int = 1

    def __post_init__(self):
        self.lbp_radii = tuple(int(r) for r in self.lbp_radii)
        self.bsif_sizes = tuple(int(s) for s in self.bsif_sizes)
        if self.fusion not in ("feature", "score"):
            raise InputError(f"fusion must be 'feature' or 'score', got {self.fusion!r}")
        if not self.lbp_radii and not self.bsif_sizes:
            raise InputError("at least one of lbp_radii / bsif_sizes must be non-empty")
        for name in ("seed_patch", "seed_ica", "seed_negatives", "seed_folds"):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lbp_radii"] = list(self.lbp_radii)
        d["bsif_sizes"] = list(self.bsif_sizes)
        return d

    def grid(self) -> tuple:
        return (self.grid_rows, self.grid_cols)

    def feature_fingerprint(self) -> str:
        """Stable hash of every field that affects extracted features."""
        keys = [
            "lbp_radii",
            "lbp_neighbors",
            "bsif_sizes",
            "bsif_bits",
            "grid_rows",
            "grid_cols",
        ]
        d = self.to_dict()
        return sha256_bytes(json.dumps({k: d[k] for k in keys}, sort_keys=True).encode())


def _parse_value(name: str, raw: str):
    raw = raw.strip()
    if name in _INT_TUPLE_FIELDS:
        if not raw:
            return ()
        return tuple(int(tok) for tok in raw.split(","))
    if name in _OPTIONAL_INT_FIELDS:
        return int(raw) if raw else None
    if name in _OPTIONAL_FLOAT_FIELDS:
        return float(raw) if raw else None
    for f in fields(RunConfig):
        if f.name == name:
            if f.type in ("int", int):
                return int(raw)
            if f.type in ("bool", bool):
                if raw.lower() in ("true", "1", "yes"):
                    return True
                if raw.lower() in ("false", "0", "no"):
                    return False
                raise InputError(f"bad boolean for {name}: {raw!r}")
            return raw
    raise InputError(f"unknown config key: {name}")


def load_config(path) -> RunConfig:
    """Parse a flat key = value config file (# starts a comment line)."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"config file not found: {path}")
    values = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise InputError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        values[key] = _parse_value(key, raw)
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise InputError(f"bad config {path}: {exc}") from exc


def write_config(config: RunConfig, path) -> None:
    lines = []
    d = config.to_dict()
    for f in fields(RunConfig):
        v = d[f.name]
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        elif v is None:
            v = ""
        lines.append(f"{f.name} = {v}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def apply_overrides(config: RunConfig, overrides: dict) -> RunConfig:
    """New config with non-None override values applied (flags win)."""
    d = config.to_dict()
    d["lbp_radii"] = tuple(d["lbp_radii"])
    d["bsif_sizes"] = tuple(d["bsif_sizes"])
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in d:
            raise InputError(f"unknown config key: {key}")
        d[key] = value
    return RunConfig(**d)
