"""Kinship verification from face-image pairs.

Pipeline: canonical 64x64 color preprocessing -> multiscale LBP and
learned color BSIF code maps -> block-histogram feature tensors ->
pair-supervised tensor discriminant projection -> cosine scores and
thresholded kin / non-kin decisions, evaluated under a reproducible
5-fold protocol.
"""

from .bsif import (
    FilterBank,
    IcaStats,
    PatchSet,
    bsif_encode,
    learn_filter_bank,
    learn_filters,
    load_filter_bank,
    ms_bsif,
    sample_patches,
    save_filter_bank,
)
from .config import RunConfig, load_config, write_config
from .errors import (
    ConvergenceError,
    DegenerateInputError,
    InputError,
    KinverifyError,
    NumericalError,
)
from .features import (
    FeatureTensor,
    assemble_tensor,
    block_histograms,
    flatten,
    load_features,
    save_features,
    unflatten,
)
from .imaging import (
    CANONICAL_SIDE,
    CropWindow,
    center_square_window,
    load_image,
    normalize_patch,
    preprocess,
)
from .lbp import CodeMap, LbpConfig, lbp_encode, ms_lbp
from .protocol import (
    Metrics,
    PairRecord,
    assign_folds,
    compute_metrics,
    generate_negatives,
    load_manifest,
    relation_distribution,
    run_cross_validation,
    synth_kin_dataset,
)
from .scoring import Threshold, choose_threshold, cosine_score, decide, fuse_scores
from .subspace import (
    ScatterPair,
    SubspaceModel,
    compute_sild_scatters,
    exponentiate_scatters,
    load_model,
    matrix_exp_sym,
    pca_reduce,
    project,
    save_model,
    solve_eda,
    txqda_fit,
)

__version__ = "0.1.0"

__all__ = [
    "CANONICAL_SIDE",
    "CodeMap",
    "ConvergenceError",
    "CropWindow",
    "DegenerateInputError",
    "FeatureTensor",
    "FilterBank",
    "IcaStats",
    "InputError",
    "KinverifyError",
    "LbpConfig",
    "Metrics",
    "NumericalError",
    "PairRecord",
    "PatchSet",
    "RunConfig",
    "ScatterPair",
    "SubspaceModel",
    "Threshold",
    "assemble_tensor",
    "assign_folds",
    "block_histograms",
    "bsif_encode",
    "center_square_window",
    "choose_threshold",
    "compute_metrics",
    "compute_sild_scatters",
    "cosine_score",
    "decide",
    "exponentiate_scatters",
    "flatten",
    "fuse_scores",
    "generate_negatives",
    "lbp_encode",
    "learn_filter_bank",
    "learn_filters",
    "load_config",
    "load_features",
    "load_filter_bank",
    "load_image",
    "load_manifest",
    "load_model",
    "matrix_exp_sym",
    "ms_bsif",
    "ms_lbp",
    "normalize_patch",
    "pca_reduce",
    "preprocess",
    "project",
    "relation_distribution",
    "run_cross_validation",
    "sample_patches",
    "save_features",
    "save_filter_bank",
    "save_model",
    "solve_eda",
    "synth_kin_dataset",
    "txqda_fit",
    "unflatten",
    "write_config",
]
