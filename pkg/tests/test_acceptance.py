"""Acceptance gate: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` (or plain ``pytest``;
the lines then appear in the captured output). Every tolerance and
runtime budget is pinned here. The end-to-end criteria use the
synthetic generator at moderate difficulty (0.4 on its 0-to-1 scale:
family texture weight 0.6, per-image texture weight 0.4), 50 families,
seed 7; chance level is 50%.
"""

import re
import time

import numpy as np
import pytest

from kinverify import (
    FeatureTensor,
    FilterBank,
    LbpConfig,
    PatchSet,
    RunConfig,
    ScatterPair,
    block_histograms,
    bsif_encode,
    lbp_encode,
    learn_filter_bank,
    learn_filters,
    load_features,
    load_filter_bank,
    load_manifest,
    load_model,
    run_cross_validation,
    save_features,
    save_filter_bank,
    save_model,
    solve_eda,
    synth_kin_dataset,
    txqda_fit,
    write_config,
)
from kinverify.cli import main as cli_main
from kinverify.lbp import CodeMap
from kinverify.subspace import eigen_residual
from oracles import bsif_reference, expm_taylor, lbp_reference

MODERATE_DIFFICULTY = 0.4


def _ok(num, name, detail=""):
    print(f"ACCEPTANCE PASS [{num:>2}] {name}" + (f" - {detail}" if detail else ""))


def _check(num, name, condition, detail=""):
    assert condition, f"ACCEPTANCE FAIL [{num}] {name}" + (f" - {detail}" if detail else "")


@pytest.fixture(scope="module")
def dataset50(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept50")
    manifest = synth_kin_dataset(root, n_families=50, difficulty=MODERATE_DIFFICULTY, seed=7)
    return manifest


def _acceptance_config(manifest, **overrides) -> RunConfig:
    base = dict(
        manifest=str(manifest),
        bsif_sizes=(3, 9),
        lbp_radii=(1, 2, 3),
        bsif_bits=8,
        patch_count=3000,
        m_mode1=12,
        m_mode2=8,
        pca_cap=40,
        sweeps=2,
    )
    base.update(overrides)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def report50(dataset50):
    records = load_manifest(dataset50)
    start = time.time()
    report = run_cross_validation(records, _acceptance_config(dataset50))
    return report, time.time() - start


def test_criterion_01_lbp_oracle_equivalence():
    rng = np.random.default_rng(101)
    start = time.time()
    mismatches = 0
    for radius in (1, 2, 3):
        cfg = LbpConfig(radius=radius)
        for _ in range(100):
            plane = rng.random((16, 16))
            ours = lbp_encode(plane, cfg).codes
            ref = lbp_reference(plane, radius=radius)
            mismatches += int(np.count_nonzero(ours != ref))
    elapsed = time.time() - start
    _check(1, "LBP oracle equivalence", mismatches == 0, f"{mismatches} mismatched codes")
    _check(1, "LBP oracle runtime", elapsed < 10.0, f"{elapsed:.1f}s")
    _ok(1, "LBP oracle equivalence", f"0 mismatches over 300 planes in {elapsed:.1f}s")


def test_criterion_02_bsif_oracle_equivalence(tmp_path):
    from kinverify.pipeline import preprocess_file

    manifest = synth_kin_dataset(tmp_path, n_families=10, difficulty=0.5, seed=2)
    records = load_manifest(manifest)
    images = [preprocess_file(r.parent_path) for r in records]
    rng = np.random.default_rng(202)
    start = time.time()
    mismatches = 0
    for scale in (3, 9):
        bank = learn_filter_bank(
            images, patch_side=scale, bit_count=8,
            patch_count=max(900, 10 * scale * scale), seed=scale,
        )
        for _ in range(50):
            plane = rng.random((16, 16))
            ours = bsif_encode(plane, bank.filters[0]).codes
            ref = bsif_reference(plane, bank.filters[0])
            mismatches += int(np.count_nonzero(ours != ref))
    elapsed = time.time() - start
    _check(2, "BSIF oracle equivalence", mismatches == 0, f"{mismatches} mismatched codes")
    _check(2, "BSIF oracle runtime", elapsed < 10.0, f"{elapsed:.1f}s")
    _ok(2, "BSIF oracle equivalence", f"0 mismatches, L in {{3, 9}}, in {elapsed:.1f}s")


def test_criterion_03_ica_planted_direction():
    start = time.time()
    side = 5
    d = side * side
    worst = 1.0
    for seed in range(5):
        rng = np.random.default_rng(300 + seed)
        direction = rng.standard_normal(d)
        direction -= direction.mean()
        direction /= np.linalg.norm(direction)
        amplitude = rng.standard_normal(3000) ** 3
        rows = np.outer(amplitude, direction) + 0.01 * rng.standard_normal((3000, d))
        rows -= rows.mean(axis=1, keepdims=True)
        rows /= np.sqrt(np.mean(rows**2, axis=1, keepdims=True))
        patches = PatchSet(patch_side=side, channel="red", data=rows)
        filters, _ = learn_filters(patches, bit_count=1, seed=seed)
        worst = min(worst, abs(float(filters.ravel() @ direction)))
    elapsed = time.time() - start
    _check(3, "ICA planted-direction recovery", worst >= 0.99, f"worst |cos| {worst:.4f}")
    _check(3, "ICA recovery runtime", elapsed < 30.0, f"{elapsed:.1f}s")
    _ok(3, "ICA planted-direction recovery", f"worst |cos| {worst:.4f} over 5 seeds in {elapsed:.1f}s")


def test_criterion_04_matrix_exponential_oracle():
    from kinverify import matrix_exp_sym

    rng = np.random.default_rng(404)
    start = time.time()
    worst = 0.0
    for _ in range(20):
        q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
        s = (q * rng.uniform(0.0, 5.0, size=8)) @ q.T
        s = (s + s.T) / 2.0
        ours = matrix_exp_sym(s)
        ref = expm_taylor(s)
        worst = max(worst, float(np.max(np.abs(ours - ref)) / np.max(np.abs(ref))))
    elapsed = time.time() - start
    _check(4, "matrix exponential vs Taylor oracle", worst <= 1e-8, f"rel err {worst:.2e}")
    _check(4, "matrix exponential runtime", elapsed < 5.0, f"{elapsed:.1f}s")
    _ok(4, "matrix exponential oracle", f"max relative error {worst:.2e} in {elapsed:.1f}s")


def test_criterion_05_generalized_eigen_residual():
    rng = np.random.default_rng(505)
    start = time.time()
    worst = 0.0
    for d in (5, 12, 20, 35, 50):
        for _ in range(4):
            qb, _ = np.linalg.qr(rng.standard_normal((d, d)))
            qw, _ = np.linalg.qr(rng.standard_normal((d, d)))
            exp_b = (qb * rng.uniform(0.5, 5.0, size=d)) @ qb.T
            exp_w = (qw * rng.uniform(0.5, 5.0, size=d)) @ qw.T
            sc = ScatterPair(
                s_b=np.zeros((d, d)), s_w=np.zeros((d, d)),
                exp_b=(exp_b + exp_b.T) / 2.0, exp_w=(exp_w + exp_w.T) / 2.0,
            )
            w, evals = solve_eda(sc, max(1, d // 2))
            worst = max(worst, eigen_residual(sc, w, evals))
    elapsed = time.time() - start
    _check(5, "generalized-eigen residual", worst <= 1e-8, f"max residual {worst:.2e}")
    _check(5, "generalized-eigen runtime", elapsed < 10.0, f"{elapsed:.1f}s")
    _ok(5, "generalized-eigen residual", f"max residual {worst:.2e} up to d=50 in {elapsed:.1f}s")


def test_criterion_06_histogram_conservation():
    rng = np.random.default_rng(606)
    start = time.time()
    for _ in range(100):
        h = int(rng.integers(8, 40))
        w = int(rng.integers(8, 40))
        bits = int(rng.choice([4, 8]))
        cm = CodeMap(
            codes=rng.integers(0, 1 << bits, size=(h, w)).astype(np.int32), code_bits=bits
        )
        counts = block_histograms(cm, normalize=False)
        bins = 1 << bits
        base_h, base_w = h // 4, w // 4
        for by in range(4):
            for bx in range(4):
                bh = base_h if by < 3 else h - 3 * base_h
                bw = base_w if bx < 3 else w - 3 * base_w
                seg = counts[(by * 4 + bx) * bins : (by * 4 + bx + 1) * bins]
                assert seg.sum() == bh * bw, f"ACCEPTANCE FAIL [6] block ({by},{bx}) of {h}x{w}"
    elapsed = time.time() - start
    _check(6, "histogram conservation runtime", elapsed < 5.0, f"{elapsed:.1f}s")
    _ok(6, "histogram conservation", f"100 maps, exact block sums, in {elapsed:.1f}s")


def test_criterion_07_synthetic_end_to_end(dataset50, report50):
    report, elapsed = report50
    mean = report["metrics"]["mean_accuracy"]
    _check(7, "synthetic end-to-end accuracy", mean >= 90.0, f"mean {mean:.2f}%")
    _check(7, "synthetic end-to-end runtime", elapsed < 300.0, f"{elapsed:.0f}s")

    records = load_manifest(dataset50)
    start = time.time()
    shuffled = run_cross_validation(
        records, _acceptance_config(dataset50, shuffle_labels_seed=123)
    )
    shuffled_elapsed = time.time() - start
    shuffled_mean = shuffled["metrics"]["mean_accuracy"]
    _check(
        7,
        "shuffled-label control",
        40.0 <= shuffled_mean <= 60.0,
        f"shuffled mean {shuffled_mean:.2f}%",
    )
    _check(7, "shuffled control runtime", shuffled_elapsed < 300.0, f"{shuffled_elapsed:.0f}s")
    _ok(
        7,
        "synthetic end-to-end",
        f"mean {mean:.2f}% (chance 50%), shuffled {shuffled_mean:.2f}%, "
        f"{elapsed:.0f}s + {shuffled_elapsed:.0f}s",
    )


@pytest.fixture(scope="module")
def determinism_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("determinism")
    manifest = synth_kin_dataset(
        root / "data", n_families=20, difficulty=MODERATE_DIFFICULTY, seed=11
    )
    out_dir = root / "run"
    cfg = _acceptance_config(
        manifest,
        patch_count=1500,
        out_dir=str(out_dir),
        reference_mean=80.53,
    )
    cfg_path = root / "run.cfg"
    write_config(cfg, cfg_path)
    start = time.time()
    assert cli_main(["eval", "--config", str(cfg_path)]) == 0
    first = (out_dir / "report.json").read_bytes()
    assert cli_main(["eval", "--config", str(cfg_path)]) == 0
    second = (out_dir / "report.json").read_bytes()
    elapsed = time.time() - start
    return first, second, (out_dir / "report.txt").read_text(), elapsed


def test_criterion_08_cmd_eval_determinism(determinism_run):
    first, second, _, elapsed = determinism_run
    _check(8, "cmd_eval byte-identical reports", first == second)
    _ok(8, "cmd_eval determinism", f"two runs, {len(first)} identical bytes, {elapsed:.0f}s total")


def test_criterion_09_no_leakage_audit(report50):
    report, _ = report50
    audit = report["audit"]
    _check(9, "audit covers all folds", sorted(audit) == ["1", "2", "3", "4", "5"])
    checked = 0
    for fold, entry in audit.items():
        test_hashes = set(entry["test_image_hashes"])
        _check(9, f"fold {fold} has test hashes", bool(test_hashes))
        stages = entry["stages"]
        for stage in ("patch_sampling", "filter_learning", "pca", "txqda", "threshold"):
            _check(9, f"fold {fold} stage {stage} recorded", bool(stages.get(stage)))
            overlap = test_hashes & set(stages[stage])
            _check(9, f"fold {fold} stage {stage} leak-free", not overlap, f"{len(overlap)} leaked")
            checked += 1
    _ok(9, "no-leakage audit", f"{checked} fold-stage combinations, zero overlaps")


def test_criterion_10_persistence_round_trips(tmp_path):
    rng = np.random.default_rng(1010)
    bank = FilterBank(
        patch_side=5, bit_count=6,
        filters=rng.standard_normal((3, 6, 5, 5)),
        learn_seed=77, source_tag="round trip",
    )
    p1, p2 = tmp_path / "a.kbsf", tmp_path / "b.kbsf"
    save_filter_bank(bank, p1)
    save_filter_bank(load_filter_bank(p1), p2)
    _check(10, "KBSF write-read-write byte identical", p1.read_bytes() == p2.read_bytes())

    tensor = FeatureTensor(rng.random((4096, 15)))
    f1, f2 = tmp_path / "a.kfea", tmp_path / "b.kfea"
    save_features(tensor, f1)
    save_features(load_features(f1), f2)
    _check(10, "KFEA write-read-write byte identical", f1.read_bytes() == f2.read_bytes())

    triples = [
        (rng.standard_normal((40, 3)), rng.standard_normal((40, 3)), bool(k % 2))
        for k in range(12)
    ]
    model = txqda_fit(triples, m_per_mode=(4, 2), iterations=2, seed=5)
    m1, m2 = tmp_path / "a.ktxq", tmp_path / "b.ktxq"
    save_model(model, m1)
    save_model(load_model(m1), m2)
    _check(10, "KTXQ write-read-write byte identical", m1.read_bytes() == m2.read_bytes())
    _ok(10, "persistence round-trips", "KBSF, KFEA, KTXQ all byte-stable")


def test_criterion_11_benchmark_table_row(determinism_run):
    _, _, table, _ = determinism_run
    match = re.search(
        r"^(Color MS-BSIF[^\n]*?)\s+(\d{1,3}\.\d{2})\s*$", table, flags=re.MULTILINE
    )
    _check(11, "table has a method/mean row", match is not None, f"table:\n{table}")
    mean = float(match.group(2))
    ref = re.search(r"reference mean 80\.53: delta ([+-]\d+\.\d{2}) \(informational only", table)
    _check(11, "informational reference comparison present", ref is not None)
    delta = float(ref.group(1))
    _check(11, "reference delta arithmetic", abs((80.53 + delta) - mean) <= 0.011, f"{delta}")
    within = abs(delta) <= 3.0
    _ok(
        11,
        "benchmark table row",
        f"row mean {mean:.2f}%, delta vs 80.53 reference {delta:+.2f} "
        f"({'within' if within else 'outside'} +/-3, informational only)",
    )
