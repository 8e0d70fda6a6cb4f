import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinverify import (
    DegenerateInputError,
    InputError,
    Threshold,
    choose_threshold,
    cosine_score,
    decide,
    fuse_scores,
)
from oracles import best_threshold_reference


class TestCosineScore:
    def test_identical_vectors(self, rng):
        v = rng.standard_normal(8)
        assert cosine_score(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_vectors(self):
        assert cosine_score([1.0, 0.0], [0.0, 2.0]) == 0.0

    def test_opposite_vectors(self, rng):
        v = rng.standard_normal(5)
        assert cosine_score(v, -v) == pytest.approx(-1.0, abs=1e-12)

    def test_zero_vector_rejected(self):
        with pytest.raises(DegenerateInputError):
            cosine_score(np.zeros(3), np.ones(3))

    def test_length_mismatch(self):
        with pytest.raises(InputError):
            cosine_score(np.ones(3), np.ones(4))

    @settings(max_examples=100, deadline=None)
    @given(
        st.integers(0, 2**32 - 1),
        st.floats(1e-6, 1e6),
        st.floats(1e-6, 1e6),
    )
    def test_scale_invariance_and_symmetry(self, seed, a, b):
        r = np.random.default_rng(seed)
        x = r.standard_normal(6)
        y = r.standard_normal(6)
        base = cosine_score(x, y)
        assert abs(cosine_score(a * x, b * y) - base) <= 1e-12
        assert cosine_score(y, x) == base

    def test_clamped_to_unit_interval(self, rng):
        for _ in range(200):
            v = rng.standard_normal(4)
            s = cosine_score(v, v * rng.uniform(0.1, 10.0))
            assert -1.0 <= s <= 1.0


class TestChooseThreshold:
    def test_separated_case_returns_middle(self):
        scores = np.array([0.9, 0.8, 0.1, 0.2])
        labels = np.array([True, True, False, False])
        t = choose_threshold(scores, labels)
        assert t.value == 0.5
        assert t.source == "accuracy-max"
        assert np.mean((scores >= t.value) == labels) == 1.0

    def test_interleaved_matches_exhaustive_oracle(self, rng):
        for _ in range(20):
            scores = rng.random(14)
            labels = rng.integers(0, 2, size=14).astype(bool)
            if labels.all() or not labels.any():
                continue
            t = choose_threshold(scores, labels)
            ref_t, ref_acc = best_threshold_reference(scores, labels)
            assert t.value == ref_t
            assert np.mean((scores >= t.value) == labels) == ref_acc

    def test_tie_breaks_to_larger_threshold(self):
        # midpoints 0.5 and 2.5 both reach accuracy 3/4; the larger must win
        scores = np.array([0.0, 1.0, 2.0, 3.0])
        labels = np.array([False, True, False, True])
        t = choose_threshold(scores, labels)
        assert t.value == 2.5

    def test_single_class_rejected(self):
        with pytest.raises(DegenerateInputError):
            choose_threshold(np.array([0.1, 0.2]), np.array([True, True]))


class TestDecide:
    def test_above_threshold(self):
        assert decide(1.0, Threshold(0.5)) is True

    def test_tie_decides_kin(self):
        assert decide(0.5, Threshold(0.5)) is True
        assert decide(0.5, 0.5) is True

    def test_below_threshold(self):
        assert decide(-1.0, Threshold(0.0)) is False

    def test_monotone_in_score(self, rng):
        t = Threshold(float(rng.standard_normal()))
        scores = np.sort(rng.standard_normal(50))
        decisions = [decide(float(s), t) for s in scores]
        assert decisions == sorted(decisions)


class TestFuseScores:
    def test_uniform_mean(self):
        assert fuse_scores([0.2, 0.4]) == pytest.approx(0.3, abs=1e-15)

    def test_single_score_identity(self):
        assert fuse_scores([0.7]) == 0.7

    def test_weighted(self):
        assert fuse_scores([0.2, 0.4], weights=[1.0, 0.0]) == 0.2

    def test_empty_rejected(self):
        with pytest.raises(DegenerateInputError):
            fuse_scores([])

    def test_negative_weights_rejected(self):
        with pytest.raises(InputError):
            fuse_scores([0.1, 0.2], weights=[1.0, -1.0])

    def test_zero_weight_sum_rejected(self):
        with pytest.raises(InputError):
            fuse_scores([0.1, 0.2], weights=[0.0, 0.0])

    def test_weight_shape_mismatch(self):
        with pytest.raises(InputError):
            fuse_scores([0.1], weights=[1.0, 2.0])
