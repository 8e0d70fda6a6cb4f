import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from kinverify import (
    CropWindow,
    DegenerateInputError,
    InputError,
    center_square_window,
    load_image,
    normalize_patch,
    preprocess,
)


def _write_png(path, array):
    Image.fromarray(array).save(path, format="PNG")
    return path


class TestLoadImage:
    def test_rgb_identity_decode(self, tmp_path, rng):
        data = rng.integers(0, 256, size=(128, 128, 3), dtype=np.uint8)
        path = _write_png(tmp_path / "rgb.png", data)
        img = load_image(path)
        assert img.shape == (128, 128, 3)
        assert np.array_equal(img, data.astype(np.float64) / 255.0)

    def test_grayscale_replicated_to_three_planes(self, tmp_path, rng):
        data = rng.integers(0, 256, size=(32, 40), dtype=np.uint8)
        path = _write_png(tmp_path / "gray.png", data)
        img = load_image(path)
        assert img.shape == (32, 40, 3)
        for ch in range(3):
            assert np.array_equal(img[:, :, ch], data.astype(np.float64) / 255.0)

    def test_truncated_file_fails(self, tmp_path, rng):
        data = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
        path = _write_png(tmp_path / "ok.png", data)
        blob = path.read_bytes()
        bad = tmp_path / "broken.png"
        bad.write_bytes(blob[: len(blob) // 3])
        with pytest.raises(InputError):
            load_image(bad)

    def test_non_image_file_fails(self, tmp_path):
        path = tmp_path / "noise.png"
        path.write_bytes(b"definitely not an image")
        with pytest.raises(InputError):
            load_image(path)

    def test_jpeg_decodes(self, tmp_path):
        data = np.full((48, 48, 3), 128, dtype=np.uint8)
        path = tmp_path / "flat.jpg"
        Image.fromarray(data).save(path, format="JPEG", quality=95)
        img = load_image(path)
        assert img.shape == (48, 48, 3)
        assert abs(img.mean() - 128 / 255) < 0.02


class TestPreprocess:
    def test_centered_crop_is_identity_up_to_rescale(self, rng):
        data = rng.integers(0, 256, size=(128, 128, 3)).astype(np.float64)
        window = CropWindow(x=32, y=32, side=64)
        out = preprocess(data, window)
        assert out.shape == (64, 64, 3)
        assert np.array_equal(out, data[32:96, 32:96, :] / 255.0)

    def test_full_frame_64_is_identity(self, rng):
        data = rng.random((64, 64, 3))
        out = preprocess(data, CropWindow(0, 0, 64))
        assert np.array_equal(out, data)

    def test_idempotent(self, rng):
        data = rng.random((100, 80, 3)) * 255.0
        first = preprocess(data, center_square_window(data))
        second = preprocess(first, CropWindow(0, 0, 64))
        assert np.array_equal(first, second)

    def test_deterministic(self, rng):
        data = rng.random((90, 90, 3))
        window = CropWindow(5, 7, 70)
        assert np.array_equal(preprocess(data, window), preprocess(data, window))

    def test_output_range(self, rng):
        data = rng.integers(0, 256, size=(77, 91, 3)).astype(np.float64)
        out = preprocess(data, center_square_window(data))
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_window_out_of_bounds(self, rng):
        data = rng.random((64, 64, 3))
        with pytest.raises(InputError):
            preprocess(data, CropWindow(x=10, y=0, side=60))
        with pytest.raises(InputError):
            preprocess(data, CropWindow(x=-1, y=0, side=10))

    def test_not_color_image(self):
        with pytest.raises(InputError):
            preprocess(np.zeros((64, 64)), CropWindow(0, 0, 64))

    def test_center_square_window(self):
        win = center_square_window(np.zeros((100, 64, 3)))
        assert win == CropWindow(x=0, y=18, side=64)


class TestNormalizePatch:
    def test_two_values(self):
        out = normalize_patch(np.array([0.0, 2.0]))
        assert np.allclose(out, [-1.0, 1.0], atol=1e-12)

    def test_already_normalized_unchanged(self, rng):
        patch = normalize_patch(rng.random((5, 5)))
        again = normalize_patch(patch)
        assert np.allclose(patch, again, atol=1e-9)

    def test_constant_patch_rejected(self):
        with pytest.raises(DegenerateInputError):
            normalize_patch(np.full((4, 4), 3.7))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_zero_mean_unit_std_property(self, seed):
        patch = np.random.default_rng(seed).random((7, 7))
        if patch.std() < 1e-6:  # pragma: no cover - essentially impossible
            return
        out = normalize_patch(patch)
        assert abs(out.mean()) <= 1e-9
        assert abs(np.sqrt(np.mean((out - out.mean()) ** 2)) - 1.0) <= 1e-9
