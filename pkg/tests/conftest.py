import numpy as np
import pytest

from kinverify import RunConfig, synth_kin_dataset


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """16-family easy dataset shared by protocol/CLI tests."""
    root = tmp_path_factory.mktemp("tiny")
    manifest = synth_kin_dataset(root, n_families=16, difficulty=0.1, seed=5)
    return manifest


def small_config(manifest, **overrides) -> RunConfig:
    """Cheap but complete pipeline configuration for small test datasets."""
    base = dict(
        manifest=str(manifest),
        bsif_sizes=(3, 9),
        lbp_radii=(1, 2, 3),
        bsif_bits=8,
        patch_count=1000,
        m_mode1=10,
        m_mode2=6,
        pca_cap=12,
        sweeps=2,
    )
    base.update(overrides)
    return RunConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
