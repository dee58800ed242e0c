import numpy as np
import pytest

from soymat.ingest import assemble_series, extract_snips
from soymat.synthetic import SynthConfig, generate_environment


def make_series(cfg):
    orthos, bounds, truths = generate_environment(cfg)
    return assemble_series(extract_snips(orthos, bounds), truths)


@pytest.fixture(scope="session")
def small_env():
    """A 3x4-plot noiseless environment: (config, orthomosaics, boundaries, truths)."""
    cfg = SynthConfig(environment_id="envS", plot_rows=3, plot_cols=4, noise_sigma=0.0, seed=5)
    return (cfg,) + generate_environment(cfg)


@pytest.fixture(scope="session")
def small_series(small_env):
    _, orthos, bounds, truths = small_env
    return assemble_series(extract_snips(orthos, bounds), truths)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
