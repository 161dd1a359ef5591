import numpy as np
import pytest

from purkinje_ecg import fixtures, pipeline


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("fixture_set")
    fixtures.write_fixture_set(str(out))
    return out


@pytest.fixture(scope="session")
def run_config(fixture_dir):
    return pipeline.load_config(str(fixture_dir / "run_config.json"))


@pytest.fixture(scope="session")
def forward_model(run_config, fixture_dir):
    fm = pipeline.ForwardModel(run_config, base_dir=str(fixture_dir))
    fm.build_synthetic_reference(np.random.default_rng(7))
    return fm


@pytest.fixture(scope="session")
def synthetic_theta():
    return np.asarray(fixtures.SYNTHETIC_THETA)
