"""
Pytest fixtures for pfsgld tests.
"""
import os

import numpy as np
import pytest
from dotenv import load_dotenv
from loguru import logger

from pfsgld.model import SYNTHETIC_PARAMS, ModelKind, ModelParams, get_model
from tests.mocks.synthetic_data import write_price_csv, write_series_csv


# Load test environment variables
@pytest.fixture(scope="session", autouse=True)
def load_env():
    """Load .env.test file if it exists, otherwise load .env"""
    if os.path.exists(".env.test"):
        load_dotenv(".env.test", override=True)
    else:
        load_dotenv(override=True)

    # Set test mode environment variable
    os.environ["TESTING"] = "1"

    yield

    # Cleanup
    if "TESTING" in os.environ:
        del os.environ["TESTING"]


@pytest.fixture(autouse=True)
def reset_logging():
    """Drop sinks installed by the CLI/server so they never outlive a captured stream"""
    yield
    logger.remove()
    logger.disable("pfsgld")


@pytest.fixture
def isolated_settings(monkeypatch, tmp_path):
    """Point every PFSGLD_* setting at a temporary directory"""
    monkeypatch.setenv("PFSGLD_THREADS", "1")
    monkeypatch.setenv("PFSGLD_LOG_LEVEL", "WARNING")
    monkeypatch.setenv("PFSGLD_OUTPUT_DIR", str(tmp_path / "runs"))
    monkeypatch.setenv("PFSGLD_REFERENCE_DIR", str(tmp_path / "reference"))
    monkeypatch.setenv("PFSGLD_RECORD_TIMING", "false")
    return tmp_path


@pytest.fixture
def rng():
    """Fixed-seed generator"""
    return np.random.default_rng(20240601)


@pytest.fixture
def lgssm_params():
    """LGSSM parameters of the synthetic experiments (phi=0.9, sigma=0.7, tau=1.0)"""
    return SYNTHETIC_PARAMS[ModelKind.LGSSM]


@pytest.fixture
def svm_params():
    """SVM parameters of the synthetic experiments (phi=0.9, sigma=0.5, tau=0.5)"""
    return SYNTHETIC_PARAMS[ModelKind.SVM]


@pytest.fixture
def garch_params():
    """GARCH parameters built from (alpha, beta, gamma, tau) = (0.1, 0.8, 0.05, 0.3)"""
    return SYNTHETIC_PARAMS[ModelKind.GARCH]


@pytest.fixture
def all_params(lgssm_params, svm_params, garch_params):
    return {ModelKind.LGSSM: lgssm_params, ModelKind.SVM: svm_params, ModelKind.GARCH: garch_params}


@pytest.fixture
def lgssm_series(lgssm_params):
    """64 LGSSM observations"""
    trajectory = get_model(lgssm_params).simulate(lgssm_params, 64, np.random.default_rng(7))
    return trajectory.y


@pytest.fixture
def svm_series(svm_params):
    """40 SVM observations"""
    trajectory = get_model(svm_params).simulate(svm_params, 40, np.random.default_rng(11))
    return trajectory.y


@pytest.fixture
def lgssm_data_file(tmp_path, lgssm_series):
    """LGSSM observations as a trajectory CSV"""
    return write_series_csv(tmp_path / "lgssm.csv", lgssm_series)


@pytest.fixture
def svm_data_file(tmp_path, svm_series):
    """SVM observations as a trajectory CSV"""
    return write_series_csv(tmp_path / "svm.csv", svm_series)


@pytest.fixture
def price_file(tmp_path):
    """Hourly prices spanning two ISO weeks"""
    return write_price_csv(tmp_path / "prices.csv")


@pytest.fixture
def small_params():
    """Lightly correlated LGSSM used where exact oracles get expensive"""
    return ModelParams(ModelKind.LGSSM, np.array([0.5, 0.8, 0.6]))
