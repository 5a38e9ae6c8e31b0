import numpy as np
import pytest

from fabsim import Runner
from fabsim.config import ExperimentConfig


@pytest.fixture
def runner():
    return Runner()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def small_config(tmp_path):
    return ExperimentConfig.model_validate(
        {
            "name": "small",
            "seed": 3,
            "iterations": 200,
            "algorithm": "fab",
            "lam": 10.0,
            "cadence": 20,
            "problem": {"kind": "quadratic", "n": 4, "params": {"dx": 3, "dy": 3}},
            "topology": {"nu": 0.5},
            "steps": {"eta_x": 0.05, "eta_y": 0.05, "eta_z": 0.05, "penalty_scaled": True},
            "stop": {"rel_err_threshold": None},
            "output": str(tmp_path / "out"),
        }
    )
