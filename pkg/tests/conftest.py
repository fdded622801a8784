"""Session fixtures for the acceptance suite.

Training happens once per session with frozen seeds. The default profile is
the reduced CI budget; set ANODEC_ACCEPTANCE=canonical to run the full
budgets (slower, tighter model-quality bound).
"""

import os
import time

import pytest

from anodec.evaluate import AnodecController, PidController, evaluate_suite
from anodec.learn import (TrainConfig, collect_dataset, default_probe_plan,
                          train_controller, train_model)
from anodec.odecore import Grid
from anodec.plant import Plant, PlantConfig

CANONICAL = os.environ.get("ANODEC_ACCEPTANCE", "ci").lower() == "canonical"


def _budget(seed):
    cfg = TrainConfig(seed=seed)
    return cfg if CANONICAL else cfg.ci_profile()


@pytest.fixture(scope="session")
def acceptance_profile():
    return "canonical" if CANONICAL else "ci"


@pytest.fixture(scope="session")
def acceptance_dataset():
    plant = Plant(PlantConfig(), seed=42)
    return collect_dataset(plant, default_probe_plan(T=5.0, seed=13))


@pytest.fixture(scope="session")
def acceptance_model(acceptance_dataset):
    params, report = train_model(acceptance_dataset, _budget(seed=3))
    return params, report


@pytest.fixture(scope="session")
def acceptance_controller(acceptance_model):
    model_params, _ = acceptance_model
    ctrl, report = train_controller(model_params, _budget(seed=7),
                                    grid=Grid(T=5.0))
    return ctrl, report


@pytest.fixture(scope="session")
def acceptance_suite(acceptance_controller):
    ctrl, _ = acceptance_controller
    controllers = {"anodec": AnodecController(ctrl), "pid": PidController()}
    t0 = time.perf_counter()
    report = evaluate_suite(Plant(PlantConfig()), controllers, seed=2024)
    return report, time.perf_counter() - t0
