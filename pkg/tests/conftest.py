from __future__ import annotations

import os

import numpy as np
import pytest

from app.config import load_run_config
from app.features import FeatureTable, build_table
from app.models import RunConfig
from app.orchestrator import Task, build_task

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
TINY_CONFIG = os.path.join(ROOT, "templates", "run.tiny.json")


def random_table(n: int, seed: int = 0, zero_grads: bool = False) -> FeatureTable:
    rng = np.random.default_rng(seed)
    grads = np.zeros(n) if zero_grads else rng.exponential(1.0, size=n)
    return build_table(rng.exponential(1.0, size=n), rng.random(n) * np.log(9.0), grads)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_cfg() -> RunConfig:
    return load_run_config(TINY_CONFIG)


@pytest.fixture(scope="session")
def tiny_task(tiny_cfg: RunConfig) -> Task:
    return build_task(tiny_cfg)


@pytest.fixture
def table() -> FeatureTable:
    return random_table(200, seed=7)
