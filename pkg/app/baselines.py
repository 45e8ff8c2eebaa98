"""Comparison agents run under the same budget and evaluator as the BO search.

Also hosts the synthetic-objective evaluator, which replaces the fine-tune loop
with a closed-form score so agents can be exercised without any training.
"""
from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from app.dataset import Dataset
from app.features import FeatureTable
from app.model import ModelWeights
from app.models import RLConfig, SearchConfig, SearchResult, TrainHyper, TransformMode
from app.sampler import decode
from app.search import Evaluation, Evaluator, derive_seed, make_evaluator, run_search

log = logging.getLogger(__name__)


class RandomSearchAgent:
    def __init__(self, dim: int, seed: int):
        self.dim = dim
        self.rng = np.random.default_rng(seed)

    def propose(self) -> np.ndarray:
        return self.rng.random(self.dim)

    def observe(self, z: np.ndarray, q: float) -> None:
        pass


class PolicyGradientAgent:
    """Diagonal Gaussian policy over the unit cube, REINFORCE with a running-mean baseline."""

    def __init__(self, dim: int, rl: RLConfig, seed: int):
        self.rl = rl
        self.rng = np.random.default_rng(seed)
        self.mean = np.full(dim, rl.init_mean)
        self.stddev = np.full(dim, rl.init_stddev)
        self.baseline = 0.0
        self.observed = 0
        self._last_raw: Optional[np.ndarray] = None

    def propose(self) -> np.ndarray:
        raw = self.mean + self.stddev * self.rng.standard_normal(self.mean.size)
        self._last_raw = raw
        return np.clip(raw, 0.0, 1.0)

    def observe(self, z: np.ndarray, q: float) -> None:
        raw = self._last_raw if self._last_raw is not None else np.asarray(z, dtype=np.float64)
        self._last_raw = None
        # baseline is the mean of all earlier rewards; the first reward has zero advantage
        advantage = q - self.baseline if self.observed else 0.0
        self.observed += 1
        self.baseline += (q - self.baseline) / self.observed
        score = (raw - self.mean) / self.stddev ** 2
        self.mean = np.clip(self.mean + self.rl.learning_rate * advantage * score, 0.0, 1.0)
        self.stddev = np.maximum(self.stddev * self.rl.stddev_decay, self.rl.stddev_floor)


class QuadraticEvaluator:
    """Synthetic objective Q(z) = clip(peak - scale * ||z - z*||^2, 0, 1); no training involved."""

    def __init__(
        self,
        optimum: np.ndarray,
        segments: int = 4,
        num_features: int = 2,
        mode: TransformMode = "cgf",
        peak: float = 1.0,
        scale: float = 1.0,
    ):
        self.optimum = np.asarray(optimum, dtype=np.float64)
        self.segments = segments
        self.num_features = num_features
        self.mode = mode
        self.peak = peak
        self.scale = scale
        self.calls = 0

    def value(self, z: np.ndarray) -> float:
        d2 = float(np.sum((np.asarray(z, dtype=np.float64) - self.optimum) ** 2))
        return float(np.clip(self.peak - self.scale * d2, 0.0, 1.0))

    def evaluate(self, z: np.ndarray, step: int) -> Evaluation:
        self.calls += 1
        params = decode(z, self.segments, self.num_features, self.mode)
        return Evaluation(self.value(z), False, params, 0.0)


def random_search(
    cfg: SearchConfig,
    train_set: Optional[Dataset] = None,
    val_set: Optional[Dataset] = None,
    w_share: Optional[ModelWeights] = None,
    table: Optional[FeatureTable] = None,
    pretrain_hyper: Optional[TrainHyper] = None,
    *,
    evaluator: Optional[Evaluator] = None,
    log_path: Optional[str] = None,
) -> SearchResult:
    ev = make_evaluator(cfg, train_set, val_set, w_share, table, pretrain_hyper, evaluator)
    agent = RandomSearchAgent(cfg.dim, derive_seed(cfg.seed, 12))
    return run_search(agent, ev, cfg, "random", log_path)


def rl_search(
    cfg: SearchConfig,
    rl: Optional[RLConfig] = None,
    train_set: Optional[Dataset] = None,
    val_set: Optional[Dataset] = None,
    w_share: Optional[ModelWeights] = None,
    table: Optional[FeatureTable] = None,
    pretrain_hyper: Optional[TrainHyper] = None,
    *,
    evaluator: Optional[Evaluator] = None,
    log_path: Optional[str] = None,
) -> SearchResult:
    ev = make_evaluator(cfg, train_set, val_set, w_share, table, pretrain_hyper, evaluator)
    agent = PolicyGradientAgent(cfg.dim, rl or cfg.rl, derive_seed(cfg.seed, 13))
    return run_search(agent, ev, cfg, "rl", log_path)
