"""Sampler search: shared pretraining, the outer BO loop with fine-tune evaluations, final retraining.

Every candidate is scored by fine-tuning a copy of the shared checkpoint for a few
epochs under the candidate's sampling probabilities and measuring validation
accuracy. Agents (BO here, random/RL in ``app.baselines``) only see the
unit-cube encoding z and the resulting score Q.
"""
from __future__ import annotations

import logging
import time
from contextlib import nullcontext
from dataclasses import dataclass
from typing import Callable, List, Literal, Optional, Protocol, Sequence, Tuple

import numpy as np

from app.bayesopt import BOState, propose_next, update
from app.dataset import Dataset
from app.errors import DegenerateSamplerError, PipelineError, SearchError
from app.features import FeatureTable
from app.model import ModelWeights, evaluate, init_weights, train
from app.models import Candidate, ModelConfig, SamplerParams, SearchConfig, SearchResult, TrainHyper
from app.observability import observability
from app.sampler import decode, reference_z, sampler_probs
from app.utils import JsonlWriter

log = logging.getLogger(__name__)

CandidateObserver = Callable[[Candidate], None]


@dataclass(frozen=True)
class Evaluation:
    q: float
    degenerate: bool
    params: SamplerParams
    train_seconds: float = 0.0


class Evaluator(Protocol):
    def evaluate(self, z: np.ndarray, step: int) -> Evaluation: ...


class Agent(Protocol):
    def propose(self) -> np.ndarray: ...

    def observe(self, z: np.ndarray, q: float) -> None: ...


def derive_seed(*entropy: int) -> int:
    return int(np.random.SeedSequence(list(entropy)).generate_state(1)[0])


def finetune_hyper(cfg: SearchConfig, pretrain: TrainHyper) -> TrainHyper:
    """E_f epochs at a constant LR (default: pretrain's LR after its last milestone)."""
    lr = cfg.finetune_lr if cfg.finetune_lr is not None else pretrain.final_lr()
    return pretrain.model_copy(update={"epochs": cfg.finetune_epochs, "lr": lr, "lr_decay_epochs": []})


class FineTuneEvaluator:
    """Scores z by fine-tuning a fresh copy of w_share and measuring validation accuracy."""

    def __init__(
        self,
        cfg: SearchConfig,
        train_set: Dataset,
        val_set: Dataset,
        w_share: ModelWeights,
        table: FeatureTable,
        pretrain_hyper: TrainHyper,
    ):
        if len(table) != len(train_set):
            raise SearchError("search.FineTuneEvaluator", "feature table and training set differ in length")
        self.cfg = cfg
        self.train_set = train_set
        self.val_set = val_set
        self.w_share = w_share
        self.table = table
        # every candidate shares one minibatch seed
        self.hyper = finetune_hyper(cfg, pretrain_hyper).model_copy(update={"seed": derive_seed(cfg.seed, 0)})

    def evaluate(self, z: np.ndarray, step: int) -> Evaluation:
        params = decode(z, self.cfg.segments, self.cfg.num_features, self.cfg.transform_mode)
        try:
            probs = sampler_probs(params, self.table)
        except DegenerateSamplerError:
            log.info("search: step=%d degenerate sampler, Q=0 without training", step)
            return Evaluation(0.0, True, params, 0.0)
        t0 = time.perf_counter()
        tuned = train(self.w_share.copy(reset_momentum=True), self.train_set, probs, self.hyper)
        q = evaluate(tuned, self.val_set)
        return Evaluation(q, False, params, round(time.perf_counter() - t0, 3))


class BayesOptAgent:
    """GP-UCB agent; the first proposal is optionally the uniform-equivalent reference sampler."""

    def __init__(self, cfg: SearchConfig):
        self.cfg = cfg
        self.state = BOState(cfg.gp, cfg.dim, seed=derive_seed(cfg.seed, 11))

    def propose(self) -> np.ndarray:
        if self.cfg.insert_reference and len(self.state) == 0:
            return reference_z(self.cfg.segments, self.cfg.num_features)
        return propose_next(self.state)

    def observe(self, z: np.ndarray, q: float) -> None:
        update(self.state, z, q)


def run_search(
    agent: Agent,
    evaluator: Evaluator,
    cfg: SearchConfig,
    agent_name: str,
    log_path: Optional[str] = None,
    observer: Optional[CandidateObserver] = None,
) -> SearchResult:
    """Shared outer loop: exactly ``outer_steps`` propose -> evaluate -> observe rounds."""
    result = SearchResult(agent=agent_name, transform_mode=cfg.transform_mode)
    t0 = time.perf_counter()
    try:
        with JsonlWriter(log_path) if log_path else nullcontext() as writer:
            for step in range(cfg.outer_steps):
                z = np.clip(np.asarray(agent.propose(), dtype=np.float64), 0.0, 1.0)
                try:
                    ev = evaluator.evaluate(z, step)
                except PipelineError:
                    raise
                except Exception as e:
                    raise SearchError("search.run_search", f"candidate at step {step} failed: {e}") from e
                agent.observe(z, ev.q)
                cand = Candidate(
                    step=step,
                    z=z.tolist(),
                    params=ev.params,
                    q=ev.q,
                    degenerate=ev.degenerate,
                    is_reference=(agent_name == "ss" and cfg.insert_reference and step == 0),
                    train_seconds=ev.train_seconds,
                )
                result.candidates.append(cand)
                if writer is not None:
                    writer.write({
                        "step": step,
                        "z": cand.z,
                        "q": cand.q,
                        "degenerate": cand.degenerate,
                        "wall_time": round(time.perf_counter() - t0, 3),
                    })
                observability.add_event("candidate", {"agent": agent_name, "step": step, "q": ev.q, "degenerate": ev.degenerate})
                if observer is not None:
                    observer(cand)
                log.info("search: agent=%s step=%d Q=%.4f degenerate=%s", agent_name, step, ev.q, ev.degenerate)
    except PipelineError as e:
        log.error("search: aborted at step=%d where=%s message=%s", len(result.candidates), e.where, e.message)
        raise

    result.finalize(cfg.top_k)
    if result.evaluations != cfg.outer_steps:
        raise SearchError("search.run_search", f"expected {cfg.outer_steps} evaluations, logged {result.evaluations}")
    result.phase_seconds["search"] = round(time.perf_counter() - t0, 3)
    log.info("search: agent=%s evaluations=%d best_step=%s best_Q=%.4f", agent_name, result.evaluations, result.best_step, result.best_q)
    return result


def make_evaluator(
    cfg: SearchConfig,
    train_set: Optional[Dataset],
    val_set: Optional[Dataset],
    w_share: Optional[ModelWeights],
    table: Optional[FeatureTable],
    pretrain_hyper: Optional[TrainHyper],
    evaluator: Optional[Evaluator],
) -> Evaluator:
    if evaluator is not None:
        return evaluator
    if train_set is None or val_set is None or w_share is None or table is None:
        raise SearchError("search.make_evaluator", "need train/val data, w_share and a feature table (or an evaluator)")
    return FineTuneEvaluator(cfg, train_set, val_set, w_share, table, pretrain_hyper or TrainHyper())


def run_ss(
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
    return run_search(BayesOptAgent(cfg), ev, cfg, "ss", log_path)


def pretrain_shared(
    train_set: Dataset,
    val_set: Dataset,
    hyper: TrainHyper,
    model_cfg: ModelConfig,
) -> Tuple[ModelWeights, float]:
    """Full uniform-sampling training from scratch: the shared checkpoint and the baseline accuracy."""
    if len(train_set) == 0:
        raise SearchError("search.pretrain_shared", "training set is empty")
    w0 = init_weights(model_cfg.architecture, train_set.dim, train_set.num_classes, hyper.seed, model_cfg.hidden)
    w_share = train(w0, train_set, None, hyper)
    acc = evaluate(w_share, val_set)
    log.info("search: pretrained %s baseline val_acc=%.4f", model_cfg.architecture, acc)
    return w_share, acc


def retrain_final(
    train_set: Dataset,
    val_set: Dataset,
    test_set: Optional[Dataset],
    best: Optional[SamplerParams],
    table: FeatureTable,
    hyper: TrainHyper,
    model_cfg: ModelConfig,
) -> Tuple[ModelWeights, float, Optional[float]]:
    """Train from a fresh init with the sampler's probabilities fixed throughout."""
    if best is None:
        raise SearchError("search.retrain_final", "no non-degenerate sampler to retrain with")
    probs = sampler_probs(best, table)
    w0 = init_weights(model_cfg.architecture, train_set.dim, train_set.num_classes, hyper.seed, model_cfg.hidden)
    w = train(w0, train_set, probs, hyper)
    val_acc = evaluate(w, val_set)
    test_acc = evaluate(w, test_set) if test_set is not None and len(test_set) else None
    log.info("search: retrained val_acc=%.4f test_acc=%s", val_acc, f"{test_acc:.4f}" if test_acc is not None else "n/a")
    return w, val_acc, test_acc


SweepParameter = Literal["segments", "outer_steps"]


def parameter_sweep(
    base: SearchConfig,
    parameter: SweepParameter,
    values: Sequence[int],
    train_set: Optional[Dataset] = None,
    val_set: Optional[Dataset] = None,
    w_share: Optional[ModelWeights] = None,
    table: Optional[FeatureTable] = None,
    pretrain_hyper: Optional[TrainHyper] = None,
    *,
    evaluator: Optional[Evaluator] = None,
) -> List[SearchResult]:
    """One SS run per value of S or E_o, everything else fixed."""
    results: List[SearchResult] = []
    for value in values:
        update_ = {parameter: int(value)}
        if parameter == "outer_steps":
            update_["top_k"] = min(base.top_k, int(value))
        cfg = SearchConfig.model_validate({**base.model_dump(), **update_})
        log.info("search: sweep %s=%d", parameter, value)
        results.append(run_ss(cfg, train_set, val_set, w_share, table, pretrain_hyper, evaluator=evaluator))
    return results
