"""Ranking checks of the fine-tune approximation and report tables over search runs."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import spearmanr

from app.dataset import Dataset
from app.errors import DegenerateSamplerError, MetricsError
from app.features import FeatureTable
from app.models import ModelConfig, RankReport, SearchResult, TrainHyper
from app.sampler import sampler_probs
from app.search import derive_seed, retrain_final
from app.utils import write_json

log = logging.getLogger(__name__)


def spearman(a: Sequence[float], b: Sequence[float]) -> float:
    """Spearman's rho with average ranks for ties."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise MetricsError("metrics.spearman", "inputs must be vectors of equal length")
    if x.size < 2:
        raise MetricsError("metrics.spearman", "need at least two entries")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise MetricsError("metrics.spearman", "rank correlation is undefined for a constant vector")
    rho = spearmanr(x, y).statistic
    return float(np.clip(rho, -1.0, 1.0))


def descending_ranks(scores: Sequence[float]) -> List[int]:
    """1 = best; ties keep their original order so the result is a permutation of 1..m."""
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    ranks = np.empty(order.size, dtype=np.int64)
    ranks[order] = np.arange(1, order.size + 1)
    return ranks.tolist()


def rank_report(steps: Sequence[int], approx: Sequence[float], truth: Sequence[float]) -> RankReport:
    approx_rank = descending_ranks(approx)
    truth_rank = descending_ranks(truth)
    top = approx_rank.index(1)
    return RankReport(
        sampler_steps=list(steps),
        approx_scores=list(approx),
        truth_scores=list(truth),
        approx_rank=approx_rank,
        truth_rank=truth_rank,
        sr=spearman(approx, truth),
        tr=truth_rank[top],
    )


def sr_tr_study(
    run: SearchResult,
    train_set: Dataset,
    val_set: Dataset,
    table: FeatureTable,
    retrain_hyper: TrainHyper,
    model_cfg: ModelConfig,
    last_m: int = 10,
    repeats: int = 1,
) -> RankReport:
    """Retrain the last ``last_m`` non-degenerate candidates from scratch and compare rankings."""
    pool = [c for c in run.candidates if not c.degenerate]
    if len(pool) < last_m:
        raise MetricsError("metrics.sr_tr_study", f"need {last_m} non-degenerate candidates, run has {len(pool)}")
    chosen = pool[-last_m:]
    # repeat r uses the same init and minibatch seed for every candidate
    truth: List[float] = []
    for cand in chosen:
        accs = []
        for r in range(repeats):
            hyper = retrain_hyper.model_copy(update={"seed": derive_seed(retrain_hyper.seed, r)})
            _, val_acc, _ = retrain_final(train_set, val_set, None, cand.params, table, hyper, model_cfg)
            accs.append(val_acc)
        truth.append(float(np.mean(accs)))
        log.info("metrics: step=%d approx_Q=%.4f truth=%.4f", cand.step, cand.q, truth[-1])
    report = rank_report([c.step for c in chosen], [c.q for c in chosen], truth)
    log.info("metrics: SR=%.3f TR=%d over %d samplers", report.sr, report.tr, last_m)
    return report


def random_rank_baseline(m: int = 10, pairs: int = 5, seed: int = 0) -> float:
    """Mean SR of independent random permutation pairs."""
    rng = np.random.default_rng(seed)
    return float(np.mean([spearman(rng.permutation(m), rng.permutation(m)) for _ in range(pairs)]))


@dataclass
class ReportTables:
    curves: pd.DataFrame
    summary: pd.DataFrame
    noise: pd.DataFrame


def noise_probability_means(probs: np.ndarray, flags: np.ndarray) -> Dict[str, float]:
    flags = np.asarray(flags, dtype=bool)
    if probs.shape != flags.shape:
        raise MetricsError("metrics.noise_probability_means", "one noise flag per instance is required")
    clean = float(probs[~flags].mean()) if np.any(~flags) else float("nan")
    flipped = float(probs[flags].mean()) if np.any(flags) else float("nan")
    ratio = flipped / clean if clean > 0 else float("nan")
    return {"mean_prob_clean": clean, "mean_prob_flipped": flipped, "ratio": ratio}


def aggregate_report(
    results: Sequence[SearchResult],
    train_set: Optional[Dataset] = None,
    table: Optional[FeatureTable] = None,
    run_ids: Optional[Sequence[str]] = None,
) -> ReportTables:
    """best-so-far curves per agent, accuracy summary, and clean vs flipped sampling probability."""
    if run_ids is None:
        run_ids = [f"run{i}" for i in range(len(results))]
    if len(run_ids) != len(results):
        raise MetricsError("metrics.aggregate_report", "one run id per result is required")
    if train_set is not None and table is not None and len(train_set) != len(table):
        raise MetricsError("metrics.aggregate_report", "feature table does not match the training set")

    curve_rows, summary_rows, noise_rows = [], [], []
    for run_id, res in zip(run_ids, results):
        for cand, best in zip(res.candidates, res.best_so_far()):
            curve_rows.append({
                "run": run_id, "agent": res.agent, "transform": res.transform_mode,
                "step": cand.step, "q": cand.q, "best_so_far": best,
            })
        delta = None
        if res.final_val_acc is not None and res.pretrain_acc is not None:
            delta = res.final_val_acc - res.pretrain_acc
        summary_rows.append({
            "run": run_id, "agent": res.agent, "transform": res.transform_mode,
            "best_q": res.best_q, "pretrain_acc": res.pretrain_acc, "final_val_acc": res.final_val_acc,
            "final_test_acc": res.final_test_acc, "delta_vs_baseline": delta,
        })
        if train_set is not None and table is not None and train_set.noise_flags is not None and res.best_params:
            try:
                probs = sampler_probs(res.best_params, table)
            except DegenerateSamplerError:
                continue
            noise_rows.append({"run": run_id, "agent": res.agent, **noise_probability_means(probs, train_set.noise_flags)})

    return ReportTables(
        curves=pd.DataFrame(curve_rows, columns=["run", "agent", "transform", "step", "q", "best_so_far"]),
        summary=pd.DataFrame(summary_rows, columns=[
            "run", "agent", "transform", "best_q", "pretrain_acc", "final_val_acc", "final_test_acc", "delta_vs_baseline",
        ]),
        noise=pd.DataFrame(noise_rows, columns=["run", "agent", "mean_prob_clean", "mean_prob_flipped", "ratio"]),
    )


def write_report(tables: ReportTables, outdir: str, config: Optional[Dict[str, Any]] = None) -> Dict[str, str]:
    """CSV per table, plus a JSON twin carrying ``config`` next to the rows."""
    os.makedirs(outdir, exist_ok=True)
    written: Dict[str, str] = {}
    for name in ("curves", "summary", "noise"):
        frame: pd.DataFrame = getattr(tables, name)
        csv_path = os.path.join(outdir, f"{name}.csv")
        frame.to_csv(csv_path, index=False, float_format="%.10g")
        # to_json turns NaN into null
        rows = json.loads(frame.to_json(orient="records"))
        write_json(os.path.join(outdir, f"{name}.json"), {"config": config, "rows": rows})
        written[name] = csv_path
    return written
