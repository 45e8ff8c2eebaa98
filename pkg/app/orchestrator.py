# app/orchestrator.py
"""Stage runner behind every CLI command.

Each command loads the run config, runs its stages under observability spans,
writes artifacts below ``paths.workdir`` and returns a JSON-safe summary. Every
artifact embeds the config that produced it.
"""
from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from app import dataset as ds_mod
from app.baselines import random_search, rl_search
from app.config import load_run_config
from app.dataset import Dataset
from app.errors import ArtifactError, PipelineError
from app.features import FeatureTable, extract_features, load_feature_table, save_feature_table
from app.metrics import aggregate_report, random_rank_baseline, sr_tr_study, write_report
from app.model import ModelWeights, evaluate, load_weights, save_weights
from app.models import AgentName, RunConfig, SamplerParams, SearchResult, TrainHyper, TransformMode
from app.observability import observability
from app.search import parameter_sweep, pretrain_shared, retrain_final, run_ss
from app.utils import read_json, write_json

log = logging.getLogger(__name__)

SWEEP_PARAMS = {"S": "segments", "E_o": "outer_steps", "segments": "segments", "outer_steps": "outer_steps"}


class Layout:
    """Artifact paths below the workdir."""

    def __init__(self, workdir: str):
        self.root = workdir

    def data(self, tag: str) -> str:
        return os.path.join(self.root, "data", f"{tag}.csv")

    @property
    def checkpoint(self) -> str:
        return os.path.join(self.root, "pretrain", "checkpoint.json")

    @property
    def baseline(self) -> str:
        return os.path.join(self.root, "pretrain", "baseline.json")

    @property
    def features(self) -> str:
        return os.path.join(self.root, "features", "features.csv")

    def search_dir(self, agent: str, transform: str) -> str:
        return os.path.join(self.root, "search", f"{agent}-{transform}")

    def path(self, *parts: str) -> str:
        return os.path.join(self.root, *parts)


def provenance(cfg: RunConfig) -> Dict[str, Any]:
    return cfg.model_dump(mode="json")


def retrain_hyper(cfg: RunConfig) -> TrainHyper:
    return cfg.search.retrain if cfg.search.retrain is not None else cfg.pretrain


@dataclass
class Task:
    """Everything the outer loop needs: splits, the shared checkpoint and the static features."""

    train: Dataset
    val: Dataset
    test: Dataset
    w_share: ModelWeights
    baseline_acc: float
    table: FeatureTable


# --------------------------------------------------------------- stage bodies

def make_splits(cfg: RunConfig) -> Tuple[Dataset, Dataset, Dataset]:
    """Stratified split of the clean blobs, then symmetric label noise on ``data.noise_splits`` only."""
    d = cfg.data
    full = ds_mod.generate_blobs(d.num_classes, d.dim, d.per_class, d.separation, d.spread, d.seed)
    parts = ds_mod.split(full, d.fractions, d.seed)
    return tuple(
        ds_mod.inject_label_noise(part, d.noise_rate, d.seed) if part.split_tag in d.noise_splits else part
        for part in parts
    )


def build_task(cfg: RunConfig) -> Task:
    """In-memory gen-data -> pretrain -> features."""
    train, val, test = make_splits(cfg)
    w_share, acc = pretrain_shared(train, val, cfg.pretrain, cfg.model)
    return Task(train, val, test, w_share, acc, extract_features(w_share, train))


def search_and_retrain(
    task: Task,
    cfg: RunConfig,
    agent: Optional[AgentName] = None,
    transform: Optional[TransformMode] = None,
    log_path: Optional[str] = None,
    retrain: bool = True,
) -> SearchResult:
    """Run one agent on the task, then retrain from scratch with its best sampler."""
    scfg = cfg.search.model_copy(update={
        "agent": agent or cfg.search.agent,
        "transform_mode": transform or cfg.search.transform_mode,
    })
    args = (scfg, task.train, task.val, task.w_share, task.table, cfg.pretrain)
    if scfg.agent == "ss":
        res = run_ss(*args, log_path=log_path)
    elif scfg.agent == "random":
        res = random_search(*args, log_path=log_path)
    else:
        res = rl_search(scfg, scfg.rl, *args[1:], log_path=log_path)
    res.pretrain_acc = task.baseline_acc
    if retrain and res.best_params is not None:
        t0 = time.perf_counter()
        _, res.final_val_acc, res.final_test_acc = retrain_final(
            task.train, task.val, task.test, res.best_params, task.table, retrain_hyper(cfg), cfg.model
        )
        res.phase_seconds["retrain"] = round(time.perf_counter() - t0, 3)
    return res


def _load_splits(layout: Layout) -> Dict[str, Dataset]:
    return {tag: ds_mod.load(layout.data(tag)) for tag in ("train", "val", "test")}


def _load_task(layout: Layout) -> Task:
    splits = _load_splits(layout)
    baseline = read_json(layout.baseline)
    table = load_feature_table(layout.features)
    if len(table) != len(splits["train"]):
        raise ArtifactError("orchestrator.load_task", "feature table does not match the training split; rerun `features`")
    return Task(
        splits["train"], splits["val"], splits["test"],
        load_weights(layout.checkpoint), float(baseline["val_acc"]), table,
    )


def _load_result(path: str) -> SearchResult:
    payload = read_json(path)
    body = payload.get("result", payload) if isinstance(payload, dict) else payload
    try:
        return SearchResult.model_validate(body)
    except ValueError as e:
        raise ArtifactError("orchestrator.load_result", f"{path} is not a search result: {e}")


def _load_sampler(path: str) -> SamplerParams:
    """Accepts a bare SamplerParams JSON or a search result (its best sampler is used)."""
    payload = read_json(path)
    if isinstance(payload, dict) and ("result" in payload or "candidates" in payload):
        res = _load_result(path)
        if res.best_params is None:
            raise ArtifactError("orchestrator.load_sampler", f"{path} has no non-degenerate sampler")
        return res.best_params
    try:
        return SamplerParams.model_validate(payload.get("params", payload))
    except (ValueError, AttributeError) as e:
        raise ArtifactError("orchestrator.load_sampler", f"{path} is not a sampler: {e}")


# ---------------------------------------------------------------- commands

def cmd_gen_data(cfg: RunConfig, layout: Layout, stage: Callable, **_: Any) -> Dict[str, Any]:
    train, val, test = stage("gen_data", make_splits, cfg)
    paths = {}
    for part in (train, val, test):
        ds_mod.save(part, layout.data(part.split_tag))
        paths[part.split_tag] = layout.data(part.split_tag)
    sizes = {p.split_tag: len(p) for p in (train, val, test)}
    noisy = int(train.noise_flags.sum()) if train.noise_flags is not None else 0
    write_json(layout.path("data", "manifest.json"), {"config": provenance(cfg), "sizes": sizes, "train_noisy": noisy})
    return {"artifacts": paths, "sizes": sizes}


def cmd_pretrain(cfg: RunConfig, layout: Layout, stage: Callable, **_: Any) -> Dict[str, Any]:
    splits = _load_splits(layout)
    w_share, acc = stage("pretrain", pretrain_shared, splits["train"], splits["val"], cfg.pretrain, cfg.model)
    test_acc = evaluate(w_share, splits["test"]) if len(splits["test"]) else None
    save_weights(w_share, layout.checkpoint)
    write_json(layout.baseline, {"config": provenance(cfg), "val_acc": acc, "test_acc": test_acc})
    return {"artifacts": {"checkpoint": layout.checkpoint, "baseline": layout.baseline}, "val_acc": acc, "test_acc": test_acc}


def cmd_features(cfg: RunConfig, layout: Layout, stage: Callable, **_: Any) -> Dict[str, Any]:
    train = ds_mod.load(layout.data("train"))
    w_pre = load_weights(layout.checkpoint)
    table = stage("features", extract_features, w_pre, train)
    save_feature_table(table, layout.features)
    write_json(layout.path("features", "manifest.json"), {"config": provenance(cfg), "rows": len(table)})
    return {"artifacts": {"features": layout.features}, "rows": len(table)}


def cmd_search(
    cfg: RunConfig,
    layout: Layout,
    stage: Callable,
    agent: Optional[AgentName] = None,
    transform: Optional[TransformMode] = None,
    **_: Any,
) -> Dict[str, Any]:
    agent = agent or cfg.search.agent
    transform = transform or cfg.search.transform_mode
    task = _load_task(layout)
    outdir = layout.search_dir(agent, transform)
    obs_path = os.path.join(outdir, "observations.jsonl")
    res = search_and_retrain(task, cfg, agent, transform, log_path=obs_path, retrain=False)
    if res.best_params is not None:
        _, res.final_val_acc, res.final_test_acc = stage(
            "retrain", retrain_final, task.train, task.val, task.test, res.best_params, task.table, retrain_hyper(cfg), cfg.model
        )
        res.phase_seconds["retrain"] = observability.stage_seconds().get("retrain", 0.0)
    else:
        log.warning("orchestrator: every candidate was degenerate; skipping the final retrain")
    result_path = os.path.join(outdir, "result.json")
    write_json(result_path, {"config": provenance(cfg), "result": res.model_dump(mode="json")})
    return {
        "artifacts": {"result": result_path, "observations": obs_path},
        "agent": agent,
        "transform": transform,
        "evaluations": res.evaluations,
        "best_q": res.best_q,
        "pretrain_acc": res.pretrain_acc,
        "final_val_acc": res.final_val_acc,
    }


def cmd_retrain(
    cfg: RunConfig, layout: Layout, stage: Callable, sampler: Optional[str] = None, out: Optional[str] = None, **_: Any
) -> Dict[str, Any]:
    if not sampler:
        raise ArtifactError("orchestrator.retrain", "--sampler is required")
    params = _load_sampler(sampler)
    splits = _load_splits(layout)
    table = load_feature_table(layout.features)
    _, val_acc, test_acc = stage(
        "retrain", retrain_final, splits["train"], splits["val"], splits["test"], params, table, retrain_hyper(cfg), cfg.model
    )
    out = out or layout.path("retrain", "retrain.json")
    write_json(out, {
        "config": provenance(cfg),
        "sampler": params.model_dump(mode="json"),
        "val_acc": val_acc,
        "test_acc": test_acc,
    })
    return {"artifacts": {"retrain": out}, "val_acc": val_acc, "test_acc": test_acc}


def cmd_sr_tr(
    cfg: RunConfig, layout: Layout, stage: Callable, result: Optional[str] = None, out: Optional[str] = None, **_: Any
) -> Dict[str, Any]:
    if not result:
        raise ArtifactError("orchestrator.sr_tr", "--result is required")
    run = _load_result(result)
    splits = _load_splits(layout)
    table = load_feature_table(layout.features)
    report = stage(
        "sr_tr", sr_tr_study, run, splits["train"], splits["val"], table,
        retrain_hyper(cfg), cfg.model, cfg.study.last_m, cfg.study.repeats,
    )
    random_sr = random_rank_baseline(cfg.study.last_m, 5, cfg.search.seed)
    out = out or layout.path("sr-tr", f"{run.agent}-{run.transform_mode}.json")
    write_json(out, {"config": provenance(cfg), "report": report.model_dump(mode="json"), "random_sr": random_sr})
    return {"artifacts": {"report": out}, "sr": report.sr, "tr": report.tr, "random_sr": random_sr}


def cmd_report(
    cfg: RunConfig, layout: Layout, stage: Callable, files: Sequence[str] = (), out: Optional[str] = None, **_: Any
) -> Dict[str, Any]:
    if not files:
        raise ArtifactError("orchestrator.report", "no result files given")
    results = [_load_result(f) for f in files]
    train = table = None
    if os.path.exists(layout.data("train")) and os.path.exists(layout.features):
        train = ds_mod.load(layout.data("train"))
        table = load_feature_table(layout.features)
    run_ids = [os.path.basename(os.path.dirname(os.path.abspath(f))) or f"run{i}" for i, f in enumerate(files)]
    tables = stage("report", aggregate_report, results, train, table, run_ids)
    written = write_report(tables, out or layout.path("report"), provenance(cfg))
    return {"artifacts": written, "runs": len(results)}


def cmd_sweep(
    cfg: RunConfig,
    layout: Layout,
    stage: Callable,
    param: Optional[str] = None,
    values: Sequence[int] = (),
    out: Optional[str] = None,
    **_: Any,
) -> Dict[str, Any]:
    if param not in SWEEP_PARAMS or not values:
        raise ArtifactError("orchestrator.sweep", "--param must be S or E_o and --values must be non-empty")
    field = SWEEP_PARAMS[param]
    task = _load_task(layout)
    results = stage(
        "sweep", parameter_sweep, cfg.search, field, list(values),
        task.train, task.val, task.w_share, task.table, cfg.pretrain,
    )
    rows = [{"value": int(v), "best_q": r.best_q, "best_step": r.best_step, "evaluations": r.evaluations}
            for v, r in zip(values, results)]
    out = out or layout.path("sweep", f"{field}.json")
    write_json(out, {"config": provenance(cfg), "parameter": field, "rows": rows})
    return {"artifacts": {"sweep": out}, "parameter": field, "rows": rows}


COMMANDS: Dict[str, Callable[..., Dict[str, Any]]] = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "features": cmd_features,
    "search": cmd_search,
    "retrain": cmd_retrain,
    "sr-tr": cmd_sr_tr,
    "report": cmd_report,
    "sweep": cmd_sweep,
}


def run_command(command: str, config_source: str, workdir: Optional[str] = None, **options: Any) -> Dict[str, Any]:
    """
    Load the config and run one command; never raises.
    Returns {"status": "success", ...} or the error document of the failing stage.
    """
    verbose = os.getenv("VERBOSE_RUN", "0") not in ("0", "", "false", "False")
    t0 = time.time()
    timeline: List[Dict[str, Any]] = []

    def _stage(name: str, fn, *args, **kwargs):
        s0 = time.time()
        log.info("orchestrator: → %s", name)
        observability.stage_start(name)
        observability.add_event("stage", {"name": name, "state": "started"})
        out = None
        try:
            out = fn(*args, **kwargs)
            return out
        finally:
            dur = observability.stage_end(name, type(out).__name__ if out is not None else None)
            log.info("orchestrator: ← %s (%.3fs)", name, round(time.time() - s0, 3))
            if verbose:
                timeline.append({"stage": name, "duration_s": dur})

    def _error(payload: Dict[str, Any]) -> Dict[str, Any]:
        observability.add_event("error", {"where": payload["where"], "message": payload["message"]})
        observability.finish_run("error")
        payload.update({"command": command, "elapsed_seconds": round(time.time() - t0, 3)})
        if verbose:
            payload["timeline"] = timeline
            payload["observability"] = observability.snapshot()
        return payload

    observability.start_run(command)
    handler = COMMANDS.get(command)
    if handler is None:
        return _error({"status": "error", "where": "orchestrator", "message": f"unknown command {command!r}", "validation_errors": []})
    try:
        cfg = load_run_config(config_source)
        if workdir:
            cfg = cfg.model_copy(update={"paths": cfg.paths.model_copy(update={"workdir": workdir})})
        log.info("orchestrator: start command=%s workdir=%s", command, cfg.paths.workdir)
        out = handler(cfg, Layout(cfg.paths.workdir), _stage, **options)
    except PipelineError as e:
        log.error("orchestrator: %s failed where=%s message=%s", command, e.where, e.message)
        return _error(e.to_dict())
    except Exception as e:
        log.exception("orchestrator: unhandled failure")
        return _error({"status": "error", "where": "orchestrator", "message": str(e), "validation_errors": []})

    observability.finish_run("success")
    result = {"status": "success", "command": command, **out, "elapsed_seconds": round(time.time() - t0, 3)}
    if verbose:
        result["timeline"] = timeline
        result["observability"] = observability.snapshot()
    return result
