from __future__ import annotations

import math
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

TransformMode = Literal["cdf", "cgf"]
Architecture = Literal["softmax_regression", "mlp1"]
AgentName = Literal["ss", "random", "rl"]
SplitName = Literal["train", "val", "test"]


class _Config(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


# --- run configuration sections ---

class DataConfig(_Config):
    num_classes: int = Field(default=10, ge=2)
    dim: int = Field(default=16, ge=1)
    per_class: int = Field(default=500, ge=1)
    separation: float = 3.0
    spread: float = Field(default=1.0, gt=0)
    noise_rate: float = Field(default=0.4, ge=0, le=1)
    # train / val / test
    fractions: List[float] = Field(default_factory=lambda: [0.8, 0.1, 0.1], min_length=3, max_length=3)
    # splits whose labels get corrupted; val/test stay clean by default
    noise_splits: List[SplitName] = Field(default_factory=lambda: ["train"])
    seed: int = 0


class ModelConfig(_Config):
    architecture: Architecture = "softmax_regression"
    hidden: int = Field(default=32, ge=1)


class TrainHyper(_Config):
    batch_size: int = Field(default=32, ge=1)
    lr: float = Field(default=0.1, ge=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    weight_decay: float = Field(default=5e-4, ge=0)
    epochs: int = Field(default=30, ge=1)
    lr_decay_epochs: List[int] = Field(default_factory=lambda: [20])
    lr_decay_factor: float = Field(default=0.1, gt=0)
    seed: int = 0

    def lr_at(self, epoch: int) -> float:
        """Step-decay schedule; ``epoch`` is 0-based and a milestone applies from that epoch on."""
        drops = sum(1 for m in self.lr_decay_epochs if epoch >= m)
        return self.lr * self.lr_decay_factor ** drops

    def final_lr(self) -> float:
        return self.lr_at(self.epochs - 1)


class GPConfig(_Config):
    lengthscale: float = Field(default=0.2, gt=0)
    signal_variance: float = Field(default=1.0, gt=0)
    noise_variance: float = Field(default=1e-4, ge=0)
    ucb_kappa: float = Field(default=2.0, ge=0)
    n_init: int = Field(default=8, ge=0)
    acq_candidates: int = Field(default=2048, ge=1)
    acq_refine_top: int = Field(default=8, ge=0)
    refine_sweeps: int = Field(default=2, ge=0)
    line_search_iters: int = Field(default=20, ge=1)


class RLConfig(_Config):
    init_mean: float = Field(default=0.5, ge=0, le=1)
    init_stddev: float = Field(default=0.25, gt=0)
    learning_rate: float = Field(default=0.05, ge=0)
    stddev_floor: float = Field(default=0.02, gt=0)
    stddev_decay: float = Field(default=0.97, gt=0, le=1)


class SearchConfig(_Config):
    outer_steps: int = Field(default=40, ge=1, alias="E_o")
    finetune_epochs: int = Field(default=5, ge=1, alias="E_f")
    segments: int = Field(default=4, ge=1, alias="S")
    num_features: int = Field(default=2, ge=1, le=2, alias="N")
    transform_mode: TransformMode = "cgf"
    agent: AgentName = "ss"
    # None -> the pretrain LR after its last decay milestone
    finetune_lr: Optional[float] = Field(default=None, ge=0)
    retrain: Optional[TrainHyper] = None
    top_k: int = Field(default=3, ge=1)
    insert_reference: bool = True
    seed: int = 0
    gp: GPConfig = Field(default_factory=GPConfig)
    rl: RLConfig = Field(default_factory=RLConfig)

    @model_validator(mode="after")
    def _top_k_within_budget(self) -> "SearchConfig":
        if self.top_k > self.outer_steps:
            raise ValueError(f"top_k={self.top_k} exceeds outer_steps={self.outer_steps}")
        return self

    @property
    def dim(self) -> int:
        """Length of the unit-cube encoding: (S-1) free endpoints + (S+1) values + N coefficients."""
        return 2 * self.segments + self.num_features


class StudyConfig(_Config):
    last_m: int = Field(default=10, ge=2)
    repeats: int = Field(default=1, ge=1)


class PathsConfig(_Config):
    workdir: str = "runs/default"


class RunConfig(_Config):
    data: DataConfig = Field(default_factory=DataConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    pretrain: TrainHyper = Field(default_factory=TrainHyper)
    search: SearchConfig = Field(default_factory=SearchConfig)
    study: StudyConfig = Field(default_factory=StudyConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)


# --- records ---

class SamplerParams(BaseModel):
    """A point of the sampler search space: H's endpoints/values and G's coefficients."""

    model_config = ConfigDict(frozen=True, populate_by_name=True, extra="forbid")

    segments: int = Field(alias="S", ge=1)
    num_features: int = Field(alias="N", ge=1)
    endpoints: List[float] = Field(alias="e")
    values: List[float] = Field(alias="v")
    coefficients: List[float] = Field(alias="c")
    transform_mode: TransformMode = "cgf"

    @model_validator(mode="after")
    def _check_domain(self) -> "SamplerParams":
        s, e, v, c = self.segments, self.endpoints, self.values, self.coefficients
        if len(e) != s + 1 or len(v) != s + 1:
            raise ValueError(f"expected {s + 1} endpoints and values, got {len(e)} and {len(v)}")
        if len(c) != self.num_features:
            raise ValueError(f"expected {self.num_features} coefficients, got {len(c)}")
        if e[0] != 0.0 or e[-1] != 1.0:
            raise ValueError("endpoints must start at 0 and end at 1")
        if any(b < a for a, b in zip(e, e[1:])):
            raise ValueError("endpoints must be nondecreasing")
        if any(not (0.0 <= x <= 1.0) for x in v):
            raise ValueError("values must lie in [0, 1]")
        if any(not (-1.0 <= x <= 1.0) for x in c):
            raise ValueError("coefficients must lie in [-1, 1]")
        return self


class Observation(BaseModel):
    model_config = ConfigDict(frozen=True)

    z: List[float]
    q: float = Field(ge=0, le=1)

    @field_validator("z")
    @classmethod
    def _in_cube(cls, z: List[float]) -> List[float]:
        if any(not (0.0 <= x <= 1.0) for x in z):
            raise ValueError("z must lie in the unit cube")
        return z


class Candidate(BaseModel):
    step: int
    z: List[float]
    params: SamplerParams
    q: float
    degenerate: bool = False
    is_reference: bool = False
    train_seconds: float = 0.0


class SearchResult(BaseModel):
    agent: AgentName
    transform_mode: TransformMode
    candidates: List[Candidate] = Field(default_factory=list)
    evaluations: int = 0
    best_step: Optional[int] = None
    best_params: Optional[SamplerParams] = None
    best_q: float = 0.0
    top_steps: List[int] = Field(default_factory=list)
    pretrain_acc: Optional[float] = None
    final_val_acc: Optional[float] = None
    final_test_acc: Optional[float] = None
    phase_seconds: Dict[str, float] = Field(default_factory=dict)

    def finalize(self, top_k: int) -> "SearchResult":
        """Fill best/top fields from the candidate log (non-degenerate only; ties -> earliest step)."""
        scored = [c for c in self.candidates if not c.degenerate]
        ranked = sorted(scored, key=lambda c: (-c.q, c.step))
        self.evaluations = len(self.candidates)
        self.top_steps = [c.step for c in ranked[:top_k]]
        if ranked:
            self.best_step = ranked[0].step
            self.best_params = ranked[0].params
            self.best_q = ranked[0].q
        return self

    def best_so_far(self) -> List[float]:
        out: List[float] = []
        best = -math.inf
        for c in self.candidates:
            best = max(best, c.q)
            out.append(best)
        return out


class RankReport(BaseModel):
    sampler_steps: List[int]
    approx_scores: List[float]
    truth_scores: List[float]
    approx_rank: List[int]
    truth_rank: List[int]
    sr: float = Field(ge=-1, le=1)
    tr: int = Field(ge=1)


# --- Helper for compact, JSON-safe Pydantic error formatting ---

def format_validation_errors(exc: ValidationError) -> List[Dict[str, Any]]:
    """
    Return a compact list like: [{"loc": [...], "msg": "...", "type": "..."}].
    """
    out: List[Dict[str, Any]] = []
    for err in exc.errors():
        out.append({
            "loc": list(err.get("loc", ())),
            "msg": err.get("msg"),
            "type": err.get("type"),
        })
    return out
