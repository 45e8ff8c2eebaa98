"""Static per-instance features taken from a pretrained checkpoint.

Two features are used: cross-entropy loss and renormed entropy (entropy of the
predicted distribution with the target class removed). Both are mapped through
their empirical cdf; the gradient norm is kept raw for the cgf transform.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import pandas as pd
from scipy.special import entr
from scipy.stats import rankdata

from app.dataset import Dataset
from app.errors import ArtifactError, FeatureError
from app.model import ModelWeights, per_example_grad_norms, per_example_losses, predict_proba

log = logging.getLogger(__name__)

FEATURE_COLUMNS = ("loss_cdf", "er_cdf")


@dataclass(frozen=True, eq=False)
class CdfTable:
    """Sorted distinct raw values and their cdf values; piecewise-linear in between."""

    values: np.ndarray
    cdf: np.ndarray
    n: int

    def __call__(self, x) -> np.ndarray:
        out = np.interp(np.asarray(x, dtype=np.float64), self.values, self.cdf)
        return np.clip(out, 1.0 / self.n, 1.0)


def empirical_cdf(values: np.ndarray) -> Tuple[np.ndarray, CdfTable]:
    """average_rank / n, ties sharing the mean of their ranks."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise FeatureError("features.empirical_cdf", "need a non-empty vector of values")
    n = v.size
    mapped = rankdata(v, method="average") / n
    distinct, first = np.unique(v, return_index=True)
    return mapped, CdfTable(distinct, mapped[first], n)


def renormed_entropies(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Row-wise entropy (nats) of the non-target probabilities renormalized to 1; 0 when that mass vanishes."""
    p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if p.shape[1] < 2:
        raise FeatureError("features.renormed_entropy", "renormed entropy needs K >= 2")
    rest = p.copy()
    rest[np.arange(y.size), y] = 0.0
    mass = rest.sum(axis=1)
    live = mass > 1e-15
    out = np.zeros(y.size)
    q = rest[live] / mass[live][:, None]
    out[live] = entr(q).sum(axis=1)
    return out


def renormed_entropy(prob: np.ndarray, y: int) -> float:
    return float(renormed_entropies(np.asarray(prob)[None, :], np.array([y]))[0])


@dataclass(frozen=True, eq=False)
class FeatureTable:
    raw_loss: np.ndarray
    raw_er: np.ndarray
    loss_cdf: np.ndarray
    er_cdf: np.ndarray
    grad_norm: np.ndarray
    loss_map: CdfTable
    er_map: CdfTable

    def __post_init__(self) -> None:
        n = self.raw_loss.shape[0]
        for name in ("raw_er", "loss_cdf", "er_cdf", "grad_norm"):
            if getattr(self, name).shape != (n,):
                raise FeatureError("features.FeatureTable", f"column {name} must have length {n}")
        for name in ("raw_loss", "raw_er", "loss_cdf", "er_cdf", "grad_norm"):
            getattr(self, name).flags.writeable = False

    def __len__(self) -> int:
        return int(self.raw_loss.shape[0])

    def feature_matrix(self, num_features: int = 2) -> np.ndarray:
        if not 1 <= num_features <= len(FEATURE_COLUMNS):
            raise FeatureError("features.feature_matrix", f"table carries {len(FEATURE_COLUMNS)} features, asked for {num_features}")
        return np.column_stack([getattr(self, c) for c in FEATURE_COLUMNS[:num_features]])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "index": np.arange(len(self)),
            "raw_loss": self.raw_loss,
            "raw_er": self.raw_er,
            "loss_cdf": self.loss_cdf,
            "er_cdf": self.er_cdf,
            "grad_norm": self.grad_norm,
        })


def build_table(raw_loss: np.ndarray, raw_er: np.ndarray, grad_norm: np.ndarray) -> FeatureTable:
    loss_cdf, loss_map = empirical_cdf(raw_loss)
    er_cdf, er_map = empirical_cdf(raw_er)
    return FeatureTable(
        np.asarray(raw_loss, dtype=np.float64).copy(),
        np.asarray(raw_er, dtype=np.float64).copy(),
        loss_cdf,
        er_cdf,
        np.asarray(grad_norm, dtype=np.float64).copy(),
        loss_map,
        er_map,
    )


def extract_features(w_pre: ModelWeights, train: Dataset) -> FeatureTable:
    if train.dim != w_pre.dim or train.num_classes != w_pre.num_classes:
        raise FeatureError(
            "features.extract_features",
            f"weights expect (d={w_pre.dim}, K={w_pre.num_classes}), data has (d={train.dim}, K={train.num_classes})",
        )
    x, y = train.features, train.labels
    table = build_table(
        per_example_losses(w_pre, x, y),
        renormed_entropies(predict_proba(w_pre, x), y),
        per_example_grad_norms(w_pre, x, y),
    )
    log.info(
        "features: extracted n=%d mean_loss=%.4f mean_er=%.4f mean_grad=%.4f",
        len(table), table.raw_loss.mean(), table.raw_er.mean(), table.grad_norm.mean(),
    )
    return table


def save_feature_table(table: FeatureTable, path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    table.to_frame().to_csv(path, index=False, float_format="%.17g")


def load_feature_table(path: str) -> FeatureTable:
    """Reload a saved table; cdf columns are recomputed from the raw ones and must agree."""
    if not os.path.exists(path):
        raise ArtifactError("features.load_feature_table", f"missing file: {path}")
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ArtifactError("features.load_feature_table", f"malformed feature table: {e}")
    missing = {"raw_loss", "raw_er", "loss_cdf", "er_cdf", "grad_norm"} - set(frame.columns)
    if missing:
        raise ArtifactError("features.load_feature_table", f"missing columns {sorted(missing)}")
    table = build_table(
        frame["raw_loss"].to_numpy(), frame["raw_er"].to_numpy(), frame["grad_norm"].to_numpy()
    )
    if not np.allclose(table.loss_cdf, frame["loss_cdf"].to_numpy()) or not np.allclose(
        table.er_cdf, frame["er_cdf"].to_numpy()
    ):
        raise ArtifactError("features.load_feature_table", "stored cdf columns disagree with the raw features")
    return table
