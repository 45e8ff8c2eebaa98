"""The sampler family tau(x) = H(T(G(x))) and its batch-sampling machinery.

- G: linear aggregation of the N cdf-normalized static features, coefficients in [-1, 1].
- T: piecewise-linear cumulative transform over the G-values of the training set,
  weighted by per-instance gradient norm (cgf) or by count (cdf).
- H: piecewise-linear profile on [0, 1] with S segments.

A search-space point z lives in the unit cube of dimension (S-1) + (S+1) + N.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Tuple

import numpy as np

from app.errors import DegenerateSamplerError, SamplerError
from app.models import SamplerParams, TransformMode

if TYPE_CHECKING:  # pragma: no cover
    from app.features import FeatureTable

log = logging.getLogger(__name__)


# ----------------------------------------------------------------- encoding

def search_dim(segments: int, num_features: int) -> int:
    return 2 * segments + num_features


def decode(unit: np.ndarray, segments: int = 4, num_features: int = 2, mode: TransformMode = "cgf") -> SamplerParams:
    """Unit-cube point -> SamplerParams; free endpoints are the sorted first S-1 coordinates."""
    u = np.asarray(unit, dtype=np.float64)
    dim = search_dim(segments, num_features)
    if u.shape != (dim,):
        raise SamplerError("sampler.decode", f"expected a vector of length {dim}, got shape {u.shape}")
    if np.any(u < 0.0) or np.any(u > 1.0) or not np.all(np.isfinite(u)):
        raise SamplerError("sampler.decode", "unit vector entries must lie in [0, 1]")
    interior = np.sort(u[: segments - 1])
    values = u[segments - 1: 2 * segments]
    coefficients = 2.0 * u[2 * segments:] - 1.0
    return SamplerParams(
        segments=segments,
        num_features=num_features,
        endpoints=[0.0, *interior.tolist(), 1.0],
        values=values.tolist(),
        coefficients=coefficients.tolist(),
        transform_mode=mode,
    )


def encode(params: SamplerParams) -> np.ndarray:
    s = params.segments
    return np.concatenate([
        np.asarray(params.endpoints[1:s], dtype=np.float64),
        np.asarray(params.values, dtype=np.float64),
        (np.asarray(params.coefficients, dtype=np.float64) + 1.0) / 2.0,
    ])


def reference_z(segments: int = 4, num_features: int = 2) -> np.ndarray:
    """Encoding of a uniform-equivalent sampler: H constant at 1, G identically 0."""
    interior = np.arange(1, segments) / segments
    return np.concatenate([interior, np.ones(segments + 1), np.full(num_features, 0.5)])


# ---------------------------------------------------------------- H and G

def eval_H(params: SamplerParams, u) -> np.ndarray | float:
    """Piecewise-linear H; on coincident endpoints the rightmost value wins."""
    arr = np.asarray(u, dtype=np.float64)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise SamplerError("sampler.eval_H", "H is defined on [0, 1] only")
    e = np.asarray(params.endpoints)
    v = np.asarray(params.values)
    last = len(e) - 1
    j = np.clip(np.searchsorted(e, arr, side="right") - 1, 0, last)
    jn = np.minimum(j + 1, last)
    width = e[jn] - e[j]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(width > 0, (arr - e[j]) / np.where(width > 0, width, 1.0), 0.0)
    out = np.where(e[j] == arr, v[j], v[j] + t * (v[jn] - v[j]))
    return float(out) if out.ndim == 0 else out


def eval_G(params: SamplerParams, f) -> np.ndarray | float:
    """Dot product of coefficients with a feature vector (or each row of a feature matrix)."""
    arr = np.asarray(f, dtype=np.float64)
    c = np.asarray(params.coefficients)
    if arr.shape[-1] != c.size:
        raise SamplerError("sampler.eval_G", f"expected {c.size} features, got {arr.shape[-1]}")
    out = arr @ c
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------- transform

@dataclass(frozen=True, eq=False)
class TransformTable:
    """Monotone piecewise-linear map through (distinct G-value, cumulative weight share)."""

    knots: np.ndarray
    cumulative: np.ndarray
    mode: TransformMode

    def __call__(self, u) -> np.ndarray:
        return np.interp(np.asarray(u, dtype=np.float64), self.knots, self.cumulative)

    def max_slope(self) -> float:
        if self.knots.size < 2:
            return 0.0
        return float(np.max(np.diff(self.cumulative) / np.diff(self.knots)))


def build_transform(mode: TransformMode, g_values: np.ndarray, grad_norms: np.ndarray) -> TransformTable:
    g = np.asarray(g_values, dtype=np.float64)
    grads = np.asarray(grad_norms, dtype=np.float64)
    if g.ndim != 1 or g.size == 0:
        raise SamplerError("sampler.build_transform", "need at least one G-value")
    if grads.shape != g.shape:
        raise SamplerError("sampler.build_transform", "one gradient norm per G-value is required")
    if mode == "cgf":
        if np.any(grads < 0):
            raise SamplerError("sampler.build_transform", "gradient norms must be nonnegative")
        weights = grads
    elif mode == "cdf":
        weights = np.ones_like(g)
    else:
        raise SamplerError("sampler.build_transform", f"unknown transform mode {mode!r}")
    total = weights.sum()
    if not total > 0:
        raise SamplerError("sampler.build_transform", "all gradient norms are zero; use the cdf transform")

    knots, inverse = np.unique(g, return_inverse=True)
    if knots.size == 1:
        return TransformTable(knots, np.ones(1), mode)
    mass = np.bincount(inverse.ravel(), weights=weights, minlength=knots.size)
    cumulative = np.clip(np.cumsum(mass) / total, 0.0, 1.0)
    cumulative[-1] = 1.0
    cumulative = np.maximum.accumulate(cumulative)
    return TransformTable(knots, cumulative, mode)


def eval_tau(params: SamplerParams, transform: TransformTable, table: "FeatureTable") -> np.ndarray:
    g = eval_G(params, table.feature_matrix(params.num_features))
    return np.asarray(eval_H(params, np.clip(transform(g), 0.0, 1.0)))


def normalize(tau: np.ndarray) -> np.ndarray:
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(tau < 0):
        raise SamplerError("sampler.normalize", "tau must be nonnegative")
    total = tau.sum()
    if total < 1e-12:
        raise DegenerateSamplerError("sampler.normalize", f"tau sums to {total:.3g}; the sampler discards every instance")
    return tau / total


def sampler_tau(params: SamplerParams, table: "FeatureTable") -> Tuple[np.ndarray, TransformTable]:
    """Build the transform for ``params`` over ``table`` and evaluate tau on every instance."""
    g = eval_G(params, table.feature_matrix(params.num_features))
    mode = params.transform_mode
    if mode == "cgf" and not np.sum(table.grad_norm) > 0:
        log.warning("sampler: gradient norms are all zero (collapsed pretrained model); falling back to cdf")
        mode = "cdf"
    transform = build_transform(mode, g, table.grad_norm)
    return eval_tau(params, transform, table), transform


def sampler_probs(params: SamplerParams, table: "FeatureTable") -> np.ndarray:
    tau, _ = sampler_tau(params, table)
    return normalize(tau)


# ------------------------------------------------------------- alias method

@dataclass(frozen=True, eq=False)
class AliasTable:
    prob: np.ndarray
    alias: np.ndarray

    def __len__(self) -> int:
        return int(self.prob.size)


def build_alias(probs: np.ndarray) -> AliasTable:
    """Vose's alias method; O(n) build, O(1) per draw."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise SamplerError("sampler.build_alias", "probs must be a non-empty vector")
    if np.any(p < 0) or not np.all(np.isfinite(p)) or abs(p.sum() - 1.0) > 1e-9:
        raise SamplerError("sampler.build_alias", "probs must be a probability vector")
    n = p.size
    scaled = p * n
    prob = np.ones(n)
    alias = np.arange(n)
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        lo = small.pop()
        hi = large.pop()
        prob[lo] = scaled[lo]
        alias[lo] = hi
        scaled[hi] -= 1.0 - scaled[lo]
        if scaled[hi] < 1.0:
            small.append(hi)
        else:
            large.append(hi)
    # leftovers are 1 up to rounding
    for i in large + small:
        prob[i] = 1.0
        alias[i] = i
    return AliasTable(prob, alias)


def sample_batch(table: AliasTable, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    idx = rng.integers(0, len(table), size=batch_size)
    coin = rng.random(batch_size)
    return np.where(coin < table.prob[idx], idx, table.alias[idx])


# -------------------------------------------------------------- Lipschitz

def lipschitz_bound(params: SamplerParams, transform: TransformTable) -> float:
    """C = L_H * L_T * ||c||_2; infinite when H jumps on a zero-width segment."""
    e, v = params.endpoints, params.values
    slope_h = 0.0
    for s in range(1, len(e)):
        width = e[s] - e[s - 1]
        rise = abs(v[s] - v[s - 1])
        if width == 0.0:
            if rise > 0.0:
                return float("inf")
            continue
        slope_h = max(slope_h, rise / width)
    return slope_h * transform.max_slope() * float(np.linalg.norm(params.coefficients))


@dataclass(frozen=True)
class LipschitzReport:
    bound: float
    worst_ratio: float
    pairs_checked: int
    holds: Optional[bool]


def check_lipschitz(
    params: SamplerParams,
    transform: TransformTable,
    table: "FeatureTable",
    max_pairs: Optional[int] = None,
    seed: int = 0,
) -> LipschitzReport:
    """Empirical check of |tau_i - tau_j| <= C * ||f_i - f_j|| + 1e-9 over instance pairs."""
    bound = lipschitz_bound(params, transform)
    if not np.isfinite(bound):
        return LipschitzReport(bound, float("nan"), 0, None)
    f = table.feature_matrix(params.num_features)
    tau = eval_tau(params, transform, table)
    n = f.shape[0]
    if max_pairs is None or max_pairs >= n * (n - 1) // 2:
        i, j = np.triu_indices(n, k=1)
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, size=max_pairs)
        j = rng.integers(0, n, size=max_pairs)
        keep = i != j
        i, j = i[keep], j[keep]
    dist = np.linalg.norm(f[i] - f[j], axis=1)
    diff = np.abs(tau[i] - tau[j])
    holds = bool(np.all(diff <= bound * dist + 1e-9))
    positive = dist > 0
    worst = float(np.max(diff[positive] / dist[positive])) if np.any(positive) else 0.0
    return LipschitzReport(bound, worst, int(i.size), holds)
