"""Outer-loop agent: GP regression (RBF kernel, constant mean) with UCB acquisition over the unit cube."""
from __future__ import annotations

import logging
import math
from typing import List, Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from app.errors import GPError
from app.models import GPConfig, Observation

log = logging.getLogger(__name__)

PRIOR_MEAN = 0.5
_JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def rbf_matrix(a: np.ndarray, b: np.ndarray, cfg: GPConfig) -> np.ndarray:
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    if a.shape[1] != b.shape[1]:
        raise GPError("bayesopt.rbf_kernel", f"dimension mismatch {a.shape[1]} vs {b.shape[1]}")
    sq = np.sum(a ** 2, axis=1)[:, None] + np.sum(b ** 2, axis=1)[None, :] - 2.0 * a @ b.T
    return cfg.signal_variance * np.exp(-np.maximum(sq, 0.0) / (2.0 * cfg.lengthscale ** 2))


def rbf_kernel(z1: np.ndarray, z2: np.ndarray, cfg: GPConfig) -> float:
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z1.shape != z2.shape:
        raise GPError("bayesopt.rbf_kernel", f"dimension mismatch {z1.shape} vs {z2.shape}")
    return float(cfg.signal_variance * np.exp(-np.sum((z1 - z2) ** 2) / (2.0 * cfg.lengthscale ** 2)))


class BOState:
    """Observation set plus the cached Cholesky factor of K + noise*I."""

    def __init__(self, config: GPConfig, dim: int, seed: int = 0):
        self.config = config
        self.dim = dim
        self.rng = np.random.default_rng(seed)
        self.observations: List[Observation] = []
        self._z = np.zeros((0, dim))
        self._q = np.zeros(0)
        self._factor: Optional[Tuple[np.ndarray, bool]] = None
        self._alpha = np.zeros(0)
        self.jitter = 0.0

    def __len__(self) -> int:
        return len(self.observations)

    @property
    def mean_value(self) -> float:
        """Constant prior mean: the mean of every observed Q (PRIOR_MEAN before any observation)."""
        return float(self._q.mean()) if self._q.size else PRIOR_MEAN

    def _refresh(self) -> None:
        gram = rbf_matrix(self._z, self._z, self.config)
        base = gram + self.config.noise_variance * np.eye(len(self._q))
        for jitter in _JITTERS:
            try:
                self._factor = cho_factor(base + jitter * np.eye(len(self._q)), lower=True)
                self.jitter = jitter
                break
            except LinAlgError:
                continue
        else:
            raise GPError("bayesopt.update", "kernel matrix is not positive definite even with 1e-6 jitter")
        if self.jitter:
            log.debug("bayesopt: added jitter %.0e to the kernel diagonal", self.jitter)
        self._alpha = cho_solve(self._factor, self._q - self.mean_value)

    def posterior(self, zq: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance at each row of ``zq``."""
        zq = np.atleast_2d(np.asarray(zq, dtype=np.float64))
        if zq.shape[1] != self.dim:
            raise GPError("bayesopt.gp_posterior", f"query dimension {zq.shape[1]} != {self.dim}")
        prior_var = np.full(zq.shape[0], self.config.signal_variance)
        if not self.observations:
            return np.full(zq.shape[0], PRIOR_MEAN), prior_var
        k_star = rbf_matrix(self._z, zq, self.config)
        mean = self.mean_value + k_star.T @ self._alpha
        v = cho_solve(self._factor, k_star)
        var = prior_var - np.sum(k_star * v, axis=0)
        return mean, np.maximum(var, 0.0)


def gp_posterior(state: BOState, z_query: np.ndarray) -> Tuple[float, float]:
    mean, var = state.posterior(np.asarray(z_query, dtype=np.float64)[None, :])
    return float(mean[0]), float(var[0])


def ucb(mean, variance, kappa: float):
    return mean + kappa * np.sqrt(variance)


def update(state: BOState, z: np.ndarray, q: float) -> BOState:
    obs = Observation(z=np.asarray(z, dtype=np.float64).tolist(), q=float(q))
    state.observations.append(obs)
    state._z = np.vstack([state._z, np.asarray(obs.z)[None, :]])
    state._q = np.append(state._q, obs.q)
    state._refresh()
    return state


def _golden_max(fn, lo: float, hi: float, iters: int) -> Tuple[float, float]:
    """Golden-section search for the max of a unimodal-ish fn on [lo, hi]; endpoints are also tried."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fn(d)
    best_x, best_f = (c, fc) if fc >= fd else (d, fd)
    for x in (lo, hi):
        fx = fn(x)
        if fx > best_f:
            best_x, best_f = x, fx
    return best_x, best_f


def _refine(state: BOState, start: np.ndarray, start_val: float) -> Tuple[np.ndarray, float]:
    cfg = state.config
    z = start.copy()
    best = start_val
    for _ in range(cfg.refine_sweeps):
        for i in range(state.dim):
            def along(x: float, i: int = i) -> float:
                trial = z.copy()
                trial[i] = x
                m, v = state.posterior(trial)
                return float(ucb(m[0], v[0], cfg.ucb_kappa))

            x, val = _golden_max(along, 0.0, 1.0, cfg.line_search_iters)
            if val > best:
                z[i] = x
                best = val
    return z, best


def propose_next(state: BOState, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Initial random design for the first n_init points, then argmax UCB (multistart + coordinate ascent)."""
    rng = state.rng if rng is None else rng
    cfg = state.config
    if len(state) < cfg.n_init:
        return rng.random(state.dim)

    cands = rng.random((cfg.acq_candidates, state.dim))
    mean, var = state.posterior(cands)
    scores = ucb(mean, var, cfg.ucb_kappa)
    order = np.argsort(-scores, kind="stable")
    best_z, best_val = cands[order[0]].copy(), float(scores[order[0]])
    for idx in order[: cfg.acq_refine_top]:
        z, val = _refine(state, cands[idx], float(scores[idx]))
        if val > best_val:
            best_z, best_val = z, val
    log.debug("bayesopt: proposal ucb=%.4f after %d observations", best_val, len(state))
    return np.clip(best_z, 0.0, 1.0)
