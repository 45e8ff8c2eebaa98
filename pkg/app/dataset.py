"""Synthetic labelled datasets: Gaussian blobs, symmetric label noise, stratified splits, CSV persistence.

CSV layout: header ``f_0..f_{d-1},label,noise_flag``; a ``<stem>.meta.json``
sidecar next to the CSV carries ``num_classes``, ``split_tag`` and ``seed``.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, replace
from typing import Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import special_ortho_group

from app.errors import ArtifactError, DatasetError

log = logging.getLogger(__name__)

SplitTag = Literal["train", "val", "test", "all"]


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    noise_flags: Optional[np.ndarray] = None
    split_tag: SplitTag = "all"
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        x = np.array(self.features, dtype=np.float64, copy=True)
        y = np.array(self.labels, dtype=np.int64, copy=True)
        if x.ndim != 2 or x.shape[1] < 1:
            raise DatasetError("dataset.Dataset", f"features must be (n, d>=1), got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise DatasetError("dataset.Dataset", "labels must have one entry per instance")
        if self.num_classes < 2:
            raise DatasetError("dataset.Dataset", f"num_classes must be >= 2, got {self.num_classes}")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise DatasetError("dataset.Dataset", "labels must lie in [0, num_classes)")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        if self.noise_flags is not None:
            flags = np.array(self.noise_flags, dtype=bool, copy=True)
            if flags.shape != y.shape:
                raise DatasetError("dataset.Dataset", "noise_flags length must equal the number of instances")
            flags.flags.writeable = False
            object.__setattr__(self, "noise_flags", flags)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, idx: np.ndarray, split_tag: SplitTag) -> "Dataset":
        flags = None if self.noise_flags is None else self.noise_flags[idx]
        return Dataset(self.features[idx], self.labels[idx], self.num_classes, flags, split_tag, self.seed)

    def equals(self, other: "Dataset") -> bool:
        same_flags = (self.noise_flags is None and other.noise_flags is None) or (
            self.noise_flags is not None
            and other.noise_flags is not None
            and np.array_equal(self.noise_flags, other.noise_flags)
        )
        return (
            self.num_classes == other.num_classes
            and self.split_tag == other.split_tag
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and same_flags
        )


def _lattice_point(c: int, dim: int) -> np.ndarray:
    """Class index -> lattice vertex with base-3 digits mapped to {0, +1, -1}; distinct classes differ by >= 1."""
    point = np.zeros(dim)
    k = c
    for j in range(dim):
        digit = k % 3
        point[j] = (0.0, 1.0, -1.0)[digit]
        k //= 3
    return point


def class_means(num_classes: int, dim: int, separation: float, seed: int) -> np.ndarray:
    if num_classes > 3 ** min(dim, 40):
        raise DatasetError("dataset.class_means", f"{num_classes} classes do not fit a {dim}-d lattice")
    lattice = np.stack([_lattice_point(c, dim) for c in range(num_classes)]) * separation
    if dim >= 2:
        rotation = special_ortho_group.rvs(dim, random_state=np.random.default_rng(seed))
        lattice = lattice @ np.atleast_2d(rotation).T
    return lattice


def generate_blobs(
    num_classes: int,
    dim: int,
    per_class: int,
    separation: float,
    spread: float,
    seed: int,
) -> Dataset:
    """K isotropic Gaussian blobs, ``per_class`` instances each, class-major order."""
    if num_classes < 2 or dim < 1 or per_class < 1 or not spread > 0:
        raise DatasetError(
            "dataset.generate_blobs",
            f"invalid parameters K={num_classes} d={dim} n={per_class} spread={spread}",
        )
    means = class_means(num_classes, dim, separation, seed)
    rng = np.random.default_rng([seed, 1])
    x = np.concatenate([means[c] + spread * rng.standard_normal((per_class, dim)) for c in range(num_classes)])
    y = np.repeat(np.arange(num_classes), per_class)
    log.info("dataset: generated blobs K=%d d=%d n=%d seed=%d", num_classes, dim, per_class, seed)
    return Dataset(x, y, num_classes, None, "all", seed)


def inject_label_noise(ds: Dataset, rate: float, seed: int) -> Dataset:
    """Symmetric noise: floor(rate * n_c) instances per class move to a uniformly chosen other class."""
    if not 0.0 <= rate <= 1.0:
        raise DatasetError("dataset.inject_label_noise", f"rate must lie in [0, 1], got {rate}")
    if ds.noise_flags is not None:
        raise DatasetError("dataset.inject_label_noise", "dataset already carries noise flags")
    rng = np.random.default_rng([seed, 2])
    labels = ds.labels.copy()
    flags = np.zeros(len(ds), dtype=bool)
    for c in range(ds.num_classes):
        members = np.flatnonzero(ds.labels == c)
        n_flip = int(np.floor(rate * members.size))
        if n_flip == 0:
            continue
        chosen = np.sort(rng.choice(members, size=n_flip, replace=False))
        shift = rng.integers(1, ds.num_classes, size=n_flip)
        labels[chosen] = (c + shift) % ds.num_classes
        flags[chosen] = True
    log.info("dataset: injected noise rate=%.3f flipped=%d/%d", rate, int(flags.sum()), len(ds))
    return replace(ds, labels=labels, noise_flags=flags)


def split(
    ds: Dataset,
    fractions: Sequence[float],
    seed: int,
) -> Tuple[Dataset, Dataset, Dataset]:
    """Stratified (by observed label) disjoint train/val/test split."""
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise DatasetError("dataset.split", f"fractions must be three positive numbers summing to 1, got {list(fractions)}")
    f_train, f_val, _ = fractions
    rng = np.random.default_rng([seed, 3])
    parts: Tuple[list, list, list] = ([], [], [])
    for c in range(ds.num_classes):
        members = rng.permutation(np.flatnonzero(ds.labels == c))
        n_train = int(round(f_train * members.size))
        n_val = int(round(f_val * members.size))
        n_val = min(n_val, members.size - n_train)
        parts[0].append(members[:n_train])
        parts[1].append(members[n_train:n_train + n_val])
        parts[2].append(members[n_train + n_val:])
    idx = [np.sort(np.concatenate(p)).astype(np.int64) for p in parts]
    if idx[1].size == 0:
        raise DatasetError("dataset.split", "validation split is empty")
    if idx[0].size == 0:
        raise DatasetError("dataset.split", "train split is empty")
    if idx[2].size == 0:
        log.warning("dataset: test split is empty after per-class rounding")
    log.info("dataset: split sizes train=%d val=%d test=%d", *(i.size for i in idx))
    return ds.subset(idx[0], "train"), ds.subset(idx[1], "val"), ds.subset(idx[2], "test")


def _meta_path(path: str) -> str:
    stem, _ = os.path.splitext(path)
    return stem + ".meta.json"


def save(ds: Dataset, path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    frame = pd.DataFrame(ds.features, columns=[f"f_{j}" for j in range(ds.dim)])
    frame["label"] = ds.labels
    flags = ds.noise_flags if ds.noise_flags is not None else np.zeros(len(ds), dtype=bool)
    frame["noise_flag"] = flags.astype(np.int64)
    frame.to_csv(path, index=False, float_format="%.17g")
    meta = {
        "num_classes": ds.num_classes,
        "split_tag": ds.split_tag,
        "seed": ds.seed,
        "has_noise_flags": ds.noise_flags is not None,
        "dim": ds.dim,
    }
    with open(_meta_path(path), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load(path: str) -> Dataset:
    meta_path = _meta_path(path)
    for p in (path, meta_path):
        if not os.path.exists(p):
            raise ArtifactError("dataset.load", f"missing file: {p}")
    try:
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
        frame = pd.read_csv(path, float_precision="round_trip")
    except (json.JSONDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ArtifactError("dataset.load", f"malformed dataset file: {e}")
    for col in ("label", "noise_flag"):
        if col not in frame.columns:
            raise ArtifactError("dataset.load", f"missing column {col!r} in {path}")
    feature_cols = [c for c in frame.columns if c.startswith("f_")]
    expected = [f"f_{j}" for j in range(len(feature_cols))]
    if not feature_cols or feature_cols != expected:
        raise ArtifactError("dataset.load", f"feature columns must be f_0..f_(d-1), got {feature_cols}")
    if "dim" in meta and meta["dim"] != len(feature_cols):
        raise ArtifactError("dataset.load", f"dimension mismatch: sidecar d={meta['dim']} csv d={len(feature_cols)}")
    flags = frame["noise_flag"].to_numpy().astype(bool) if meta.get("has_noise_flags", True) else None
    try:
        return Dataset(
            frame[feature_cols].to_numpy(dtype=np.float64),
            frame["label"].to_numpy(dtype=np.int64),
            int(meta["num_classes"]),
            flags,
            meta.get("split_tag", "all"),
            meta.get("seed"),
        )
    except (KeyError, ValueError, DatasetError) as e:
        raise ArtifactError("dataset.load", f"malformed dataset file: {e}")
