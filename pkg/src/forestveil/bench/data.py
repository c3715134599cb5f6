"""Synthetic datasets on the fixed-point grid."""

from __future__ import annotations

import numpy as np

from ..forest import Dataset


def _grid(X: np.ndarray) -> np.ndarray:
    return np.clip(np.round(X, 3), -1000, 1000)


def blobs(n_rows: int = 1000, n_features: int = 2, separation: float = 4.0, rng_seed: int = 0) -> Dataset:
    """Two Gaussian blobs whose means differ by ``separation`` along every axis."""
    rng = np.random.default_rng(rng_seed)
    y = rng.integers(0, 2, n_rows)
    X = rng.normal(0.0, 1.0, (n_rows, n_features)) + np.outer(y - 0.5, np.full(n_features, separation))
    return Dataset(_grid(X), y)


def interaction(n_rows: int = 1000, n_features: int = 6, noise: float = 0.1, rng_seed: int = 0) -> Dataset:
    """XOR of the signs of the first two features; the rest are noise columns.

    A fraction ``noise`` of labels is flipped.
    """
    rng = np.random.default_rng(rng_seed)
    X = rng.uniform(-1.0, 1.0, (n_rows, n_features))
    y = ((X[:, 0] >= 0) ^ (X[:, 1] >= 0)).astype(np.int64)
    flip = rng.random(n_rows) < noise
    y[flip] = 1 - y[flip]
    return Dataset(_grid(X), y)


def split(data: Dataset, train_fraction: float = 0.7, rng=None) -> tuple[Dataset, Dataset]:
    """Random train/test split; raises if either side would lack a class."""
    rng = rng if rng is not None else np.random.default_rng()
    idx = rng.permutation(len(data))
    k = int(round(train_fraction * len(data)))
    if k == 0 or k == len(data):
        raise ValueError("split leaves an empty side")
    tr, te = data.subset(idx[:k]), data.subset(idx[k:])
    if len(set(te.y.tolist())) < 2:
        raise ValueError("test split has a single class")
    return tr, te
