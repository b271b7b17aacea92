"""Synthetic classification datasets for demos and acceptance runs."""

from __future__ import annotations

import numpy as np

from ._validation import check_rng
from .dataset import Dataset

GENERATORS = ("blobs", "moons", "xor")


def _flip(y, noise, n_classes, rng):
    if noise <= 0:
        return y
    flip = rng.random(y.size) < noise
    y = y.copy()
    y[flip] = (y[flip] + rng.integers(1, n_classes, flip.sum())) % n_classes
    return y


def make_blobs(n_samples=1000, n_classes=3, n_features=2, cluster_std=1.0, center_box=(-5.0, 5.0),
               seed=0) -> Dataset:
    """Isotropic Gaussian blobs, one per class, with near-equal class sizes."""
    rng = check_rng(seed)
    centers = rng.uniform(*center_box, size=(n_classes, n_features))
    y = np.arange(n_samples) % n_classes
    y = rng.permutation(y)
    X = centers[y] + rng.normal(0.0, cluster_std, size=(n_samples, n_features))
    return Dataset(X, y, n_classes)


def make_moons(n_samples=1000, noise=0.2, seed=0) -> Dataset:
    """Two interleaving half circles."""
    rng = check_rng(seed)
    n0 = n_samples // 2
    n1 = n_samples - n0
    t0 = rng.uniform(0, np.pi, n0)
    t1 = rng.uniform(0, np.pi, n1)
    X = np.vstack([
        np.c_[np.cos(t0), np.sin(t0)],
        np.c_[1.0 - np.cos(t1), 0.5 - np.sin(t1)],
    ])
    X += rng.normal(0.0, noise, X.shape)
    y = np.r_[np.zeros(n0, np.int64), np.ones(n1, np.int64)]
    perm = rng.permutation(n_samples)
    return Dataset(X[perm], y[perm], 2)


def make_xor(n_samples=2000, cells=6, noise=0.0, seed=0) -> Dataset:
    """Checkerboard on the unit square: ``cells`` x ``cells`` alternating labels.

    ``cells=2`` is the classic XOR layout. A fraction ``noise`` of labels is
    flipped.
    """
    rng = check_rng(seed)
    X = rng.random((n_samples, 2))
    y = ((np.floor(X[:, 0] * cells) + np.floor(X[:, 1] * cells)) % 2).astype(np.int64)
    y = _flip(y, noise, 2, rng)
    return Dataset(X, y, 2)


def generate(kind: str, **kwargs) -> Dataset:
    if kind == "blobs":
        return make_blobs(**kwargs)
    if kind == "moons":
        return make_moons(**kwargs)
    if kind == "xor":
        return make_xor(**kwargs)
    raise ValueError(f"unknown generator {kind!r}; choose from {GENERATORS}")
