"""Input validation and seeding helpers shared across the package."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array


def check_rng(seed) -> np.random.Generator:
    """Turn an int, ``None`` or ``Generator`` into a ``Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, numbers.Integral):
        return np.random.default_rng(seed)
    raise TypeError(f"cannot build a random generator from {seed!r}")


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic child seed for ``(seed, *keys)``.

    Every random stream in a run hangs off one top-level seed through this
    function, so that re-running a configuration reproduces it exactly.
    """
    entropy = [int(seed)] + [int(k) for k in keys]
    if any(e < 0 for e in entropy):
        raise ValueError("seeds and keys must be non-negative")
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint32)[0])


def check_features(X, name="X") -> np.ndarray:
    X = check_array(X, dtype=np.float64, ensure_all_finite=True, input_name=name)
    return X


def check_labels(y, n_samples: int | None = None) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"labels must be 1-D, got shape {y.shape}")
    if y.size and not np.issubdtype(y.dtype, np.integer):
        yi = y.astype(np.int64)
        if not np.array_equal(yi, y):
            raise ValueError("labels must be integer class ids")
        y = yi
    y = y.astype(np.int64, copy=False)
    if y.size and y.min() < 0:
        raise ValueError("labels must be non-negative class ids")
    if n_samples is not None and y.shape[0] != n_samples:
        raise ValueError(f"got {y.shape[0]} labels for {n_samples} instances")
    return y


def check_probabilities(P, atol: float = 1e-6) -> np.ndarray:
    """Validate a matrix of class distributions, one row per instance."""
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    if P.ndim != 2 or P.shape[1] < 1:
        raise ValueError(f"expected a 2-D probability matrix, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise ValueError("probabilities must be finite")
    if np.any(P < -atol):
        raise ValueError("probabilities must be non-negative")
    if not np.allclose(P.sum(axis=1), 1.0, atol=atol):
        raise ValueError("each probability row must sum to 1")
    return np.clip(P, 0.0, 1.0)


def check_unit_scores(u, name="scores") -> np.ndarray:
    u = np.asarray(u, dtype=np.float64).ravel()
    if not np.all(np.isfinite(u)):
        raise ValueError(f"{name} must be finite")
    bad = np.flatnonzero((u < 0.0) | (u > 1.0))
    if bad.size:
        raise ValueError(f"{name} must lie in [0, 1]; index {bad[0]} is {u[bad[0]]!r}")
    return u
