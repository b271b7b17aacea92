"""Prediction-uncertainty scores and the rank-preserving flattening transform."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_probabilities, check_unit_scores

DEFAULT_BINS = 20


def margin_uncertainty(probs) -> np.ndarray | float:
    """``1 - (p_top - p_second)``; 1 when the two leading classes tie."""
    P = check_probabilities(probs)
    if P.shape[1] == 1:
        out = np.zeros(P.shape[0])
    else:
        top2 = np.partition(P, P.shape[1] - 2, axis=1)[:, -2:]
        out = 1.0 - (top2[:, 1] - top2[:, 0])
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if np.ndim(probs) == 1 else out


def least_confident(probs) -> np.ndarray | float:
    P = check_probabilities(probs)
    out = np.clip(1.0 - P.max(axis=1), 0.0, 1.0)
    return float(out[0]) if np.ndim(probs) == 1 else out


def entropy_uncertainty(probs) -> np.ndarray | float:
    """Shannon entropy divided by ``ln C`` so that it lies in [0, 1]."""
    P = check_probabilities(probs)
    C = P.shape[1]
    if C < 2:
        out = np.zeros(P.shape[0])
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(P > 0, -P * np.log(P), 0.0)
        out = np.clip(terms.sum(axis=1) / math.log(C), 0.0, 1.0)
    return float(out[0]) if np.ndim(probs) == 1 else out


METRICS = {
    "margin": margin_uncertainty,
    "least_confident": least_confident,
    "entropy": entropy_uncertainty,
}


def get_metric(name: str):
    try:
        return METRICS[name]
    except KeyError:
        raise ValueError(f"unknown uncertainty metric {name!r}; choose from {sorted(METRICS)}") from None


@dataclass(frozen=True, eq=False)
class UncertaintyProfile:
    """Raw scores, their flattened counterparts and the per-bin linear maps."""

    raw: np.ndarray
    flat: np.ndarray
    bins: int
    raw_lo: np.ndarray
    raw_hi: np.ndarray
    flat_lo: np.ndarray
    flat_hi: np.ndarray

    def unflatten(self, u):
        return unflatten(self, u)

    def to_csv(self, row_ids=None) -> str:
        ids = np.arange(self.raw.size) if row_ids is None else np.asarray(row_ids)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row_index", "raw", "flattened"])
        for i, r, f in zip(ids, self.raw, self.flat):
            w.writerow([int(i), repr(float(r)), repr(float(f))])
        return buf.getvalue()


def _bin_sizes(n: int, bins: int) -> np.ndarray:
    sizes = np.full(bins, n // bins)
    sizes[: n % bins] += 1
    return sizes


def flatten(scores, bins: int = DEFAULT_BINS) -> UncertaintyProfile:
    """Spread scores over [0, 1] so that each of ``bins`` equal bins holds ~N/B of them.

    Scores are ranked (stable on original position), cut into consecutive
    blocks, and each block is mapped linearly from its raw range onto the
    interior of its bin, leaving half a slot of margin at either edge.
    A block with a constant raw range maps to the bin midpoint.
    """
    u = check_unit_scores(scores)
    n = u.size
    bins = int(bins)
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if n < bins:
        raise ValueError(f"need at least as many scores ({n}) as bins ({bins})")
    order = np.argsort(u, kind="stable")
    sizes = _bin_sizes(n, bins)
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    width = 1.0 / bins
    raw_lo = np.empty(bins)
    raw_hi = np.empty(bins)
    flat_lo = np.empty(bins)
    flat_hi = np.empty(bins)
    flat = np.empty(n)
    for j in range(bins):
        members = order[bounds[j]:bounds[j + 1]]
        vals = u[members]
        lo, hi = vals[0], vals[-1]
        margin = 0.5 * width / sizes[j]
        f_lo, f_hi = j * width + margin, (j + 1) * width - margin
        raw_lo[j], raw_hi[j] = lo, hi
        if hi > lo:
            flat_lo[j], flat_hi[j] = f_lo, f_hi
            flat[members] = f_lo + (vals - lo) / (hi - lo) * (f_hi - f_lo)
        else:
            mid = (j + 0.5) * width
            flat_lo[j] = flat_hi[j] = mid
            flat[members] = mid
    return UncertaintyProfile(u, flat, bins, raw_lo, raw_hi, flat_lo, flat_hi)


def unflatten(profile: UncertaintyProfile, u):
    """Map flattened value(s) back to the raw scale (monotone, piecewise linear)."""
    v = np.asarray(u, dtype=np.float64)
    if np.any((v < 0) | (v > 1)):
        raise ValueError("flattened scores must lie in [0, 1]")
    j = np.minimum((v * profile.bins).astype(np.int64), profile.bins - 1)
    # v can sit just below a bin edge while its own bin is the previous one
    flo, fhi = profile.flat_lo[j], profile.flat_hi[j]
    rlo, rhi = profile.raw_lo[j], profile.raw_hi[j]
    span = fhi - flo
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(span > 0, (np.clip(v, flo, fhi) - flo) / np.where(span > 0, span, 1.0), 0.0)
    out = rlo + t * (rhi - rlo)
    return float(out) if out.ndim == 0 else out


class UncertaintyFlattener(TransformerMixin, BaseEstimator):
    """Transformer wrapper around :func:`flatten` / :func:`unflatten`.

    ``fit`` learns the bin maps from a score population; ``transform`` maps
    new scores through them (scores outside a bin's raw range are clamped
    to it) and ``inverse_transform`` undoes the map.
    """

    def __init__(self, bins=DEFAULT_BINS):
        self.bins = bins

    def fit(self, X, y=None):
        self.profile_ = flatten(np.ravel(X), self.bins)
        return self

    def transform(self, X):
        check_is_fitted(self, "profile_")
        u = check_unit_scores(np.ravel(X))
        p = self.profile_
        j = np.clip(np.searchsorted(p.raw_lo, u, side="right") - 1, 0, p.bins - 1)
        # equal raw values may straddle bins; prefer the earliest bin containing u
        first = np.searchsorted(p.raw_hi, u, side="left")
        j = np.where(first < j, np.maximum(first, 0), j)
        rlo, rhi = p.raw_lo[j], p.raw_hi[j]
        span = rhi - rlo
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(span > 0, (np.clip(u, rlo, rhi) - rlo) / np.where(span > 0, span, 1.0), 0.0)
        out = np.where(span > 0, p.flat_lo[j] + t * (p.flat_hi[j] - p.flat_lo[j]), p.flat_lo[j])
        return out.reshape(np.shape(X))

    def fit_transform(self, X, y=None, **fit_params):
        self.fit(X)
        return self.profile_.flat.reshape(np.shape(X))

    def inverse_transform(self, X):
        check_is_fitted(self, "profile_")
        return np.asarray(unflatten(self.profile_, np.ravel(X))).reshape(np.shape(X))


def read_profile_csv(text) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Parse a ``row_index,raw,flattened`` export into three arrays."""
    rows = list(csv.reader(io.StringIO(text)))
    if rows and rows[0] and rows[0][0].strip() == "row_index":
        rows = rows[1:]
    ids = np.array([int(r[0]) for r in rows if r], dtype=np.int64)
    raw = np.array([float(r[1]) for r in rows if r])
    flat = np.array([float(r[2]) for r in rows if r])
    return ids, raw, flat
