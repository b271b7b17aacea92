"""Infinite Beta Mixture Model sampling over per-instance uncertainty scores.

The sample budget is partitioned by a Chinese-restaurant process; each
cluster gets a Beta component whose shapes are ``scale``-multiplied Beta
draws, and the cluster's rows are drawn with replacement with probability
proportional to that component's density at each row's score.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import betaln

from ._validation import check_rng, derive_seed
from .dataset import Multiset, sample_with_replacement
from .uncertainty import UncertaintyProfile

ALPHA_RANGE = (0.1, 99.6)
SHAPE_RANGE = (0.1, 10.0)
DEFAULT_SCALE = 10000.0
SHAPE_FLOOR = 1e-3
SCORE_CLAMP = 1e-6


@dataclass(frozen=True)
class IbmmParams:
    """Concentration ``alpha`` and the two Beta priors ``Beta(a, b)`` / ``Beta(a2, b2)``."""

    alpha: float
    a: float
    b: float
    a2: float
    b2: float
    scale: float = DEFAULT_SCALE

    def __post_init__(self):
        lo, hi = ALPHA_RANGE
        if not lo <= self.alpha <= hi:
            raise ValueError(f"alpha={self.alpha} outside [{lo}, {hi}]")
        lo, hi = SHAPE_RANGE
        for name in ("a", "b", "a2", "b2"):
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Partition:
    sizes: np.ndarray

    def __post_init__(self):
        sizes = np.asarray(self.sizes, dtype=np.int64)
        if sizes.ndim != 1 or sizes.size < 1 or sizes.min() < 1:
            raise ValueError("a partition needs at least one cluster, all of size >= 1")
        object.__setattr__(self, "sizes", sizes)

    @property
    def k(self) -> int:
        return int(self.sizes.size)

    @property
    def total(self) -> int:
        return int(self.sizes.sum())


@dataclass
class SamplerTrace:
    """Per-cluster record of one IBMM draw: sizes and Beta shapes."""

    sizes: list[int] = field(default_factory=list)
    A: list[float] = field(default_factory=list)
    B: list[float] = field(default_factory=list)
    fallback_clusters: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "clusters": [{"n": n, "A": a, "B": b} for n, a, b in zip(self.sizes, self.A, self.B)],
            "fallback_clusters": list(self.fallback_clusters),
        }


def expected_cluster_count(n: int, alpha: float) -> float:
    """Exact CRP expectation ``sum_i alpha / (alpha + i - 1)``."""
    i = np.arange(n)
    return float(np.sum(alpha / (alpha + i)))


def dp_partition(n: int, alpha: float, seed) -> Partition:
    """Cluster sizes of ``n`` items seated by the Chinese-restaurant process.

    Item ``i`` (0-based) opens a new cluster with probability
    ``alpha / (i + alpha)`` and otherwise copies the cluster of a uniformly
    chosen earlier item, which is the same as joining cluster ``c`` with
    probability ``n_c / (i + alpha)``.
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    v = check_rng(seed).random(n)
    labels = [0] * n
    sizes = [1]
    for i in range(1, n):
        x = v[i] * (i + alpha)
        if x < i:
            c = labels[int(x)]
            sizes[c] += 1
        else:
            c = len(sizes)
            sizes.append(1)
        labels[i] = c
    return Partition(np.array(sizes))


def clamp_shape(x):
    return np.maximum(np.asarray(x, dtype=np.float64), SHAPE_FLOOR)


def draw_components(partition: Partition | int, psi: IbmmParams, seed) -> tuple[np.ndarray, np.ndarray]:
    """One ``(A_i, B_i)`` per cluster, each ``scale * Beta(prior)`` floored at 1e-3."""
    k = partition if isinstance(partition, (int, np.integer)) else partition.k
    rng = check_rng(seed)
    A = clamp_shape(psi.scale * rng.beta(psi.a, psi.b, size=k))
    B = clamp_shape(psi.scale * rng.beta(psi.a2, psi.b2, size=k))
    return A, B


def beta_logpdf(u, A, B):
    u = np.asarray(u, dtype=np.float64)
    return (A - 1.0) * np.log(u) + (B - 1.0) * np.log1p(-u) - betaln(A, B)


def beta_pdf(u, A, B):
    """Beta density, evaluated through its logarithm.

    Raises ``FloatingPointError`` when the density overflows float64.
    """
    if not (np.all(np.asarray(A) > 0) and np.all(np.asarray(B) > 0)):
        raise ValueError("Beta shapes must be positive")
    with np.errstate(over="raise"):
        out = np.exp(beta_logpdf(u, A, B))
    return float(out) if np.ndim(out) == 0 else out


def clamp_scores(u):
    return np.clip(np.asarray(u, dtype=np.float64), SCORE_CLAMP, 1.0 - SCORE_CLAMP)


def _scores_of(profile) -> np.ndarray:
    if isinstance(profile, UncertaintyProfile):
        return profile.flat
    return np.asarray(profile, dtype=np.float64)


def ibmm_sample(n: int, psi: IbmmParams, profile, seed, return_trace=False):
    """Draw a multiset of ``n`` rows guided by the scores in ``profile``.

    ``profile`` is either an :class:`UncertaintyProfile` (its flattened scores
    are used) or a plain array of scores. The per-cluster densities are
    normalized in log space, so their absolute scale never overflows; a
    cluster whose weights are still degenerate falls back to uniform weights
    and is listed in the trace.
    """
    u = clamp_scores(_scores_of(profile))
    N = u.size
    trace = SamplerTrace()
    if n <= 0:
        out = Multiset.empty(N)
        return (out, trace) if return_trace else out
    part = dp_partition(n, psi.alpha, derive_seed(seed, 0))
    A, B = draw_components(part, psi, derive_seed(seed, 1))
    logu, log1mu = np.log(u), np.log1p(-u)
    dense = np.zeros(N, dtype=np.int64)
    for i, (ni, Ai, Bi) in enumerate(zip(part.sizes, A, B)):
        lw = (Ai - 1.0) * logu + (Bi - 1.0) * log1mu
        top = lw.max()
        if np.isfinite(top):
            w = np.exp(lw - top)
        else:
            w = np.ones(N)
            trace.fallback_clusters.append(i)
        draws = sample_with_replacement(N, w, int(ni), derive_seed(seed, 2, i))
        dense[draws.indices] += draws.counts
        trace.sizes.append(int(ni))
        trace.A.append(float(Ai))
        trace.B.append(float(Bi))
    nz = np.flatnonzero(dense)
    out = Multiset(nz, dense[nz], N)
    return (out, trace) if return_trace else out


def ibmm_draw_scores(n: int, psi: IbmmParams, seed) -> np.ndarray:
    """``n`` score values drawn from the mixture itself (used for report curves)."""
    if n <= 0:
        return np.empty(0)
    part = dp_partition(n, psi.alpha, derive_seed(seed, 0))
    A, B = draw_components(part, psi, derive_seed(seed, 1))
    rng = np.random.default_rng(derive_seed(seed, 3))
    return np.concatenate([rng.beta(a, b, size=m) for m, a, b in zip(part.sizes, A, B)])
