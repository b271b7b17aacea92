"""Evaluation quantities: macro F1, relative improvement, SDI, compaction."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np


def f1_macro(predictions, truth, n_classes: int | None = None) -> float:
    """Unweighted mean of per-class F1 over all ``n_classes`` classes.

    A class with no true positives (including one that is never predicted
    and never present) contributes 0.
    """
    p = np.asarray(predictions, dtype=np.int64)
    t = np.asarray(truth, dtype=np.int64)
    if p.shape != t.shape or p.ndim != 1 or p.size < 1:
        raise ValueError("predictions and truth must be equal-length, non-empty 1-D arrays")
    C = int(n_classes if n_classes is not None else max(p.max(), t.max()) + 1)
    tp = np.bincount(t[p == t], minlength=C).astype(np.float64)
    pred = np.bincount(p, minlength=C).astype(np.float64)
    true = np.bincount(t, minlength=C).astype(np.float64)
    denom = pred + true
    # 2PR/(P+R) == 2TP/(2TP+FP+FN)
    f1 = np.where(denom > 0, 2.0 * tp / np.where(denom > 0, denom, 1.0), 0.0)
    return float(f1[:C].mean())


@dataclass(frozen=True)
class ScorePair:
    baseline: tuple[float, ...]
    improved: tuple[float, ...]

    def __post_init__(self):
        b = tuple(float(v) for v in np.atleast_1d(self.baseline))
        n = tuple(float(v) for v in np.atleast_1d(self.improved))
        if len(b) != len(n) or not b:
            raise ValueError("baseline and improved need the same non-zero number of runs")
        if any(not 0.0 <= v <= 1.0 for v in b + n):
            raise ValueError("F1 scores must lie in [0, 1]")
        object.__setattr__(self, "baseline", b)
        object.__setattr__(self, "improved", n)


def delta_f1(pair: ScorePair | None = None, *, baseline=None, improved=None) -> float:
    """Percentage improvement of mean improved F1 over mean baseline F1, floored at 0.

    Runs are averaged before the ratio is taken.
    """
    if pair is None:
        pair = ScorePair(baseline, improved)
    base = float(np.mean(pair.baseline))
    new = float(np.mean(pair.improved))
    if base <= 0:
        raise ValueError("mean baseline F1 is zero; relative improvement undefined")
    return max(0.0, 100.0 * (new - base) / base)


def sdi(delta_ora: float, delta_alt: float) -> float:
    """Scaled difference in improvement, in [-1, 1]; 0 when both are 0."""
    if delta_ora < 0 or delta_alt < 0:
        raise ValueError("improvements must be non-negative")
    h = max(delta_ora, delta_alt)
    if h == 0:
        return 0.0
    return (delta_ora - delta_alt) / h


def pct_better(deltas_ora, deltas_alt) -> float:
    """Percentage of positions where ``deltas_ora`` strictly beats ``deltas_alt``."""
    a = np.asarray(deltas_ora, dtype=np.float64)
    b = np.asarray(deltas_alt, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size == 0:
        raise ValueError("need equal-length, non-empty lists")
    return float(100.0 * np.count_nonzero(a > b) / a.size)


def rel_diff_vs_oracle(improved_f1: float, oracle_f1: float) -> float:
    """Signed percentage difference of the improved model's F1 from the oracle's."""
    if not oracle_f1 > 0:
        raise ValueError("oracle F1 must be positive")
    return 100.0 * (improved_f1 - oracle_f1) / oracle_f1


@dataclass(frozen=True)
class CompactionCurve:
    sizes: tuple[int, ...]
    minimal_sizes: tuple[int, ...]
    family: str = ""
    # sizes where the smallest matching improved model is larger than the baseline
    above_diagonal: tuple[int, ...] = ()


def compaction(baseline_scores: dict, improved_scores: dict, family: str = "") -> tuple[CompactionCurve, float]:
    """Compaction profile and index.

    For each baseline size ``x`` the curve holds the smallest improved size
    whose F1 reaches the baseline's F1 at ``x`` (``x`` itself if none does).
    The index is the area between the diagonal and the curve, counted where
    the curve lies below the diagonal, over the full area ``K(K-1)/2``.
    """
    sizes = sorted(baseline_scores)
    if sorted(improved_scores) != sizes:
        raise ValueError("baseline and improved scores must cover the same sizes")
    ys = []
    for x in sizes:
        hits = [s for s in sizes if improved_scores[s] >= baseline_scores[x]]
        ys.append(min(hits) if hits else x)
    above = tuple(x for x, y in zip(sizes, ys) if y > x)
    curve = CompactionCurve(tuple(sizes), tuple(ys), family, above)
    K = len(sizes)
    full = K * (K - 1) / 2.0
    if full == 0:
        return curve, 0.0
    gain = sum(max(0, x - y) for x, y in zip(range(1, K + 1), [sizes.index(y) + 1 for y in ys]))
    return curve, float(min(1.0, max(0.0, gain / full)))


def table_csv(rows: list[dict], columns: list[str] | None = None) -> str:
    """Render a list of flat dicts as CSV, columns in first-seen order."""
    if columns is None:
        columns = []
        for r in rows:
            for k in r:
                if k not in columns:
                    columns.append(k)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k, "")) for k in columns})
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def read_table_csv(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))
