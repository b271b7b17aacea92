"""Independent reference computations shared by unit and acceptance tests."""

from fractions import Fraction

import numpy as np


def brute_force_stump(X, y, n_classes):
    """Exact minimum weighted-Gini split by exhaustive search in rational arithmetic.

    Returns ``(feature, lo, hi)`` where the split lies between consecutive
    distinct values ``lo < hi``; ties go to the lower feature, then the
    lower threshold. ``None`` if no split exists.
    """
    n = len(y)
    best = None
    for f in range(X.shape[1]):
        values = sorted(set(X[:, f].tolist()))
        for lo, hi in zip(values[:-1], values[1:]):
            left = [0] * n_classes
            right = [0] * n_classes
            for xi, yi in zip(X[:, f], y):
                (left if xi <= lo else right)[yi] += 1
            nl, nr = sum(left), sum(right)
            gini = Fraction(0)
            for counts, m in ((left, nl), (right, nr)):
                g = 1 - sum(Fraction(c, m) ** 2 for c in counts)
                gini += Fraction(m, n) * g
            if best is None or gini < best[0]:
                best = (gini, f, lo, hi)
    return None if best is None else best[1:]


def confusion_f1(pred, truth, n_classes):
    """Macro F1 from an explicit confusion matrix."""
    cm = np.zeros((n_classes, n_classes), dtype=int)
    for p, t in zip(pred, truth):
        cm[t, p] += 1
    scores = []
    for c in range(n_classes):
        tp = cm[c, c]
        fp = cm[:, c].sum() - tp
        fn = cm[c, :].sum() - tp
        scores.append(0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn))
    return sum(scores) / n_classes
