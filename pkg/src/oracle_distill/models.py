"""Size-constrained interpretable classifiers.

Two families share one contract (``fit`` / ``predict_proba`` / ``size_``):

* :class:`CARTClassifier` -- greedy binary tree on weighted Gini impurity,
  size is the realized depth.
* :class:`LinearProbabilityClassifier` -- one-vs-rest least-squares models
  grown one term at a time, size is the number of non-zero coefficients per
  binary model.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features, check_labels, check_rng

FAMILIES = ("dt", "lpm")
# depth cap used to grow the "unconstrained" reference tree
UNCONSTRAINED_DEPTH = 64

_TIE_TOL = 1e-12


class _ClassifierBase(ClassifierMixin, BaseEstimator):
    """Shared label handling: classes are always ``0..n_classes-1``."""

    def _prepare(self, X, y, sample_weight):
        X = check_features(X)
        y = check_labels(y, X.shape[0])
        if X.shape[0] == 0:
            raise ValueError("cannot fit on empty data")
        C = self.n_classes if self.n_classes is not None else max(int(y.max()) + 1, 2)
        if y.max() >= C:
            raise ValueError(f"label {y.max()} out of range for {C} classes")
        if sample_weight is None:
            w = np.ones(X.shape[0])
        else:
            w = np.asarray(sample_weight, dtype=np.float64)
            if w.shape != (X.shape[0],) or np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError("sample_weight must be finite, non-negative, one per row")
        self.classes_ = np.arange(C)
        self.n_features_in_ = X.shape[1]
        return X, y, w, C

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)


# -- decision tree ------------------------------------------------------------

def _best_split(X, Wc, rows, features, max_features=None):
    """Exhaustive weighted-Gini split search over ``features`` for ``rows``.

    Returns ``(feature, threshold, score)`` maximizing
    ``sum(left**2)/W_left + sum(right**2)/W_right`` (equivalently minimizing
    the children's weighted Gini), or ``None`` when no split exists.
    Ties go to the lower feature index, then the lower threshold.
    """
    W = Wc[rows]
    total = W.sum(axis=0)
    best = None
    usable = 0
    for f in features:
        xs = X[rows, f]
        order = np.argsort(xs, kind="stable")
        xs = xs[order]
        distinct = xs[:-1] < xs[1:]
        if not distinct.any():
            continue
        cum = np.cumsum(W[order], axis=0)[:-1]
        pos = np.flatnonzero(distinct)
        left = cum[pos]
        right = total - left
        wl = left.sum(axis=1)
        wr = right.sum(axis=1)
        ok = (wl > 0) & (wr > 0)
        if not ok.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            score = np.where(ok, (left**2).sum(axis=1) / wl + (right**2).sum(axis=1) / wr, -np.inf)
        top = score.max()
        i = int(np.flatnonzero(score >= top - _TIE_TOL * max(abs(top), 1.0))[0])
        lo, hi = xs[pos[i]], xs[pos[i] + 1]
        thr = lo + (hi - lo) / 2.0
        if thr >= hi:
            thr = lo
        usable += 1
        if best is None or score[i] > best[2] + _TIE_TOL * max(abs(best[2]), 1.0) or (
            abs(score[i] - best[2]) <= _TIE_TOL * max(abs(best[2]), 1.0) and f < best[0]
        ):
            best = (int(f), float(thr), float(score[i]))
        if max_features is not None and usable >= max_features:
            break
    return best


class CARTClassifier(_ClassifierBase):
    """Binary decision tree grown greedily on weighted Gini impurity.

    Splits are taken at midpoints between consecutive distinct values; a node
    becomes a leaf at ``max_depth``, when pure, or with fewer than two rows.
    ``max_features`` (used by forests) restricts each split search to a random
    subset of features drawn with ``random_state``.
    """

    def __init__(self, max_depth=5, n_classes=None, class_weight=None,
                 max_features=None, random_state=None):
        self.max_depth = max_depth
        self.n_classes = n_classes
        self.class_weight = class_weight
        self.max_features = max_features
        self.random_state = random_state

    def fit(self, X, y, sample_weight=None):
        X, y, w, C = self._prepare(X, y, sample_weight)
        max_depth = UNCONSTRAINED_DEPTH if self.max_depth is None else int(self.max_depth)
        if max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.class_weight is not None:
            cw = (class_balance_weights(y, w, C) if isinstance(self.class_weight, str)
                  else np.asarray(self.class_weight, dtype=np.float64))
            w = w * cw[y]
        keep = np.flatnonzero(w > 0)
        if keep.size == 0:
            raise ValueError("cannot fit on data with zero total weight")
        Wc = np.zeros((X.shape[0], C))
        Wc[np.arange(X.shape[0]), y] = w
        d = X.shape[1]
        k = None
        if self.max_features is not None:
            k = max(1, int(np.sqrt(d))) if self.max_features == "sqrt" else int(self.max_features)
        rng = check_rng(self.random_state) if k is not None else None

        feature, threshold, left, right, value, depth_of = [], [], [], [], [], []

        def new_node(rows, depth):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(Wc[rows].sum(axis=0))
            depth_of.append(depth)
            return len(feature) - 1

        stack = [(new_node(keep, 0), keep, 0)]
        while stack:
            node, rows, depth = stack.pop()
            counts = value[node]
            if depth >= max_depth or rows.size < 2 or np.count_nonzero(counts) <= 1:
                continue
            feats = rng.permutation(d) if k is not None else range(d)
            split = _best_split(X, Wc, rows, feats, k)
            if split is None:
                continue
            f, thr, _ = split
            go_left = X[rows, f] <= thr
            feature[node], threshold[node] = f, thr
            lrows, rrows = rows[go_left], rows[~go_left]
            left[node] = new_node(lrows, depth + 1)
            right[node] = new_node(rrows, depth + 1)
            # right pushed first so the left subtree gets the lower node ids
            stack.append((right[node], rrows, depth + 1))
            stack.append((left[node], lrows, depth + 1))

        self.tree_feature_ = np.array(feature, dtype=np.int64)
        self.tree_threshold_ = np.array(threshold)
        self.tree_left_ = np.array(left, dtype=np.int64)
        self.tree_right_ = np.array(right, dtype=np.int64)
        value = np.array(value)
        self.tree_value_ = value / value.sum(axis=1, keepdims=True)
        self.depth_ = int(max(depth_of[i] for i in range(len(feature)) if feature[i] < 0))
        return self

    @property
    def size_(self) -> int:
        check_is_fitted(self, "tree_feature_")
        return self.depth_

    def apply(self, X):
        """Leaf id reached by every row of ``X``."""
        check_is_fitted(self, "tree_feature_")
        X = check_features(X)
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        for _ in range(self.depth_):
            f = self.tree_feature_[node]
            internal = f >= 0
            if not internal.any():
                break
            go_left = X[rows, np.where(internal, f, 0)] <= self.tree_threshold_[node]
            node = np.where(internal, np.where(go_left, self.tree_left_[node], self.tree_right_[node]), node)
        return node

    def predict_proba(self, X):
        return self.tree_value_[self.apply(X)]

    def root_split(self):
        """``(feature, threshold)`` of the root, or ``None`` for a single leaf."""
        check_is_fitted(self, "tree_feature_")
        if self.tree_feature_[0] < 0:
            return None
        return int(self.tree_feature_[0]), float(self.tree_threshold_[0])

    def to_dict(self) -> dict:
        check_is_fitted(self, "tree_feature_")
        return {
            "family": "dt",
            "max_depth": self.max_depth,
            "n_classes": len(self.classes_),
            "depth": self.depth_,
            "feature": self.tree_feature_.tolist(),
            "threshold": self.tree_threshold_.tolist(),
            "left": self.tree_left_.tolist(),
            "right": self.tree_right_.tolist(),
            "value": self.tree_value_.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CARTClassifier":
        m = cls(max_depth=doc["max_depth"], n_classes=doc["n_classes"])
        m.classes_ = np.arange(doc["n_classes"])
        m.tree_feature_ = np.array(doc["feature"], dtype=np.int64)
        m.tree_threshold_ = np.array(doc["threshold"], dtype=np.float64)
        m.tree_left_ = np.array(doc["left"], dtype=np.int64)
        m.tree_right_ = np.array(doc["right"], dtype=np.int64)
        m.tree_value_ = np.array(doc["value"], dtype=np.float64)
        m.depth_ = int(doc["depth"])
        return m


# -- linear probability model ---------------------------------------------------

def _forward_stepwise(Xc, t, n_terms, min_gain=1e-12, rel_tol=1e-10):
    """Greedy forward selection with a full least-squares refit per step.

    ``Xc`` and ``t`` are already centered (and weight-scaled). Returns the
    selected column indices in selection order.
    """
    Z = Xc.copy()
    norms0 = (Xc**2).sum(axis=0)
    r = t.copy()
    selected: list[int] = []
    for _ in range(min(n_terms, Xc.shape[1])):
        zn = (Z**2).sum(axis=0)
        usable = zn > rel_tol * np.maximum(norms0, 1e-300)
        usable[selected] = False
        if not usable.any():
            break
        gain = np.full(Z.shape[1], -np.inf)
        gain[usable] = (Z[:, usable].T @ r) ** 2 / zn[usable]
        j = int(np.argmax(gain))
        if gain[j] <= min_gain:
            break
        q = Z[:, j] / np.sqrt(zn[j])
        r = r - q * (q @ r)
        Z = Z - np.outer(q, q @ Z)
        selected.append(j)
    return selected


class LinearProbabilityClassifier(_ClassifierBase):
    """One-vs-rest linear probability model with at most ``n_terms`` features each.

    Each binary model regresses the 0/1 class indicator on the features.
    Probabilities are the per-class outputs clamped to [0, 1] and renormalized;
    rows where every clamped output is zero get the uniform distribution.
    """

    def __init__(self, n_terms=5, n_classes=None):
        self.n_terms = n_terms
        self.n_classes = n_classes

    def fit(self, X, y, sample_weight=None):
        X, y, w, C = self._prepare(X, y, sample_weight)
        if int(self.n_terms) < 1:
            raise ValueError("n_terms must be >= 1")
        wsum = w.sum()
        if wsum <= 0:
            raise ValueError("cannot fit on data with zero total weight")
        mx = (w @ X) / wsum
        sw = np.sqrt(w)[:, None]
        Xc = (X - mx) * sw
        d = X.shape[1]
        self.coef_ = np.zeros((C, d))
        self.intercept_ = np.zeros(C)
        self.selected_ = []
        for c in range(C):
            target = (y == c).astype(np.float64)
            mt = (w @ target) / wsum
            tc = (target - mt) * sw[:, 0]
            sel = _forward_stepwise(Xc, tc, int(self.n_terms))
            if sel:
                beta, *_ = np.linalg.lstsq(Xc[:, sel], tc, rcond=None)
                self.coef_[c, sel] = beta
            self.intercept_[c] = mt - mx @ self.coef_[c]
            self.selected_.append(sel)
        return self

    @property
    def size_(self) -> int:
        check_is_fitted(self, "coef_")
        return int(max(np.count_nonzero(row) for row in self.coef_))

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_features(X)
        return X @ self.coef_.T + self.intercept_

    def predict_proba(self, X):
        P = np.clip(self.decision_function(X), 0.0, 1.0)
        s = P.sum(axis=1, keepdims=True)
        C = P.shape[1]
        return np.where(s > 0, P / np.where(s > 0, s, 1.0), 1.0 / C)

    def to_dict(self) -> dict:
        check_is_fitted(self, "coef_")
        return {
            "family": "lpm",
            "n_terms": self.n_terms,
            "n_classes": len(self.classes_),
            "coef": self.coef_.tolist(),
            "intercept": self.intercept_.tolist(),
            "selected": [list(map(int, s)) for s in self.selected_],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LinearProbabilityClassifier":
        m = cls(n_terms=doc["n_terms"], n_classes=doc["n_classes"])
        m.classes_ = np.arange(doc["n_classes"])
        m.coef_ = np.array(doc["coef"], dtype=np.float64)
        m.intercept_ = np.array(doc["intercept"], dtype=np.float64)
        m.selected_ = [list(s) for s in doc["selected"]]
        return m


# -- class balancing ------------------------------------------------------------

def class_balance_weights(y, sample_weight=None, n_classes=None) -> np.ndarray:
    """Per-class weights ``N / (K * N_c)`` over the K observed classes; 0 if absent."""
    y = np.asarray(y)
    w = np.ones(y.shape[0]) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    C = int(n_classes if n_classes is not None else y.max() + 1)
    counts = np.bincount(y, weights=w, minlength=C)
    seen = counts > 0
    out = np.zeros(C)
    out[seen] = counts.sum() / (seen.sum() * counts[seen])
    return out


def oversample_indices(y, seed) -> np.ndarray:
    """Row indices with minority classes topped up (with replacement) to the majority count."""
    y = np.asarray(y)
    rng = check_rng(seed)
    counts = np.bincount(y)
    target = counts.max()
    parts = [np.arange(y.shape[0])]
    for c in np.flatnonzero(counts):
        short = target - counts[c]
        if short > 0:
            parts.append(rng.choice(np.flatnonzero(y == c), size=short, replace=True))
    return np.concatenate(parts)


def balance_for_training(X, y, family: str, seed=None, n_classes=None, sample_weight=None):
    """Prepare ``(X, y, sample_weight)`` so that classes count equally.

    Trees get cost weights; linear probability models get oversampled rows
    (``sample_weight`` rows are expanded to repetitions first).
    """
    X = np.asarray(X)
    y = np.asarray(y)
    if family == "dt":
        cw = class_balance_weights(y, sample_weight, n_classes)
        base = np.ones(y.shape[0]) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
        return X, y, base * cw[y]
    if family == "lpm":
        if sample_weight is not None:
            reps = np.asarray(sample_weight)
            if not np.allclose(reps, np.round(reps)):
                raise ValueError("oversampling needs integer repetition counts")
            rows = np.repeat(np.arange(y.shape[0]), np.round(reps).astype(np.int64))
            X, y = X[rows], y[rows]
        idx = oversample_indices(y, seed)
        return X[idx], y[idx], None
    raise ValueError(f"unknown model family {family!r}; expected one of {FAMILIES}")


def make_model(family: str, size: int | None, n_classes: int | None = None, seed=None):
    if family == "dt":
        return CARTClassifier(max_depth=size, n_classes=n_classes, random_state=seed)
    if family == "lpm":
        return LinearProbabilityClassifier(n_terms=size, n_classes=n_classes)
    raise ValueError(f"unknown model family {family!r}; expected one of {FAMILIES}")


def fit_balanced(family, X, y, size, n_classes, seed=None, sample_weight=None):
    """Class-balance the training data, then fit a model of the given size."""
    Xb, yb, wb = balance_for_training(X, y, family, seed, n_classes, sample_weight)
    return make_model(family, size, n_classes, seed).fit(Xb, yb, sample_weight=wb)


def dt_fit(X, y, max_depth, class_weights=None, seed=None, sample_weight=None, n_classes=None):
    return CARTClassifier(max_depth=max_depth, n_classes=n_classes, class_weight=class_weights,
                          random_state=seed).fit(X, y, sample_weight)


def lpm_fit(X, y, size, seed=None, sample_weight=None, n_classes=None):
    return LinearProbabilityClassifier(n_terms=size, n_classes=n_classes).fit(X, y, sample_weight)


def model_from_dict(doc: dict):
    if doc["family"] == "dt":
        return CARTClassifier.from_dict(doc)
    if doc["family"] == "lpm":
        return LinearProbabilityClassifier.from_dict(doc)
    raise ValueError(f"unknown model family {doc['family']!r}")
