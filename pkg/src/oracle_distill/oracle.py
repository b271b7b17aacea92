"""Probabilistic oracles: a random forest, Platt calibration, and precomputed scores."""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
import os

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features, check_labels, derive_seed
from .dataset import Dataset, stratified_split_indices
from .models import CARTClassifier
from .uncertainty import get_metric

log = logging.getLogger(__name__)

DEFAULT_RF_GRID = {"n_estimators": [100], "max_depth": [None]}


class RandomForestOracle(ClassifierMixin, BaseEstimator):
    """Bagged unpruned CART trees with sqrt(d) features tried per split.

    Tree ``t`` is grown from ``derive_seed(random_state, t)``, so forests are
    reproducible and prediction (a mean over trees) ignores tree order.
    """

    def __init__(self, n_estimators=100, max_depth=None, max_features="sqrt",
                 n_classes=None, random_state=0):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.max_features = max_features
        self.n_classes = n_classes
        self.random_state = random_state

    def fit(self, X, y):
        X = check_features(X)
        y = check_labels(y, X.shape[0])
        if int(self.n_estimators) < 1:
            raise ValueError("n_estimators must be >= 1")
        C = self.n_classes if self.n_classes is not None else max(int(y.max()) + 1, 2)
        n = X.shape[0]
        self.classes_ = np.arange(C)
        self.n_features_in_ = X.shape[1]
        self.estimators_ = []
        oob_sum = np.zeros((n, C))
        oob_hits = np.zeros(n)
        for t in range(int(self.n_estimators)):
            rng = np.random.default_rng(derive_seed(self.random_state, t))
            counts = np.bincount(rng.integers(0, n, n), minlength=n)
            tree = CARTClassifier(
                max_depth=self.max_depth, n_classes=C, max_features=self.max_features,
                random_state=rng,
            ).fit(X, y, sample_weight=counts.astype(np.float64))
            self.estimators_.append(tree)
            out = counts == 0
            if out.any():
                oob_sum[out] += tree.predict_proba(X[out])
                oob_hits[out] += 1
        seen = oob_hits > 0
        self.oob_score_ = (
            float(np.mean(np.argmax(oob_sum[seen], axis=1) == y[seen])) if seen.any() else float("nan")
        )
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "estimators_")
        X = check_features(X)
        P = np.zeros((X.shape[0], len(self.classes_)))
        for tree in self.estimators_:
            P += tree.predict_proba(X)
        return P / len(self.estimators_)

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def to_dict(self) -> dict:
        check_is_fitted(self, "estimators_")
        return {
            "kind": "random_forest",
            "n_estimators": self.n_estimators,
            "random_state": self.random_state,
            "n_classes": len(self.classes_),
            "oob_score": self.oob_score_,
            "trees": [t.to_dict() for t in self.estimators_],
        }


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def platt_fit(scores, labels, max_iter=100, tol=1e-5):
    """Fit ``P(y=1|s) = sigmoid(A*s + B)`` by Newton's method with backtracking.

    Targets are smoothed as in Platt's method: ``(N+ + 1)/(N+ + 2)`` for
    positives and ``1/(N- + 2)`` for negatives. Returns ``(A, B, converged)``.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    t = np.where(y, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    A, B = 0.0, math.log((n_pos + 1.0) / (n_neg + 1.0))

    def objective(a, b):
        z = a * s + b
        # log(1 + e^z) - t*z, written to avoid overflow
        return float(np.sum(np.logaddexp(0.0, z) - t * z))

    f = objective(A, B)
    for _ in range(max_iter):
        p = _sigmoid(A * s + B)
        d1 = p - t
        d2 = p * (1.0 - p)
        gA, gB = float(d1 @ s), float(d1.sum())
        if abs(gA) < tol and abs(gB) < tol:
            return A, B, True
        h11 = float(d2 @ (s * s)) + 1e-12
        h22 = float(d2.sum()) + 1e-12
        h21 = float(d2 @ s)
        det = h11 * h22 - h21 * h21
        dA = -(h22 * gA - h21 * gB) / det
        dB = -(-h21 * gA + h11 * gB) / det
        gd = gA * dA + gB * dB
        step = 1.0
        while step >= 1e-10:
            na, nb = A + step * dA, B + step * dB
            nf = objective(na, nb)
            if nf < f + 1e-4 * step * gd:
                A, B, f = na, nb, nf
                break
            step /= 2.0
        else:
            # no further decrease representable: accept if the gradient is tiny per sample
            return A, B, bool(max(abs(gA), abs(gB)) < 1e-6 * max(s.size, 1))
    return A, B, False


class PlattCalibratedOracle(ClassifierMixin, BaseEstimator):
    """Per-class one-vs-rest Platt sigmoids over a fitted base oracle.

    Calibrated class scores are renormalized to a distribution. A class whose
    Newton fit does not converge keeps its raw score (``identity_classes_``).
    """

    def __init__(self, base=None, max_iter=100):
        self.base = base
        self.max_iter = max_iter

    def fit(self, X, y):
        if not hasattr(self.base, "predict_proba"):
            raise TypeError("base oracle must provide predict_proba")
        X = check_features(X)
        y = check_labels(y, X.shape[0])
        raw = self.base.predict_proba(X)
        C = raw.shape[1]
        self.classes_ = np.arange(C)
        self.A_ = np.ones(C)
        self.B_ = np.zeros(C)
        self.identity_classes_ = []
        for c in range(C):
            A, B, ok = platt_fit(raw[:, c], y == c, self.max_iter)
            if ok:
                self.A_[c], self.B_[c] = A, B
            else:
                log.warning("Platt fit for class %d did not converge; using identity", c)
                self.identity_classes_.append(c)
        self.nonmonotone_classes_ = [int(c) for c in np.flatnonzero(self.A_ <= 0)]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "A_")
        raw = self.base.predict_proba(X)
        Q = _sigmoid(raw * self.A_ + self.B_)
        if self.identity_classes_:
            Q[:, self.identity_classes_] = raw[:, self.identity_classes_]
        s = Q.sum(axis=1, keepdims=True)
        C = Q.shape[1]
        return np.where(s > 0, Q / np.where(s > 0, s, 1.0), 1.0 / C)

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def to_dict(self) -> dict:
        doc = self.base.to_dict() if hasattr(self.base, "to_dict") else {}
        return {
            "kind": "platt_calibrated",
            "A": self.A_.tolist(),
            "B": self.B_.tolist(),
            "identity_classes": list(self.identity_classes_),
            "nonmonotone_classes": list(self.nonmonotone_classes_),
            "base": doc,
        }


def platt_calibrate(oracle, cal_data: Dataset) -> PlattCalibratedOracle:
    return PlattCalibratedOracle(oracle).fit(cal_data.X, cal_data.y)


class PrecomputedOracle:
    """Uncertainty scores supplied by an external model, keyed by dataset row id."""

    def __init__(self, scores: dict[int, float]):
        for rid, u in scores.items():
            if not (0.0 <= u <= 1.0) or math.isnan(u):
                raise ValueError(f"row {rid}: uncertainty {u!r} outside [0, 1]")
        self.scores = dict(scores)

    def uncertainties(self, ds: Dataset) -> np.ndarray:
        missing = [int(r) for r in ds.row_ids if int(r) not in self.scores]
        if missing:
            raise ValueError(f"precomputed scores missing row {missing[0]} ({len(missing)} rows uncovered)")
        return np.array([self.scores[int(r)] for r in ds.row_ids])


def load_precomputed(path_or_text, required_rows=None) -> PrecomputedOracle:
    """Read ``row_index,uncertainty`` CSV (header optional) from a path or a string."""
    if isinstance(path_or_text, (str, os.PathLike)) and os.path.exists(path_or_text):
        with open(path_or_text) as fh:
            text = fh.read()
    else:
        text = str(path_or_text)
    scores: dict[int, float] = {}
    for lineno, rec in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not rec or all(not c.strip() for c in rec):
            continue
        if lineno == 1 and not rec[0].strip().lstrip("-").isdigit():
            continue
        if len(rec) < 2:
            raise ValueError(f"line {lineno}: expected row_index,uncertainty")
        try:
            rid, u = int(rec[0]), float(rec[1])
        except ValueError:
            raise ValueError(f"line {lineno}: malformed record {rec!r}") from None
        if not 0.0 <= u <= 1.0:
            raise ValueError(f"line {lineno}: uncertainty {u!r} for row {rid} outside [0, 1]")
        if rid in scores:
            raise ValueError(f"line {lineno}: duplicate row {rid}")
        scores[rid] = u
    oracle = PrecomputedOracle(scores)
    if required_rows is not None:
        missing = [int(r) for r in required_rows if int(r) not in scores]
        if missing:
            raise ValueError(f"precomputed scores missing row {missing[0]} ({len(missing)} rows uncovered)")
    return oracle


def write_precomputed(row_ids, scores) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row_index", "uncertainty"])
    for rid, u in zip(row_ids, scores):
        w.writerow([int(rid), repr(float(u))])
    return buf.getvalue()


def oracle_uncertainties(oracle, ds: Dataset, metric: str = "margin") -> np.ndarray:
    """Per-row uncertainty of ``oracle`` on ``ds`` under ``metric``."""
    if isinstance(oracle, PrecomputedOracle):
        return oracle.uncertainties(ds)
    return np.asarray(get_metric(metric)(oracle.predict_proba(ds.X)))


def select_forest_params(train: Dataset, grid=None, folds=5, seed=0):
    """Pick forest parameters by stratified k-fold macro F1 over ``train``.

    A grid with a single point is returned without cross-validation.
    """
    from .metrics import f1_macro

    grid = DEFAULT_RF_GRID if grid is None else grid
    keys = sorted(grid)
    candidates = [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]
    if len(candidates) == 1:
        return candidates[0], {}
    fold_idx = stratified_split_indices(train.y, [1.0 / folds] * folds, seed, train.class_count)
    scores = {}
    for ci, params in enumerate(candidates):
        vals = []
        for k in range(folds):
            tr = np.concatenate([fold_idx[j] for j in range(folds) if j != k])
            model = RandomForestOracle(n_classes=train.class_count,
                                       random_state=derive_seed(seed, ci, k), **params)
            model.fit(train.X[tr], train.y[tr])
            vals.append(f1_macro(model.predict(train.X[fold_idx[k]]), train.y[fold_idx[k]], train.class_count))
        scores[ci] = float(np.mean(vals))
    best = max(scores, key=lambda c: (scores[c], -c))
    return candidates[best], {json_key(candidates[c]): v for c, v in scores.items()}


def json_key(params: dict) -> str:
    return ",".join(f"{k}={params[k]}" for k in sorted(params))


def build_forest_oracle(train: Dataset, seed: int, calibrate=True, cal_fraction=0.2, grid=None, folds=5):
    """Fit (and by default Platt-calibrate) a forest oracle on ``train``.

    Calibration uses a stratified ``cal_fraction`` slice of ``train`` that the
    forest never sees; returns ``(oracle, info)``.
    """
    info: dict = {}
    if calibrate:
        fit_idx, cal_idx = stratified_split_indices(
            train.y, [1.0 - cal_fraction, cal_fraction], derive_seed(seed, 1), train.class_count
        )
    else:
        fit_idx, cal_idx = np.arange(train.n_samples), np.empty(0, np.int64)
    fit_part = train.subset(fit_idx)
    params, cv = select_forest_params(fit_part, grid, folds, derive_seed(seed, 2))
    info["forest_params"] = params
    if cv:
        info["cv_scores"] = cv
    forest = RandomForestOracle(n_classes=train.class_count, random_state=derive_seed(seed, 3), **params)
    forest.fit(fit_part.X, fit_part.y)
    info["oob_score"] = forest.oob_score_
    if not calibrate or cal_idx.size == 0:
        return forest, info
    cal = PlattCalibratedOracle(forest).fit(train.X[cal_idx], train.y[cal_idx])
    info["calibration"] = {
        "A": cal.A_.tolist(), "B": cal.B_.tolist(),
        "identity_classes": cal.identity_classes_,
        "nonmonotone_classes": cal.nonmonotone_classes_,
    }
    return cal, info
