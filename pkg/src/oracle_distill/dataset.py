"""Labeled datasets: ingestion, writing, splitting and re-sampling.

A :class:`Dataset` is a dense feature matrix with contiguous integer labels.
Raw labels found in a file are mapped to ``0..C-1`` in ascending numeric
order and the mapping is kept in ``label_values`` so writers can emit the
original labels again.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_features, check_labels, check_rng


class DatasetFormatError(ValueError):
    """Raised for malformed LIBSVM / CSV input."""


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    class_count: int
    feature_names: tuple[str, ...] | None = None
    label_values: tuple[float, ...] | None = None
    # positions of these rows in the file they were read from
    row_ids: np.ndarray | None = None

    def __post_init__(self):
        X = check_features(self.X).copy()
        y = check_labels(self.y, X.shape[0]).copy()
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError("a dataset needs at least one row and one column")
        C = int(self.class_count)
        if C < 2:
            raise ValueError(f"class_count must be >= 2, got {C}")
        if y.max() >= C:
            raise ValueError(f"label {y.max()} out of range for {C} classes")
        if self.feature_names is not None and len(self.feature_names) != X.shape[1]:
            raise ValueError("feature_names length does not match column count")
        if self.label_values is not None and len(self.label_values) != C:
            raise ValueError("label_values length does not match class_count")
        row_ids = np.arange(X.shape[0]) if self.row_ids is None else np.asarray(self.row_ids, dtype=np.int64)
        if row_ids.shape != (X.shape[0],):
            raise ValueError("row_ids must have one entry per row")
        X.setflags(write=False)
        y.setflags(write=False)
        row_ids.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "class_count", C)
        object.__setattr__(self, "row_ids", row_ids)
        if self.feature_names is not None:
            object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if self.label_values is not None:
            object.__setattr__(self, "label_values", tuple(float(v) for v in self.label_values))

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.class_count)

    def subset(self, indices) -> "Dataset":
        """Rows at ``indices`` (positions, not row ids), metadata kept."""
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.X[idx], self.y[idx], self.class_count,
            self.feature_names, self.label_values, self.row_ids[idx],
        )

    def raw_labels(self) -> np.ndarray:
        if self.label_values is None:
            return self.y.astype(np.float64)
        return np.asarray(self.label_values)[self.y]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.class_count == other.class_count
            and self.feature_names == other.feature_names
            and self.label_values == other.label_values
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.row_ids, other.row_ids)
        )

    __hash__ = None


@dataclass(frozen=True)
class Multiset:
    """Instances of a parent dataset with repetition counts.

    ``indices`` are sorted and unique, every ``count`` is at least one.
    """

    indices: np.ndarray
    counts: np.ndarray
    parent_size: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        cnt = np.asarray(self.counts, dtype=np.int64)
        if idx.shape != cnt.shape or idx.ndim != 1:
            raise ValueError("indices and counts must be 1-D and aligned")
        if idx.size:
            if idx.min() < 0 or idx.max() >= self.parent_size:
                raise ValueError("multiset index outside the parent dataset")
            if cnt.min() < 1:
                raise ValueError("repetition counts must be >= 1")
            if np.any(np.diff(idx) <= 0):
                raise ValueError("multiset indices must be sorted and unique")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "counts", cnt)

    @classmethod
    def from_draws(cls, draws, parent_size: int) -> "Multiset":
        idx, cnt = np.unique(np.asarray(draws, dtype=np.int64), return_counts=True)
        return cls(idx, cnt, parent_size)

    @classmethod
    def empty(cls, parent_size: int) -> "Multiset":
        return cls(np.empty(0, np.int64), np.empty(0, np.int64), parent_size)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __len__(self):
        return self.total

    def __add__(self, other: "Multiset") -> "Multiset":
        if self.parent_size != other.parent_size:
            raise ValueError("cannot add multisets over different parents")
        dense = self.dense_counts() + other.dense_counts()
        nz = np.flatnonzero(dense)
        return Multiset(nz, dense[nz], self.parent_size)

    def dense_counts(self) -> np.ndarray:
        out = np.zeros(self.parent_size, dtype=np.int64)
        out[self.indices] = self.counts
        return out

    def expand(self) -> np.ndarray:
        """Row positions with repetitions, in index order."""
        return np.repeat(self.indices, self.counts)


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.6
    val: float = 0.2
    test: float = 0.2
    seed: int = 0

    def __post_init__(self):
        fr = (self.train, self.val, self.test)
        if min(fr) <= 0:
            raise ValueError("every split fraction must be > 0")
        if not math.isclose(sum(fr), 1.0, abs_tol=1e-9):
            raise ValueError(f"split fractions must sum to 1, got {sum(fr)}")

    @property
    def fractions(self) -> tuple[float, float, float]:
        return (self.train, self.val, self.test)


# -- ingestion ---------------------------------------------------------------

def _as_text(text) -> str:
    if isinstance(text, (bytes, bytearray)):
        return text.decode("utf-8")
    if hasattr(text, "read"):
        data = text.read()
        return data.decode("utf-8") if isinstance(data, bytes) else data
    return text


def _remap_labels(raw: list[float]):
    values = sorted(set(raw))
    if len(values) < 2:
        # a lone class still needs a second slot to satisfy C >= 2
        values = values + [values[0] + 1.0]
    lookup = {v: i for i, v in enumerate(values)}
    return np.array([lookup[v] for v in raw], dtype=np.int64), tuple(values)


def _parse_number(tok: str, lineno: int, what: str) -> float:
    try:
        val = float(tok)
    except ValueError:
        raise DatasetFormatError(f"line {lineno}: non-numeric {what} {tok!r}") from None
    if not math.isfinite(val):
        raise DatasetFormatError(f"line {lineno}: non-finite {what} {tok!r}")
    return val


def parse_libsvm(text, expected_dim: int | None = None) -> Dataset:
    """Parse LIBSVM sparse text (``<label> <idx>:<val> ...``, 1-based)."""
    rows: list[dict[int, float]] = []
    raw_labels: list[float] = []
    max_idx = 0
    for lineno, line in enumerate(_as_text(text).splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        raw_labels.append(_parse_number(tokens[0], lineno, "label"))
        entries: dict[int, float] = {}
        prev = 0
        for tok in tokens[1:]:
            key, sep, val = tok.partition(":")
            if not sep:
                raise DatasetFormatError(f"line {lineno}: malformed entry {tok!r}")
            try:
                idx = int(key)
            except ValueError:
                raise DatasetFormatError(f"line {lineno}: non-integer index {key!r}") from None
            if idx in entries:
                raise DatasetFormatError(f"line {lineno}: duplicate index {idx}")
            if idx < 1 or idx <= prev:
                raise DatasetFormatError(
                    f"line {lineno}: indices must be 1-based and strictly increasing ({idx} after {prev})"
                )
            prev = idx
            entries[idx] = _parse_number(val, lineno, "value")
        max_idx = max(max_idx, prev)
        rows.append(entries)
    if not rows:
        raise DatasetFormatError("empty dataset")
    dim = max_idx if expected_dim is None else int(expected_dim)
    if max_idx > dim:
        raise DatasetFormatError(f"feature index {max_idx} exceeds expected dimension {dim}")
    X = np.zeros((len(rows), max(dim, 1)))
    for i, entries in enumerate(rows):
        for idx, val in entries.items():
            X[i, idx - 1] = val
    y, values = _remap_labels(raw_labels)
    return Dataset(X, y, len(values), label_values=values)


def parse_csv(text, label_column: int | str = -1) -> Dataset:
    """Parse a numeric CSV with a header row; one column holds the label."""
    reader = csv.reader(io.StringIO(_as_text(text)))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DatasetFormatError("empty dataset") from None
    if isinstance(label_column, str):
        if label_column not in header:
            raise DatasetFormatError(f"label column {label_column!r} not in header")
        lab = header.index(label_column)
    else:
        lab = label_column % len(header)
    if len(header) < 2:
        raise DatasetFormatError("need at least one feature column and a label column")
    feats, raw_labels = [], []
    for lineno, rec in enumerate(reader, start=2):
        if not rec or all(not c.strip() for c in rec):
            continue
        if len(rec) != len(header):
            raise DatasetFormatError(f"line {lineno}: expected {len(header)} fields, got {len(rec)}")
        vals = [_parse_number(c.strip(), lineno, "value") for c in rec]
        raw_labels.append(vals.pop(lab))
        feats.append(vals)
    if not feats:
        raise DatasetFormatError("empty dataset")
    names = tuple(h for i, h in enumerate(header) if i != lab)
    y, values = _remap_labels(raw_labels)
    return Dataset(np.array(feats), y, len(values), feature_names=names, label_values=values)


def _fmt(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def write_libsvm(ds: Dataset) -> str:
    out = []
    for row, lab in zip(ds.X, ds.raw_labels()):
        parts = [_fmt(lab)]
        parts += [f"{j + 1}:{float(row[j])!r}" for j in np.flatnonzero(row)]
        out.append(" ".join(parts))
    return "\n".join(out) + "\n"


def write_csv(ds: Dataset, label_name: str = "label") -> str:
    names = ds.feature_names or tuple(f"f{j}" for j in range(ds.n_features))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(names) + [label_name])
    for row, lab in zip(ds.X, ds.raw_labels()):
        w.writerow([repr(float(v)) for v in row] + [_fmt(lab)])
    return buf.getvalue()


def load_dataset(path, fmt: str | None = None, **kwargs) -> Dataset:
    """Read a dataset from disk; format is inferred from the suffix if not given."""
    path = str(path)
    if fmt is None:
        fmt = "csv" if path.lower().endswith(".csv") else "libsvm"
    with open(path, "rb") as fh:
        data = fh.read()
    if fmt == "csv":
        return parse_csv(data, **kwargs)
    if fmt == "libsvm":
        return parse_libsvm(data, **kwargs)
    raise ValueError(f"unknown dataset format {fmt!r}")


def save_dataset(ds: Dataset, path, fmt: str | None = None) -> None:
    path = str(path)
    if fmt is None:
        fmt = "csv" if path.lower().endswith(".csv") else "libsvm"
    text = write_csv(ds) if fmt == "csv" else write_libsvm(ds)
    with open(path, "w") as fh:
        fh.write(text)


# -- splitting and statistics -------------------------------------------------

def stratified_split_indices(y, fractions, seed, n_classes=None) -> list[np.ndarray]:
    """Per-class shuffle then contiguous slicing; leftovers go to the earliest splits."""
    y = np.asarray(y)
    C = int(n_classes if n_classes is not None else y.max() + 1)
    rng = check_rng(seed)
    parts: list[list[np.ndarray]] = [[] for _ in fractions]
    for c in range(C):
        members = np.flatnonzero(y == c)
        if members.size == 0:
            continue
        if members.size < len(fractions):
            raise ValueError(
                f"class {c} has {members.size} members, fewer than the {len(fractions)} splits"
            )
        members = rng.permutation(members)
        sizes = [int(math.floor(members.size * f + 1e-9)) for f in fractions]
        for k in range(members.size - sum(sizes)):
            sizes[k % len(sizes)] += 1
        start = 0
        for k, s in enumerate(sizes):
            parts[k].append(members[start:start + s])
            start += s
    return [np.sort(np.concatenate(p)) if p else np.empty(0, np.int64) for p in parts]


def stratified_split(ds: Dataset, spec: SplitSpec = SplitSpec()) -> tuple[Dataset, Dataset, Dataset]:
    idx = stratified_split_indices(ds.y, spec.fractions, spec.seed, ds.class_count)
    for name, part in zip(("train", "val", "test"), idx):
        if part.size == 0:
            raise ValueError(f"{name} split is empty")
    return tuple(ds.subset(i) for i in idx)


def stratified_subsample(ds: Dataset, n: int, seed) -> Dataset:
    """Keep ``n`` rows with class proportions preserved (largest remainder)."""
    if n >= ds.n_samples:
        return ds
    rng = check_rng(seed)
    counts = ds.class_counts()
    quota = counts * n / ds.n_samples
    take = np.floor(quota).astype(int)
    order = np.argsort(-(quota - take), kind="stable")
    for c in order[: n - take.sum()]:
        take[c] += 1
    keep = [rng.permutation(np.flatnonzero(ds.y == c))[:take[c]] for c in range(ds.class_count)]
    return ds.subset(np.sort(np.concatenate(keep)))


def label_entropy(ds_or_labels, n_classes: int | None = None) -> float:
    """Class-label entropy with log base C; 1 for balanced, 0 for a single class."""
    if isinstance(ds_or_labels, Dataset):
        counts = ds_or_labels.class_counts()
    else:
        y = np.asarray(ds_or_labels)
        counts = np.bincount(y, minlength=n_classes or y.max() + 1)
    C = counts.size
    if C < 2:
        raise ValueError("label entropy needs at least two classes")
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum() / math.log(C))


def chi2_scores(ds: Dataset) -> np.ndarray:
    """Chi-square statistic of each binarized (>0) feature against the labels."""
    if np.any(ds.X < 0):
        raise ValueError("chi-square selection needs non-negative features")
    B = (ds.X > 0).astype(np.float64)
    Y = np.eye(ds.class_count)[ds.y]
    on = B.T @ Y                                  # (d, C) counts where feature present
    obs = np.stack([Y.sum(0) - on, on], axis=1)   # (d, 2, C)
    N = ds.n_samples
    rows = obs.sum(axis=2, keepdims=True)
    cols = obs.sum(axis=1, keepdims=True)
    expected = rows * cols / N
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(expected > 0, (obs - expected) ** 2 / expected, 0.0)
    return terms.sum(axis=(1, 2))


def chi2_select(ds: Dataset, k: int) -> list[int]:
    """The ``k`` features with the largest chi-square, descending, ties to lower index."""
    if not 0 <= k <= ds.n_features:
        raise ValueError(f"k must be within [0, {ds.n_features}]")
    scores = chi2_scores(ds)
    order = sorted(range(ds.n_features), key=lambda j: (-scores[j], j))
    return order[:k]


def sample_with_replacement(ds_or_size, probs, n: int, seed) -> Multiset:
    """Draw ``n`` rows i.i.d. with probability proportional to ``probs``."""
    N = ds_or_size.n_samples if isinstance(ds_or_size, Dataset) else int(ds_or_size)
    w = np.asarray(probs, dtype=np.float64)
    if w.shape != (N,):
        raise ValueError(f"expected {N} weights, got shape {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and non-negative")
    total = w.sum()
    if total <= 0:
        raise ValueError("all sampling weights are zero")
    if n < 0:
        raise ValueError("sample size must be non-negative")
    if n == 0:
        return Multiset.empty(N)
    cdf = np.cumsum(w / total)
    u = check_rng(seed).random(n) * cdf[-1]
    draws = np.minimum(np.searchsorted(cdf, u, side="right"), N - 1)
    return Multiset.from_draws(draws, N)
