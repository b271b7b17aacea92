"""End-to-end runs: oracle-guided sampling search, baselines and comparators.

A *run* splits the data, builds the oracle and scores the training rows
once; the search for one model size (a *cell*) then repeatedly proposes
sampling parameters, trains interpretable models on the resulting multiset
and scores them on the validation split. The test split is touched exactly
once per cell, by the best model.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from ._validation import derive_seed
from .dataset import Dataset, Multiset, SplitSpec, load_dataset, sample_with_replacement
from .dataset import stratified_split, stratified_subsample
from .ibmm import IbmmParams, ibmm_draw_scores, ibmm_sample
from .metrics import ScorePair, compaction, delta_f1, f1_macro, read_table_csv, rel_diff_vs_oracle, table_csv
from .models import FAMILIES, UNCONSTRAINED_DEPTH, fit_balanced
from .optimizer import Trial, best_trial, default_search_space, suggest
from .oracle import PrecomputedOracle, build_forest_oracle, load_precomputed, oracle_uncertainties
from .synthetic import generate
from .uncertainty import UncertaintyProfile, flatten, read_profile_csv, unflatten

log = logging.getLogger(__name__)

MAX_SWEEP_SIZE = 15
IBMM_KEYS = ("alpha", "a", "b", "a2", "b2")


@dataclass
class RunConfig:
    """Everything needed to reproduce a run; serialized as ``config.json``."""

    dataset: str | None = None
    dataset_format: str | None = None
    label_column: int | str = -1
    generator: dict | None = None
    max_instances: int | None = None
    model: str = "dt"
    size: int = 5
    sizes: list[int] | None = None
    oracle: str = "rf"
    rf_trees: int = 100
    rf_grid: dict | None = None
    calibrate: bool = True
    cal_fraction: float = 0.2
    metric: str = "margin"
    flatten: bool = True
    bins: int = 20
    iterations: int = 100
    repeats: int = 3
    runs: int = 1
    seed: int = 0
    split: tuple[float, float, float] = (0.6, 0.2, 0.2)
    scale: float = 10000.0
    search_space: dict = field(default_factory=dict)
    fixed_params: dict = field(default_factory=dict)
    batch_size: int = 10
    time_budget: float | None = None
    compaction_statistic: str = "median"

    def __post_init__(self):
        if self.model not in FAMILIES:
            raise ValueError(f"model must be one of {FAMILIES}, got {self.model!r}")
        if int(self.iterations) < 1:
            raise ValueError("iterations must be >= 1")
        if int(self.repeats) < 1:
            raise ValueError("repeats must be >= 1")
        if int(self.runs) < 1:
            raise ValueError("runs must be >= 1")
        if int(self.size) < 1:
            raise ValueError("size must be >= 1")
        if self.sizes is not None and (not self.sizes or min(self.sizes) < 1):
            raise ValueError("sizes must be a non-empty list of values >= 1")
        if not (self.oracle == "rf" or self.oracle.startswith("precomputed:")):
            raise ValueError("oracle must be 'rf' or 'precomputed:<path>'")
        if self.dataset is None and self.generator is None:
            raise ValueError("need a dataset path or a generator spec")
        if self.compaction_statistic not in ("median", "best"):
            raise ValueError("compaction_statistic must be 'median' or 'best'")
        if int(self.batch_size) < 1:
            raise ValueError("batch_size must be >= 1")
        self.split = tuple(float(f) for f in self.split)
        SplitSpec(*self.split)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"] = list(self.split)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**doc)


def load_config_dataset(cfg: RunConfig) -> Dataset:
    if cfg.generator is not None:
        spec = dict(cfg.generator)
        ds = generate(spec.pop("kind"), **spec)
    else:
        kwargs = {"label_column": cfg.label_column} if (cfg.dataset_format or "").lower() == "csv" or str(
            cfg.dataset).lower().endswith(".csv") else {}
        ds = load_dataset(cfg.dataset, cfg.dataset_format, **kwargs)
    if cfg.max_instances is not None:
        ds = stratified_subsample(ds, int(cfg.max_instances), derive_seed(cfg.seed, 0))
    return ds


# -- per-run context ---------------------------------------------------------------

@dataclass
class RunContext:
    """Splits, oracle and training-row uncertainty shared by every cell of a run."""

    seed: int
    train: Dataset
    val: Dataset
    test: Dataset
    oracle: object
    raw_scores: np.ndarray
    profile: UncertaintyProfile | None
    oracle_val_f1: float | None
    oracle_test_f1: float | None
    oracle_info: dict = field(default_factory=dict)

    @property
    def sampling_scores(self):
        return self.profile if self.profile is not None else self.raw_scores


def prepare_run(ds: Dataset, cfg: RunConfig, run_seed: int) -> RunContext:
    train, val, test = stratified_split(ds, SplitSpec(*cfg.split, seed=derive_seed(run_seed, 1)))
    info: dict = {}
    if cfg.oracle == "rf":
        grid = cfg.rf_grid or {"n_estimators": [cfg.rf_trees], "max_depth": [None]}
        oracle, info = build_forest_oracle(train, derive_seed(run_seed, 2), cfg.calibrate,
                                           cfg.cal_fraction, grid)
        oval = f1_macro(oracle.predict(val.X), val.y, ds.class_count)
        otest = f1_macro(oracle.predict(test.X), test.y, ds.class_count)
    else:
        path = cfg.oracle.split(":", 1)[1]
        if not os.path.isfile(path):
            raise FileNotFoundError(f"precomputed scores file not found: {path}")
        oracle = load_precomputed(path, required_rows=train.row_ids)
        oval = otest = None
    raw = oracle_uncertainties(oracle, train, cfg.metric)
    profile = flatten(raw, cfg.bins) if cfg.flatten else None
    return RunContext(run_seed, train, val, test, oracle, raw, profile, oval, otest, info)


# -- one optimization cell -------------------------------------------------------------

def draw_training_sample(ctx: RunContext, params: dict, scale: float, seed: int, return_trace=False):
    """Uniform part (``p_o`` share) plus IBMM part, combined as a multiset sum."""
    N = ctx.train.n_samples
    n_total = int(params["n_samples"])
    n_uniform = int(round(params["p_o"] * n_total))
    n_ibmm = n_total - n_uniform
    uniform = sample_with_replacement(N, np.ones(N), n_uniform, derive_seed(seed, 0))
    psi = IbmmParams(*(params[k] for k in IBMM_KEYS), scale=scale)
    guided, trace = ibmm_sample(n_ibmm, psi, ctx.sampling_scores, derive_seed(seed, 1), return_trace=True)
    ms = uniform + guided
    return (ms, trace) if return_trace else ms


def fit_on_multiset(ctx: RunContext, ms: Multiset, family: str, size: int, seed: int):
    X = ctx.train.X[ms.indices]
    y = ctx.train.y[ms.indices]
    return fit_balanced(family, X, y, size, ctx.train.class_count, seed, sample_weight=ms.counts)


def _score(model, ds: Dataset) -> float:
    return f1_macro(model.predict(ds.X), ds.y, ds.class_count)


@dataclass
class CellResult:
    """Outcome of the search at one model size within one run."""

    size: int
    realized_size: int
    best_params: dict
    best_val_f1: float
    test_f1: float
    baseline_val_f1: float
    baseline_test_f1: float
    baseline_realized_size: int
    oracle_val_f1: float | None
    oracle_test_f1: float | None
    trials: list[Trial]
    trace: dict
    model: dict
    flags: list[str] = field(default_factory=list)

    @property
    def delta_f1(self) -> float:
        return delta_f1(ScorePair((self.baseline_test_f1,), (self.test_f1,))) if self.baseline_test_f1 > 0 else 0.0

    def summary(self) -> dict:
        out = {
            "size": self.size,
            "realized_size": self.realized_size,
            "best_params": self.best_params,
            "best_val_f1": self.best_val_f1,
            "test_f1": self.test_f1,
            "baseline_val_f1": self.baseline_val_f1,
            "baseline_test_f1": self.baseline_test_f1,
            "baseline_realized_size": self.baseline_realized_size,
            "oracle_val_f1": self.oracle_val_f1,
            "oracle_test_f1": self.oracle_test_f1,
            "delta_f1": self.delta_f1,
            "flags": list(self.flags),
            "sampler_trace": self.trace,
            "model": self.model,
        }
        if self.oracle_test_f1:
            out["rel_diff_vs_oracle"] = rel_diff_vs_oracle(self.test_f1, self.oracle_test_f1)
        return out


def fit_baseline(ctx: RunContext, family: str, size: int, seed: int):
    return fit_balanced(family, ctx.train.X, ctx.train.y, size, ctx.train.class_count, seed)


def optimize_cell(ctx: RunContext, cfg: RunConfig, size: int, cell_seed: int) -> CellResult:
    """Search sampling parameters for one model size and evaluate the winner once on test."""
    space = default_search_space().with_overrides(cfg.search_space)
    fixed = dict(cfg.fixed_params)
    unknown = set(fixed) - set(space.names)
    if unknown:
        raise ValueError(f"unknown fixed parameters {sorted(unknown)}")
    space_free = type(space)(tuple(d for d in space.dimensions if d.name not in fixed))
    family = cfg.model
    history: list[Trial] = []
    best = None  # (value, trial number, model, trace)
    flags: list[str] = []
    started = time.monotonic()
    for t in range(int(cfg.iterations)):
        params = suggest(history, space_free, derive_seed(cell_seed, 0)) if space_free.dimensions else {}
        params.update(fixed)
        scores, fitted = [], []
        for r in range(int(cfg.repeats)):
            rs = derive_seed(cell_seed, 1, t, r)
            ms, trace = draw_training_sample(ctx, params, cfg.scale, rs, return_trace=True)
            model = fit_on_multiset(ctx, ms, family, size, derive_seed(rs, 2))
            s = _score(model, ctx.val)
            scores.append(s)
            fitted.append((s, model, trace))
        value = float(np.mean(scores))
        trial = Trial(t, {k: params[k] for k in space.names}, value, "ok",
                      {"repeat_val_f1": scores, "size": size})
        history.append(trial)
        if best is None or value > best[0]:
            s, model, trace = max(fitted, key=lambda f: f[0])
            best = (value, t, model, trace)
        if cfg.time_budget is not None and time.monotonic() - started > cfg.time_budget:
            flags.append("time_budget_exhausted")
            break
    top = best_trial(history)
    assert top.number == best[1]
    _, _, model, trace = best
    test_f1 = _score(model, ctx.test)
    base = fit_baseline(ctx, family, size, derive_seed(ctx.seed, 3, size))
    base_val = _score(base, ctx.val)
    if ctx.oracle_val_f1 is not None and ctx.oracle_val_f1 < base_val:
        flags.append("oracle_worse_than_baseline_on_validation")
        log.warning("oracle validation F1 %.4f below baseline %.4f at size %d",
                    ctx.oracle_val_f1, base_val, size)
    if trace.fallback_clusters:
        flags.append("uniform_fallback_in_sampler")
    return CellResult(
        size=size,
        realized_size=int(model.size_),
        best_params=dict(top.params),
        best_val_f1=top.value,
        test_f1=test_f1,
        baseline_val_f1=base_val,
        baseline_test_f1=_score(base, ctx.test),
        baseline_realized_size=int(base.size_),
        oracle_val_f1=ctx.oracle_val_f1,
        oracle_test_f1=ctx.oracle_test_f1,
        trials=history,
        trace=trace.to_dict(),
        model=model.to_dict(),
        flags=flags,
    )


# -- public entry points --------------------------------------------------------------------

def run_seed_for(cfg: RunConfig, run_index: int) -> int:
    return derive_seed(cfg.seed, 1000 + run_index)


def run_oracle_pipeline(cfg: RunConfig, ds: Dataset | None = None) -> dict:
    """Oracle-guided search at ``cfg.size`` for each of ``cfg.runs`` runs.

    Returns a JSON-ready result with one entry per run plus run-averaged
    scores (averaged before the relative improvement is computed).
    """
    ds = load_config_dataset(cfg) if ds is None else ds
    runs = []
    trials = []
    ctxs = []
    for i in range(int(cfg.runs)):
        rs = run_seed_for(cfg, i)
        ctx = prepare_run(ds, cfg, rs)
        ctxs.append(ctx)
        cell = optimize_cell(ctx, cfg, int(cfg.size), derive_seed(rs, 100 + int(cfg.size)))
        entry = cell.summary()
        entry.update(run=i, run_seed=rs, oracle_info=ctx.oracle_info)
        runs.append(entry)
        trials.extend(_tag_trials(cell.trials, run=i))
    return {
        "kind": "run",
        "seed": cfg.seed,
        "model": cfg.model,
        "size": cfg.size,
        "dataset": _describe(ds),
        "runs": runs,
        "summary": _average_cells(runs),
        "_trials": trials,
        "_contexts": ctxs,
    }


def run_baseline(cfg: RunConfig, ds: Dataset | None = None) -> list[float]:
    """Test F1 of the size-``cfg.size`` model trained on the (balanced) training split, per run."""
    ds = load_config_dataset(cfg) if ds is None else ds
    out = []
    for i in range(int(cfg.runs)):
        rs = run_seed_for(cfg, i)
        train, val, test = stratified_split(ds, SplitSpec(*cfg.split, seed=derive_seed(rs, 1)))
        model = fit_balanced(cfg.model, train.X, train.y, cfg.size, ds.class_count,
                             derive_seed(rs, 3, cfg.size))
        out.append(f1_macro(model.predict(test.X), test.y, ds.class_count))
    return out


@dataclass
class SusResult:
    """Supervised uncertainty sampling outcome for one run and size."""

    size: int
    batch_size: int
    rounds: list[dict]
    best_round: int
    best_val_f1: float
    test_f1: float
    model: dict

    def summary(self) -> dict:
        return asdict(self)


def supervised_uncertainty_sampling(ctx: RunContext, family: str, size: int, batch_size: int,
                                    seed: int, keep_indices=False) -> SusResult:
    """Grow the training set by the ``batch_size`` most uncertain remaining rows per round.

    Every round refits and scores on validation; the best-validation model
    (earliest on ties) is scored once on test.
    """
    N = ctx.train.n_samples
    order = np.argsort(-ctx.raw_scores, kind="stable")
    n_rounds = math.ceil(N / batch_size)
    rounds = []
    best = None
    for k in range(n_rounds):
        current = np.sort(order[: min(N, (k + 1) * batch_size)])
        model = fit_balanced(family, ctx.train.X[current], ctx.train.y[current], size,
                             ctx.train.class_count, derive_seed(seed, k))
        s = _score(model, ctx.val)
        rec = {"round": k, "n_points": int(current.size), "val_f1": s}
        if keep_indices:
            rec["indices"] = current.tolist()
        rounds.append(rec)
        if best is None or s > best[0]:
            best = (s, k, model)
    s, k, model = best
    return SusResult(size, batch_size, rounds, k, s, _score(model, ctx.test), model.to_dict())


def run_supervised_uncertainty_sampling(cfg: RunConfig, batch_size: int | None = None,
                                        ds: Dataset | None = None) -> dict:
    ds = load_config_dataset(cfg) if ds is None else ds
    b = int(batch_size or cfg.batch_size)
    runs = []
    for i in range(int(cfg.runs)):
        rs = run_seed_for(cfg, i)
        ctx = prepare_run(ds, cfg, rs)
        res = supervised_uncertainty_sampling(ctx, cfg.model, int(cfg.size), b, derive_seed(rs, 3, cfg.size))
        base = fit_baseline(ctx, cfg.model, int(cfg.size), derive_seed(rs, 3, cfg.size))
        entry = res.summary()
        entry.update(run=i, baseline_test_f1=_score(base, ctx.test), oracle_test_f1=ctx.oracle_test_f1)
        runs.append(entry)
    return {"kind": "sus", "seed": cfg.seed, "model": cfg.model, "size": cfg.size, "runs": runs}


def unconstrained_depth(train: Dataset) -> int:
    """Realized depth of a balanced tree grown with no effective depth limit."""
    model = fit_balanced("dt", train.X, train.y, UNCONSTRAINED_DEPTH, train.class_count)
    return int(model.size_)


def sweep_sizes(cfg: RunConfig, ctx: RunContext) -> list[int]:
    if cfg.sizes:
        return sorted(set(int(s) for s in cfg.sizes))
    if cfg.model == "dt":
        top = min(unconstrained_depth(ctx.train), MAX_SWEEP_SIZE)
    else:
        top = min(ctx.train.n_features, MAX_SWEEP_SIZE)
    return list(range(1, max(top, 1) + 1))


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("ORACLE_DISTILL_THREADS", "1")))
    except ValueError:
        return 1


def size_sweep(cfg: RunConfig, ds: Dataset | None = None, with_sus: bool = False) -> dict:
    """Baseline and oracle-guided search at every size, for every run.

    Tree results are keyed by the realized depth of the selected model; when
    several depth caps give the same realized depth, the one with the best
    validation score is kept and the collapse is recorded.
    """
    ds = load_config_dataset(cfg) if ds is None else ds
    ctxs = [prepare_run(ds, cfg, run_seed_for(cfg, i)) for i in range(int(cfg.runs))]
    sizes = sweep_sizes(cfg, ctxs[0])
    jobs = [(i, s) for i in range(len(ctxs)) for s in sizes]

    def work(i, s):
        ctx = ctxs[i]
        return optimize_cell(ctx, cfg, s, derive_seed(ctx.seed, 100 + s))

    n_jobs = min(_threads(), len(jobs))
    if n_jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(n_jobs) as pool:
            cells = list(pool.map(lambda job: work(*job), jobs))
    else:
        cells = [work(i, s) for i, s in jobs]

    per_run: list[dict] = [{} for _ in ctxs]
    collapsed = []
    trials = []
    for (i, s), cell in zip(jobs, cells):
        trials.extend(_tag_trials(cell.trials, run=i, size=s))
        key = cell.realized_size if cfg.model == "dt" else s
        entry = cell.summary()
        entry.update(run=i, max_size=s)
        prev = per_run[i].get(key)
        if prev is not None:
            collapsed.append({"run": i, "key": key, "max_sizes": [prev["max_size"], s]})
            if entry["best_val_f1"] <= prev["best_val_f1"]:
                continue
        per_run[i][key] = entry
    # compare against a baseline capped at the key size
    baselines: dict = {}
    for i, ctx in enumerate(ctxs):
        for key, entry in per_run[i].items():
            if cfg.model == "dt" and key != entry["max_size"]:
                base = fit_baseline(ctx, "dt", max(key, 1), derive_seed(ctx.seed, 3, key))
                entry["baseline_test_f1"] = _score(base, ctx.test)
                entry["baseline_val_f1"] = _score(base, ctx.val)
                entry["baseline_realized_size"] = int(base.size_)
                b = entry["baseline_test_f1"]
                entry["delta_f1"] = delta_f1(ScorePair((b,), (entry["test_f1"],))) if b > 0 else 0.0
            baselines[(i, key)] = entry["baseline_test_f1"]

    sus = None
    if with_sus:
        sus = []
        for i, ctx in enumerate(ctxs):
            for s in sizes:
                r = supervised_uncertainty_sampling(ctx, cfg.model, s, cfg.batch_size, derive_seed(ctx.seed, 3, s))
                sus.append({"run": i, "size": s, "test_f1": r.test_f1, "best_round": r.best_round,
                            "best_val_f1": r.best_val_f1, "baseline_test_f1": baselines.get((i, s))})

    keys = sorted({k for pr in per_run for k in pr})
    norm = min(max(sizes), MAX_SWEEP_SIZE) if cfg.model == "dt" else min(ds.n_features, MAX_SWEEP_SIZE)
    rows = []
    for k in keys:
        cells_k = [pr[k] for pr in per_run if k in pr]
        row = {"size": k, "normalized_size": k / norm}
        row.update(_average_cells(cells_k))
        rows.append(row)
    result = {
        "kind": "sweep",
        "seed": cfg.seed,
        "model": cfg.model,
        "sizes": sizes,
        "dataset": _describe(ds),
        "rows": rows,
        "cells": [dict(pr[k], key=k) for pr in per_run for k in sorted(pr)],
        "collapsed_sizes": collapsed,
        "oracle": [{"run": i, "val_f1": c.oracle_val_f1, "test_f1": c.oracle_test_f1, **c.oracle_info}
                   for i, c in enumerate(ctxs)],
        "_trials": trials,
    }
    if rows:
        result["compaction"] = _compaction_summary(per_run, cfg.model, cfg.compaction_statistic)
    if sus is not None:
        result["sus"] = sus
        result["comparison"] = compare_methods(rows, sus)
    result["_contexts"] = ctxs
    return result


def _average_cells(cells: list[dict]) -> dict:
    base = [c["baseline_test_f1"] for c in cells]
    new = [c["test_f1"] for c in cells]
    out = {
        "n_runs": len(cells),
        "baseline_f1": float(np.mean(base)),
        "improved_f1": float(np.mean(new)),
        "delta_f1": delta_f1(ScorePair(base, new)) if np.mean(base) > 0 else 0.0,
    }
    orc = [c["oracle_test_f1"] for c in cells if c.get("oracle_test_f1") is not None]
    if orc:
        out["oracle_f1"] = float(np.mean(orc))
        out["rel_diff_vs_oracle"] = rel_diff_vs_oracle(out["improved_f1"], out["oracle_f1"])
    return out


def _compaction_summary(per_run: list[dict], family: str, statistic: str = "median") -> dict:
    """Compaction curve over the sizes every run reached.

    Improved scores are summarized per size across runs by ``statistic``
    (``median`` or ``best``); baseline scores by the median.
    """
    keys = sorted(set.intersection(*(set(pr) for pr in per_run)))
    if not keys:
        return {"sizes": [], "minimal_sizes": [], "above_diagonal": [], "ci": 0.0, "statistic": statistic}
    pick = np.median if statistic == "median" else np.max
    base = {k: float(np.median([pr[k]["baseline_test_f1"] for pr in per_run])) for k in keys}
    new = {k: float(pick([pr[k]["test_f1"] for pr in per_run])) for k in keys}
    # the index is defined on a 1..K grid; relabel sizes by position
    curve, ci = compaction({i + 1: base[k] for i, k in enumerate(keys)},
                           {i + 1: new[k] for i, k in enumerate(keys)}, family)
    return {"sizes": keys, "minimal_sizes": [keys[y - 1] for y in curve.minimal_sizes],
            "above_diagonal": [keys[x - 1] for x in curve.above_diagonal], "ci": ci, "statistic": statistic}


def compare_methods(rows: list[dict], sus: list[dict]) -> dict:
    """SDI and pct_better of the oracle-guided search against supervised uncertainty sampling."""
    from .metrics import pct_better, sdi

    by_size: dict = {}
    for r in sus:
        if r["baseline_test_f1"] is None:
            continue
        by_size.setdefault(r["size"], []).append(r)
    out_rows = []
    for row in rows:
        alt = by_size.get(row["size"])
        if not alt:
            continue
        d_alt = delta_f1(ScorePair([a["baseline_test_f1"] for a in alt], [a["test_f1"] for a in alt]))
        out_rows.append({"size": row["size"], "delta_ora": row["delta_f1"], "delta_alt": d_alt,
                         "sdi": sdi(row["delta_f1"], d_alt)})
    return summarize_comparison(out_rows)


def summarize_comparison(rows: list[dict]) -> dict:
    from .metrics import pct_better

    if not rows:
        return {"rows": [], "mean_sdi": 0.0, "pct_better": 0.0}
    return {
        "rows": rows,
        "mean_sdi": float(np.mean([r["sdi"] for r in rows])),
        "pct_better": pct_better([r["delta_ora"] for r in rows], [r["delta_alt"] for r in rows]),
    }


def _tag_trials(trials, **tags):
    out = []
    for t in trials:
        d = t.to_dict()
        d["info"] = dict(d["info"], **tags)
        out.append(d)
    return out


def _describe(ds: Dataset) -> dict:
    from .dataset import label_entropy

    return {"n_samples": ds.n_samples, "n_features": ds.n_features, "n_classes": ds.class_count,
            "label_entropy": label_entropy(ds)}


# -- report curves ---------------------------------------------------------------------------

def silverman_bandwidth(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    sd = x.std(ddof=1) if n > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25]) if n else (0.0, 0.0)
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    if spread <= 0:
        spread = 1e-3
    return float(0.9 * spread * n ** (-0.2))


def reflected_kde(samples, grid, bandwidth=None) -> np.ndarray:
    """Gaussian KDE on [0, 1] with mirror images across both boundaries."""
    x = np.asarray(samples, dtype=np.float64)
    g = np.asarray(grid, dtype=np.float64)
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    dens = np.zeros_like(g)
    for chunk in np.array_split(x, max(1, x.size // 4096 + 1)):
        for shifted in (chunk, -chunk, 2.0 - chunk):
            z = (g[:, None] - shifted[None, :]) / h
            dens += np.exp(-0.5 * z * z).sum(axis=1)
    return dens / (x.size * h * math.sqrt(2 * math.pi))


def _ibmm_pool(entries, n_points, seed, profile=None):
    deltas = np.array([max(0.0, e["delta"]) for e in entries])
    if deltas.sum() <= 0:
        return None, None
    alloc = np.floor(n_points * deltas / deltas.sum()).astype(int)
    samples = []
    for k, (e, n_k) in enumerate(zip(entries, alloc)):
        if n_k == 0:
            continue
        p = e["params"]
        psi = IbmmParams(*(p[key] for key in IBMM_KEYS), scale=e.get("scale", 10000.0))
        u = ibmm_draw_scores(int(n_k), psi, derive_seed(seed, k))
        prof = e.get("profile", profile)
        if prof is not None:
            u = unflatten(prof, np.clip(u, 0.0, 1.0))
        samples.append(np.atleast_1d(u))
    return np.concatenate(samples), alloc


def aggregate_ibmm_curve(entries, grid, n_points=10000, seed=0, profile=None):
    """Improvement-weighted KDE of the learned mixtures.

    ``entries`` hold ``{"delta": improvement, "params": best sampling params}``
    per size; size ``k`` contributes a share of ``n_points`` proportional to
    its improvement. Samples are mapped to the raw score scale through
    ``profile`` when given. Returns ``None`` if every improvement is zero.
    """
    pool, _ = _ibmm_pool(entries, n_points, seed, profile)
    if pool is None:
        return None
    return reflected_kde(pool, grid)


def density_ratio_curve(p_a, p_b, floor=1e-6) -> np.ndarray:
    """``p_a / p_b`` on a grid, rescaled to sum to one."""
    a = np.maximum(np.asarray(p_a, dtype=np.float64), floor)
    b = np.asarray(p_b, dtype=np.float64)
    if not np.all(np.isfinite(b)) or np.all(b <= floor):
        raise ValueError("degenerate reference density")
    ratio = a / np.maximum(b, floor)
    return ratio / ratio.sum()


def adjusted_distribution(entries, raw_scores, grid, n_points=10000, seed=0, profile=None):
    """Mixture density divided by the oracle's own score density, normalized on ``grid``."""
    pool, alloc = _ibmm_pool(entries, n_points, seed, profile)
    if pool is None:
        return None
    rng = np.random.default_rng(derive_seed(seed, 99))
    raw = np.asarray(raw_scores, dtype=np.float64)
    ref = raw[rng.integers(0, raw.size, int(alloc.sum()))]
    return density_ratio_curve(reflected_kde(pool, grid), reflected_kde(ref, grid))


# -- estimator facade -----------------------------------------------------------------------

class OracleGuidedClassifier(ClassifierMixin, BaseEstimator):
    """Interpretable classifier trained on an oracle-guided re-sample of its data.

    ``fit(X, y)`` holds out a stratified validation slice (or uses
    ``X_val``/``y_val``), builds a calibrated forest oracle unless
    ``uncertainty`` scores are given, and searches the sampling parameters
    for ``n_iter`` trials. The winning interpretable model answers
    ``predict`` / ``predict_proba``.
    """

    def __init__(self, model="dt", size=5, n_iter=100, n_repeats=3, metric="margin",
                 flatten=True, bins=20, rf_trees=100, calibrate=True, search_space=None,
                 fixed_params=None, scale=10000.0, val_fraction=0.25, random_state=0):
        self.model = model
        self.size = size
        self.n_iter = n_iter
        self.n_repeats = n_repeats
        self.metric = metric
        self.flatten = flatten
        self.bins = bins
        self.rf_trees = rf_trees
        self.calibrate = calibrate
        self.search_space = search_space
        self.fixed_params = fixed_params
        self.scale = scale
        self.val_fraction = val_fraction
        self.random_state = random_state

    def fit(self, X, y, X_val=None, y_val=None, uncertainty=None):
        from .dataset import stratified_split_indices

        seed = int(self.random_state or 0)
        y = np.asarray(y)
        C = int(max(y.max(), -1 if y_val is None else np.max(y_val)) + 1)
        C = max(C, 2)
        full = Dataset(X, y, C)
        if X_val is None:
            tr, va = stratified_split_indices(full.y, [1 - self.val_fraction, self.val_fraction],
                                              derive_seed(seed, 1), C)
            train, val = full.subset(tr), full.subset(va)
            if uncertainty is not None:
                uncertainty = np.asarray(uncertainty)[tr]
        else:
            train, val = full, Dataset(X_val, y_val, C)
        if uncertainty is None:
            oracle, info = build_forest_oracle(train, derive_seed(seed, 2), self.calibrate, 0.2,
                                               {"n_estimators": [self.rf_trees], "max_depth": [None]})
            raw = oracle_uncertainties(oracle, train, self.metric)
            oval = f1_macro(oracle.predict(val.X), val.y, C)
        else:
            oracle, info, oval = None, {}, None
            raw = np.asarray(uncertainty, dtype=np.float64)
        profile = flatten(raw, self.bins) if self.flatten else None
        ctx = RunContext(seed, train, val, val, oracle, raw, profile, oval, None, info)
        cfg = RunConfig(generator={"kind": "xor"}, model=self.model, size=int(self.size),
                        iterations=int(self.n_iter), repeats=int(self.n_repeats), metric=self.metric,
                        flatten=self.flatten, bins=self.bins, scale=self.scale,
                        search_space=dict(self.search_space or {}),
                        fixed_params=dict(self.fixed_params or {}))
        cell = optimize_cell(ctx, cfg, int(self.size), derive_seed(seed, 100 + int(self.size)))
        from .models import model_from_dict

        self.oracle_ = oracle
        self.profile_ = profile
        self.trials_ = cell.trials
        self.best_params_ = cell.best_params
        self.best_score_ = cell.best_val_f1
        self.best_model_ = model_from_dict(cell.model)
        self.classes_ = np.arange(C)
        self.n_features_in_ = full.n_features
        return self

    def predict_proba(self, X):
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "best_model_")
        return self.best_model_.predict_proba(X)

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)


# -- run directories -------------------------------------------------------------------------

def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_run_dir(result: dict, cfg: RunConfig, out) -> Path:
    """Write ``config.json``, ``trials.jsonl``, ``result.json``, tables and score profiles.

    Nothing time-dependent goes into ``result.json``; wall-clock figures
    belong in ``timing.json``.
    """
    out = Path(out)
    (out / "tables").mkdir(parents=True, exist_ok=True)
    (out / "curves").mkdir(exist_ok=True)
    (out / "profiles").mkdir(exist_ok=True)
    (out / "config.json").write_text(_dump_json(cfg.to_dict()))
    trials = result.get("_trials", [])
    with open(out / "trials.jsonl", "w") as fh:
        for t in trials:
            fh.write(json.dumps(t, sort_keys=True) + "\n")
    for i, ctx in enumerate(result.get("_contexts", [])):
        text = ctx.profile.to_csv(ctx.train.row_ids) if ctx.profile is not None else \
            "row_index,raw,flattened\n" + "".join(f"{int(r)},{float(u)!r},{float(u)!r}\n"
                                                  for r, u in zip(ctx.train.row_ids, ctx.raw_scores))
        (out / "profiles" / f"run_{i}.csv").write_text(text)
    public = {k: v for k, v in result.items() if not k.startswith("_")}
    (out / "result.json").write_text(_dump_json(public))
    for name, text in result_tables(public).items():
        (out / "tables" / name).write_text(text)
    return out


CELL_COLUMNS = ["run", "key", "max_size", "realized_size", "baseline_test_f1", "test_f1", "oracle_test_f1",
                "best_val_f1", "baseline_val_f1", "delta_f1"]


def result_tables(result: dict) -> dict[str, str]:
    tables = {}
    if result["kind"] == "run":
        tables["runs.csv"] = table_csv(result["runs"], ["run", "size", "realized_size", "baseline_test_f1",
                                                        "test_f1", "oracle_test_f1", "delta_f1"])
    elif result["kind"] == "sweep":
        tables["delta_f1.csv"] = table_csv(result["rows"], ["size", "normalized_size", "baseline_f1",
                                                            "improved_f1", "oracle_f1", "delta_f1",
                                                            "rel_diff_vs_oracle", "n_runs"])
        tables["cells.csv"] = table_csv(result["cells"], CELL_COLUMNS)
        if "compaction" in result:
            c = result["compaction"]
            rows = [{"size": x, "minimal_size": y} for x, y in zip(c["sizes"], c["minimal_sizes"])]
            tables["compaction.csv"] = table_csv(rows, ["size", "minimal_size"])
            tables["compaction_index.csv"] = table_csv([{"ci": c["ci"]}], ["ci"])
        if "comparison" in result:
            tables["sdi.csv"] = table_csv(result["comparison"]["rows"], ["size", "delta_ora", "delta_alt", "sdi"])
            tables["pct_better.csv"] = table_csv(
                [{"mean_sdi": result["comparison"]["mean_sdi"], "pct_better": result["comparison"]["pct_better"]}],
                ["mean_sdi", "pct_better"])
        if "sus" in result:
            tables["sus.csv"] = table_csv(result["sus"], ["run", "size", "best_round", "best_val_f1", "test_f1",
                                                          "baseline_test_f1"])
    elif result["kind"] == "sus":
        tables["sus.csv"] = table_csv(result["runs"], ["run", "size", "batch_size", "best_round", "best_val_f1",
                                                       "test_f1", "baseline_test_f1"])
    return tables


def read_alt_deltas(path) -> dict[int, float]:
    """``size,delta_f1`` rows of an externally computed comparator."""
    rows = read_table_csv(Path(path).read_text())
    if not rows or "size" not in rows[0] or "delta_f1" not in rows[0]:
        raise ValueError(f"{path}: expected columns size,delta_f1")
    return {int(r["size"]): float(r["delta_f1"]) for r in rows}


def compare_with_alt(rows: list[dict], alt: dict[int, float]) -> dict:
    from .metrics import sdi

    out = [{"size": r["size"], "delta_ora": r["delta_f1"], "delta_alt": alt[r["size"]],
            "sdi": sdi(r["delta_f1"], alt[r["size"]])} for r in rows if r["size"] in alt]
    return summarize_comparison(out)


def best_params_by_cell(trials: list[dict]) -> dict:
    """Best trial parameters per ``(run, size)`` recomputed from a trial log."""
    groups: dict = {}
    for t in trials:
        key = (t["info"].get("run", 0), t["info"].get("size"))
        groups.setdefault(key, []).append(Trial.from_dict(t))
    return {k: best_trial(v).params for k, v in groups.items()}


def report_curves(run_dir, grid_points=101, n_points=10000) -> dict[str, str]:
    """Aggregated and adjusted mixture curves of a finished sweep, as CSV text.

    Everything is recomputed from ``trials.jsonl``, ``result.json`` and the
    stored score profiles, so repeated reports are identical.
    """
    run_dir = Path(run_dir)
    result = json.loads((run_dir / "result.json").read_text())
    cfg = RunConfig.from_dict(json.loads((run_dir / "config.json").read_text()))
    if result["kind"] != "sweep":
        raise ValueError(f"{run_dir}: report needs a sweep run directory")
    with open(run_dir / "trials.jsonl") as fh:
        trials = [json.loads(line) for line in fh if line.strip()]
    params = best_params_by_cell(trials)
    grid = np.linspace(0.0, 1.0, grid_points)
    curves = {}
    agg_rows, adj_rows = [], []
    n_runs = int(cfg.runs)
    for i in range(n_runs):
        _, raw, flat = read_profile_csv((run_dir / "profiles" / f"run_{i}.csv").read_text())
        profile = flatten(raw, cfg.bins) if cfg.flatten else None
        entries = []
        for cell in result["cells"]:
            if cell["run"] != i:
                continue
            p = params[(i, cell["max_size"])]
            entries.append({"delta": cell["delta_f1"], "params": p, "scale": cfg.scale})
        seed = derive_seed(cfg.seed, 5000 + i)
        agg = aggregate_ibmm_curve(entries, grid, n_points, seed, profile)
        adj = adjusted_distribution(entries, raw, grid, n_points, seed, profile)
        if agg is None:
            continue
        agg_rows.append(agg)
        adj_rows.append(adj)
    if agg_rows:
        agg = np.mean(agg_rows, axis=0)
        adj = np.mean(adj_rows, axis=0)
        curves["aggregated.csv"] = table_csv([{"u": float(u), "density": float(d)} for u, d in zip(grid, agg)],
                                             ["u", "density"])
        curves["adjusted.csv"] = table_csv([{"u": float(u), "weight": float(d)} for u, d in zip(grid, adj)],
                                           ["u", "weight"])
    if "compaction" in result:
        c = result["compaction"]
        curves["compaction.csv"] = table_csv([{"size": x, "minimal_size": y}
                                              for x, y in zip(c["sizes"], c["minimal_sizes"])],
                                             ["size", "minimal_size"])
    return curves
