import json

import numpy as np
import pytest
from sklearn.base import clone

from oracle_distill import pipeline
from oracle_distill._validation import derive_seed
from oracle_distill.dataset import SplitSpec, stratified_split
from oracle_distill.models import fit_balanced
from oracle_distill.pipeline import (
    OracleGuidedClassifier, RunConfig, adjusted_distribution, aggregate_ibmm_curve, density_ratio_curve,
    optimize_cell, prepare_run, reflected_kde, run_baseline, run_oracle_pipeline, run_seed_for,
    silverman_bandwidth, size_sweep, supervised_uncertainty_sampling, write_run_dir,
)
from oracle_distill.synthetic import make_blobs, make_moons

BLOBS = {"kind": "blobs", "n_samples": 300, "n_classes": 2, "n_features": 3, "cluster_std": 3.0, "seed": 1}


def small_cfg(**kw):
    base = dict(generator=BLOBS, iterations=3, repeats=2, rf_trees=10, size=2,
                search_space={"n_samples": [400, 800]})
    base.update(kw)
    return RunConfig(**base)


@pytest.mark.parametrize("bad", [{"iterations": 0}, {"repeats": 0}, {"size": 0}, {"model": "svm"},
                                 {"oracle": "gbm"}, {"runs": 0}, {"sizes": []}])
def test_config_invariants(bad):
    with pytest.raises(ValueError):
        small_cfg(**bad)


def test_config_round_trip():
    cfg = small_cfg(fixed_params={"p_o": 1.0})
    assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ValueError, match="unknown config keys"):
        RunConfig.from_dict({**cfg.to_dict(), "colour": 1})


def test_run_result_fields():
    res = run_oracle_pipeline(small_cfg())
    run = res["runs"][0]
    for key in ("best_params", "best_val_f1", "test_f1", "baseline_test_f1", "oracle_test_f1",
                "sampler_trace", "delta_f1"):
        assert key in run
    assert set(run["best_params"]) == {"alpha", "a", "b", "a2", "b2", "n_samples", "p_o"}
    assert len(res["_trials"]) == 3
    assert run["delta_f1"] >= 0


@pytest.mark.parametrize("T", [1, 4])
def test_single_test_evaluation_per_run(monkeypatch, T):
    seen = {}
    real_prepare, real_score = pipeline.prepare_run, pipeline._score

    def prepare(ds, cfg, seed):
        ctx = real_prepare(ds, cfg, seed)
        seen["test"] = ctx.test
        seen["calls"] = []
        return ctx

    def score(model, ds):
        if ds is seen.get("test"):
            seen["calls"].append(model)
        return real_score(model, ds)

    monkeypatch.setattr(pipeline, "prepare_run", prepare)
    monkeypatch.setattr(pipeline, "_score", score)
    run_oracle_pipeline(small_cfg(iterations=T))
    # one evaluation of the selected model plus one of the baseline
    assert len(seen["calls"]) == 2


def test_val_and_test_never_resampled(monkeypatch):
    shapes = []
    real = pipeline.fit_on_multiset

    def spy(ctx, ms, family, size, seed):
        shapes.append((ms.parent_size, ctx.train.n_samples))
        return real(ctx, ms, family, size, seed)

    monkeypatch.setattr(pipeline, "fit_on_multiset", spy)
    run_oracle_pipeline(small_cfg())
    assert shapes and all(p == n for p, n in shapes)


def test_degenerate_uniform_share_tracks_baseline():
    diffs = []
    for seed in range(5):
        res = run_oracle_pipeline(small_cfg(seed=seed, iterations=1, fixed_params={"p_o": 1.0}))
        r = res["runs"][0]
        diffs.append(r["test_f1"] - r["baseline_test_f1"])
    assert abs(np.mean(diffs)) <= 0.03


def test_baseline_perfect_separable():
    gen = {"kind": "blobs", "n_samples": 200, "n_classes": 2, "cluster_std": 0.2, "center_box": [-5, 5], "seed": 0}
    assert run_baseline(small_cfg(generator=gen, size=3)) == [1.0]


def test_baseline_matches_direct_model_call():
    cfg = small_cfg(seed=3)
    ds = pipeline.load_config_dataset(cfg)
    rs = run_seed_for(cfg, 0)
    train, _, test = stratified_split(ds, SplitSpec(seed=derive_seed(rs, 1)))
    m = fit_balanced("dt", train.X, train.y, 2, 2, derive_seed(rs, 3, 2))
    from oracle_distill.metrics import f1_macro

    assert run_baseline(cfg) == [f1_macro(m.predict(test.X), test.y, 2)]
    assert run_baseline(cfg) == run_baseline(cfg)


def _ctx(n=None):
    cfg = small_cfg()
    ds = pipeline.load_config_dataset(cfg)
    if n is not None:
        from oracle_distill.dataset import stratified_subsample

        ds = stratified_subsample(ds, n, 0)
    return cfg, prepare_run(ds, cfg, 0)


def test_sus_full_batch_is_baseline():
    cfg, ctx = _ctx()
    N = ctx.train.n_samples
    res = supervised_uncertainty_sampling(ctx, "dt", 3, N, seed=5)
    assert len(res.rounds) == 1
    base = fit_balanced("dt", ctx.train.X, ctx.train.y, 3, 2, derive_seed(5, 0))
    assert res.model == base.to_dict()


def test_sus_round_arithmetic_and_growth():
    cfg, ctx = _ctx()
    sub = ctx.train.subset(np.arange(95))
    ctx95 = pipeline.RunContext(0, sub, ctx.val, ctx.test, None, ctx.raw_scores[:95], None, None, None)
    res = supervised_uncertainty_sampling(ctx95, "dt", 2, 10, seed=0, keep_indices=True)
    assert len(res.rounds) == 10
    sizes = [r["n_points"] for r in res.rounds]
    assert sizes[-1] - sizes[-2] == 5 and sizes[-1] == 95
    for a, b in zip(res.rounds, res.rounds[1:]):
        sa, sb = set(a["indices"]), set(b["indices"])
        assert sa < sb
    # the first round holds the most uncertain rows
    first = res.rounds[0]["indices"]
    assert set(first) == set(np.argsort(-ctx95.raw_scores, kind="stable")[:10].tolist())


def test_sweep_rows_and_normalized_size():
    cfg = small_cfg(model="lpm", sizes=[1, 2, 3])
    res = size_sweep(cfg)
    assert [r["size"] for r in res["rows"]] == [1, 2, 3]
    assert all(r["delta_f1"] >= 0 for r in res["rows"])
    assert [r["normalized_size"] for r in res["rows"]] == [1 / 3, 2 / 3, 1.0]
    assert 0.0 <= res["compaction"]["ci"] <= 1.0


def test_sweep_default_range_for_lpm_uses_dimension():
    cfg = small_cfg(model="lpm", iterations=1)
    res = size_sweep(cfg)
    assert res["sizes"] == [1, 2, 3]


def test_oracle_worse_than_baseline_is_flagged():
    cfg, ctx = _ctx()
    ctx.oracle_val_f1 = 0.0
    cell = optimize_cell(ctx, cfg, 2, 0)
    assert "oracle_worse_than_baseline_on_validation" in cell.flags


def test_time_budget_stops_search():
    cfg, ctx = _ctx()
    cfg.time_budget = 0.0
    cfg.iterations = 50
    cell = optimize_cell(ctx, cfg, 2, 0)
    assert len(cell.trials) == 1 and "time_budget_exhausted" in cell.flags


def test_fixed_params_must_exist():
    cfg, ctx = _ctx()
    cfg.fixed_params = {"gamma": 1.0}
    with pytest.raises(ValueError, match="unknown fixed"):
        optimize_cell(ctx, cfg, 2, 0)


def test_precomputed_oracle_run(tmp_path):
    cfg = small_cfg()
    ds = pipeline.load_config_dataset(cfg)
    path = tmp_path / "scores.csv"
    path.write_text("".join(f"{i},{(i % 7) / 7}\n" for i in range(ds.n_samples)))
    res = run_oracle_pipeline(small_cfg(oracle=f"precomputed:{path}"))
    assert res["runs"][0]["oracle_test_f1"] is None
    with pytest.raises(FileNotFoundError):
        run_oracle_pipeline(small_cfg(oracle=f"precomputed:{tmp_path / 'nope.csv'}"))


def test_result_json_byte_identical(tmp_path):
    cfg = small_cfg(model="dt", sizes=[1, 2])
    for name in ("a", "b"):
        write_run_dir(size_sweep(cfg), cfg, tmp_path / name)
    for f in ("result.json", "trials.jsonl", "tables/delta_f1.csv", "profiles/run_0.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


# -- report curves -----------------------------------------------------------------------------

def test_silverman_bandwidth_formula(rng):
    x = rng.normal(size=500)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    want = 0.9 * min(x.std(ddof=1), iqr / 1.34) * 500 ** -0.2
    assert silverman_bandwidth(x) == pytest.approx(want)


def test_reflected_kde_integrates_to_one(rng):
    grid = np.linspace(0, 1, 2001)
    for x in (rng.random(2000), rng.beta(0.5, 3, 2000)):
        assert np.trapezoid(reflected_kde(x, grid), grid) == pytest.approx(1.0, abs=0.02)


def _uniform_mixture(monkeypatch):
    monkeypatch.setattr(pipeline, "ibmm_draw_scores",
                        lambda n, psi, seed: np.random.default_rng(seed).random(n))


PSI = {"alpha": 1.0, "a": 1.0, "b": 1.0, "a2": 1.0, "b2": 1.0}


def test_aggregate_single_flat_component(monkeypatch):
    _uniform_mixture(monkeypatch)
    grid = np.linspace(0, 1, 101)
    curve = aggregate_ibmm_curve([{"delta": 3.0, "params": PSI}], grid, 10_000, seed=0)
    inner = curve[(grid >= 0.1) & (grid <= 0.9)]
    assert np.all(np.abs(inner - 1.0) <= 0.1)
    assert np.trapezoid(curve, grid) == pytest.approx(1.0, abs=0.02)


def test_aggregate_zero_weight_size_is_ignored():
    grid = np.linspace(0, 1, 51)
    other = {"alpha": 5.0, "a": 9.0, "b": 0.2, "a2": 0.2, "b2": 9.0}
    one = aggregate_ibmm_curve([{"delta": 1.0, "params": PSI}], grid, 5000, seed=4)
    two = aggregate_ibmm_curve([{"delta": 1.0, "params": PSI}, {"delta": 0.0, "params": other}],
                               grid, 5000, seed=4)
    np.testing.assert_array_equal(one, two)
    assert aggregate_ibmm_curve([{"delta": 0.0, "params": PSI}], grid) is None


def test_density_ratio_cases():
    grid = np.linspace(0, 1, 41)
    p = 1 + grid
    np.testing.assert_allclose(density_ratio_curve(p, p), 1 / grid.size)
    high = np.exp(5 * grid)
    curve = density_ratio_curve(high, np.ones_like(grid))
    assert np.all(np.diff(curve) > 0)
    assert curve.sum() == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(ValueError):
        density_ratio_curve(p, np.zeros_like(grid))


def test_adjusted_distribution_sums_to_one(rng):
    grid = np.linspace(0, 1, 101)
    curve = adjusted_distribution([{"delta": 2.0, "params": PSI}], rng.random(500), grid, 4000, seed=1)
    assert curve.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(curve > 0)


# -- estimator facade --------------------------------------------------------------------------

def test_estimator_fit_predict_clone():
    ds = make_moons(300, noise=0.25, seed=0)
    est = OracleGuidedClassifier(size=2, n_iter=3, n_repeats=1, rf_trees=10,
                                 search_space={"n_samples": [400, 600]})
    est.fit(ds.X, ds.y)
    assert est.predict(ds.X).shape == (300,)
    P = est.predict_proba(ds.X[:5])
    np.testing.assert_allclose(P.sum(axis=1), 1.0)
    assert 0.0 <= est.score(ds.X, ds.y) <= 1.0
    assert len(est.trials_) == 3
    c = clone(est)
    assert c.get_params() == est.get_params() and not hasattr(c, "best_model_")


def test_estimator_with_external_scores_and_validation():
    ds = make_blobs(240, n_classes=2, n_features=2, seed=3)
    u = np.linspace(0, 1, 160)
    est = OracleGuidedClassifier(size=1, n_iter=2, n_repeats=1, search_space={"n_samples": [400, 500]})
    est.fit(ds.X[:160], ds.y[:160], X_val=ds.X[160:], y_val=ds.y[160:], uncertainty=u)
    assert est.oracle_ is None and est.best_model_.size_ <= 1
