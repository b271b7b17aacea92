import csv
import json

import pytest

from oracle_distill.cli import main

FAST = ["--iters", "2", "--repeats", "1", "--trees", "10", "--space", "n_samples=300:600"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "moons.libsvm"
    assert main(["gen", "moons", "--n-samples", "300", "--noise", "0.25", "--out", str(path)]) == 0
    return path


def _json(path):
    return json.loads(path.read_text())


def test_gen_formats(tmp_path, capsys):
    assert main(["gen", "blobs", "--n-samples", "90", "--classes", "3", "--out", str(tmp_path / "b.csv")]) == 0
    rows = (tmp_path / "b.csv").read_text().splitlines()
    assert len(rows) >= 90
    assert "90 rows" in capsys.readouterr().out


def test_run_writes_directory(data, tmp_path):
    out = tmp_path / "run"
    assert main(["run", "--data", str(data), "--size", "2", *FAST, "--out", str(out)]) == 0
    for name in ("config.json", "result.json", "trials.jsonl", "timing.json", "profiles/run_0.csv"):
        assert (out / name).is_file(), name
    res = _json(out / "result.json")
    assert res["summary"]["delta_f1"] >= 0
    assert "elapsed" not in (out / "result.json").read_text()
    assert len((out / "trials.jsonl").read_text().splitlines()) == 2


def test_missing_data_file_exits_2(tmp_path, capsys):
    missing = tmp_path / "nope.libsvm"
    assert main(["run", "--data", str(missing), "--out", str(tmp_path / "o")]) == 2
    assert str(missing) in capsys.readouterr().err


def test_missing_config_and_bad_values_exit_2(data, tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["run", "--data", str(data), "--iters", "0", "--out", str(tmp_path / "o")]) == 2
    assert main(["sweep", "--data", str(data), "--sizes", "3-1", "--out", str(tmp_path / "o")]) == 2
    assert main(["run", "--data", str(data), "--oracle", f"precomputed:{tmp_path / 's.csv'}",
                 "--out", str(tmp_path / "o")]) == 2
    assert "s.csv" in capsys.readouterr().err


def test_bad_thread_env_exits_2(data, tmp_path, monkeypatch):
    monkeypatch.setenv("ORACLE_DISTILL_THREADS", "many")
    assert main(["run", "--data", str(data), "--out", str(tmp_path / "o")]) == 2


def test_scores_then_precomputed_run(data, tmp_path):
    scores = tmp_path / "scores.csv"
    assert main(["scores", "--data", str(data), "--trees", "10", "--out", str(scores)]) == 0
    assert len(scores.read_text().splitlines()) == 301  # header plus one row per instance
    out = tmp_path / "pre"
    assert main(["run", "--data", str(data), "--oracle", f"precomputed:{scores}", "--size", "2", *FAST,
                 "--out", str(out)]) == 0
    assert _json(out / "result.json")["runs"][0]["oracle_test_f1"] is None


def test_sweep_rows(data, tmp_path):
    out = tmp_path / "sweep"
    assert main(["sweep", "--data", str(data), "--sizes", "1-5", *FAST, "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "tables" / "delta_f1.csv").open()))
    assert [int(r["size"]) for r in rows] == [1, 2, 3, 4, 5]
    assert all(float(r["delta_f1"]) >= 0 for r in rows)


def test_compare_against_identical_table_ties(data, tmp_path):
    first = tmp_path / "first"
    assert main(["sweep", "--data", str(data), "--sizes", "1-3", *FAST, "--out", str(first)]) == 0
    alt = first / "tables" / "delta_f1.csv"
    out = tmp_path / "cmp"
    assert main(["compare", "--data", str(data), "--sizes", "1-3", *FAST, "--alt", str(alt),
                 "--out", str(out)]) == 0
    comp = _json(out / "result.json")["comparison"]
    assert all(r["sdi"] == 0 for r in comp["rows"])
    assert comp["pct_better"] == 0


def test_compare_with_uncertainty_sampling(data, tmp_path):
    out = tmp_path / "cmp"
    assert main(["compare", "--data", str(data), "--sizes", "1-2", *FAST, "--batch-size", "40",
                 "--out", str(out)]) == 0
    assert (out / "tables" / "sdi.csv").is_file()
    assert (out / "tables" / "sus.csv").is_file()


def test_sus_command(data, tmp_path):
    out = tmp_path / "sus"
    assert main(["sus", "--data", str(data), "--size", "2", "--trees", "10", "--batch-size", "60",
                 "--out", str(out)]) == 0
    assert _json(out / "result.json")["runs"][0]["best_round"] >= 1


def test_report_is_deterministic(data, tmp_path):
    out = tmp_path / "sweep"
    assert main(["sweep", "--data", str(data), "--sizes", "1-3", *FAST, "--out", str(out)]) == 0
    assert main(["report", str(out), "--grid", "51"]) == 0
    curves = sorted(p.name for p in (out / "curves").iterdir())
    first = {n: (out / "curves" / n).read_bytes() for n in curves}
    assert main(["report", str(out), "--grid", "51"]) == 0
    assert first == {n: (out / "curves" / n).read_bytes() for n in curves}
    assert "compaction.csv" in curves


def test_report_rejects_non_run_dir(tmp_path):
    assert main(["report", str(tmp_path)]) == 2


def test_rerun_from_config_is_byte_identical(data, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["sweep", "--data", str(data), "--sizes", "1-2", *FAST, "--seed", "7", "--out", str(a)]) == 0
    assert main(["sweep", "--config", str(a / "config.json"), "--out", str(b)]) == 0
    assert (a / "result.json").read_bytes() == (b / "result.json").read_bytes()
    assert (a / "config.json").read_bytes() == (b / "config.json").read_bytes()
