"""Command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from .dataset import DatasetFormatError, save_dataset
from .oracle import build_forest_oracle, oracle_uncertainties, write_precomputed
from .pipeline import (
    RunConfig, compare_with_alt, load_config_dataset, read_alt_deltas, report_curves, run_oracle_pipeline,
    run_seed_for, run_supervised_uncertainty_sampling, size_sweep, write_run_dir,
)
from .synthetic import GENERATORS, generate

log = logging.getLogger("oracle_distill")


class ConfigError(Exception):
    pass


def _parse_sizes(text: str) -> list[int]:
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise ValueError(f"empty size list {text!r}")
    return out


def _parse_assignments(items, parse_value):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ValueError(f"expected name=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = parse_value(v)
    return out


def _bounds(v: str):
    lo, hi = v.split(":", 1)
    return [float(lo), float(hi)]


def _add_run_flags(p: argparse.ArgumentParser, sweep=False):
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--data", help="dataset file (.libsvm/.svm or .csv)")
    p.add_argument("--format", choices=["libsvm", "csv"])
    p.add_argument("--label-column", help="CSV label column (index or name)")
    p.add_argument("--max-instances", type=int, help="stratified subsample cap")
    p.add_argument("--model", choices=["dt", "lpm"])
    if sweep:
        p.add_argument("--sizes", help="e.g. 1-15 or 1,2,4; default derives the range from the data")
    else:
        p.add_argument("--size", type=int)
    p.add_argument("--oracle", help="rf or precomputed:<scores.csv>")
    p.add_argument("--trees", type=int, dest="rf_trees")
    p.add_argument("--no-calibrate", action="store_true")
    p.add_argument("--metric", choices=["margin", "least_confident", "entropy"])
    p.add_argument("--no-flatten", action="store_true")
    p.add_argument("--bins", type=int)
    p.add_argument("--iters", type=int, dest="iterations")
    p.add_argument("--repeats", type=int)
    p.add_argument("--runs", type=int, help="independent runs (splits and oracles) to average")
    p.add_argument("--seed", type=int)
    p.add_argument("--fix", action="append", metavar="NAME=VALUE", help="pin a sampling parameter")
    p.add_argument("--space", action="append", metavar="NAME=LO:HI", help="override search bounds")
    p.add_argument("--time-budget", type=float, help="seconds per cell before the search stops")
    p.add_argument("--out", required=True, help="run directory")


def build_config(args) -> RunConfig:
    doc: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    flags = {
        "dataset": args.data,
        "dataset_format": args.format,
        "max_instances": args.max_instances,
        "model": args.model,
        "oracle": args.oracle,
        "rf_trees": args.rf_trees,
        "metric": args.metric,
        "bins": args.bins,
        "iterations": args.iterations,
        "repeats": args.repeats,
        "runs": args.runs,
        "seed": args.seed,
        "time_budget": args.time_budget,
        "size": getattr(args, "size", None),
        "batch_size": getattr(args, "batch_size", None),
    }
    if args.label_column is not None:
        lc = args.label_column
        flags["label_column"] = int(lc) if lc.lstrip("-").isdigit() else lc
    if args.no_calibrate:
        flags["calibrate"] = False
    if args.no_flatten:
        flags["flatten"] = False
    try:
        if getattr(args, "sizes", None):
            flags["sizes"] = _parse_sizes(args.sizes)
        if args.fix:
            flags["fixed_params"] = {**doc.get("fixed_params", {}), **_parse_assignments(args.fix, float)}
        if args.space:
            flags["search_space"] = {**doc.get("search_space", {}), **_parse_assignments(args.space, _bounds)}
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    doc.update({k: v for k, v in flags.items() if v is not None})
    if doc.get("dataset"):
        doc["generator"] = None
        if not Path(doc["dataset"]).is_file():
            raise ConfigError(f"dataset file not found: {doc['dataset']}")
    if str(doc.get("oracle", "rf")).startswith("precomputed:"):
        path = doc["oracle"].split(":", 1)[1]
        if not Path(path).is_file():
            raise ConfigError(f"precomputed scores file not found: {path}")
    try:
        cfg = RunConfig.from_dict(doc)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    if "n_samples" in cfg.fixed_params:
        cfg.fixed_params["n_samples"] = int(cfg.fixed_params["n_samples"])
    return cfg


def _load(cfg: RunConfig):
    try:
        return load_config_dataset(cfg)
    except (OSError, DatasetFormatError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _write_timing(out: Path, started: float):
    (out / "timing.json").write_text(json.dumps({"elapsed_seconds": round(time.monotonic() - started, 3)}) + "\n")


def _print_summary(s: dict, label=""):
    parts = [f"baseline F1 {s['baseline_f1']:.4f}", f"improved F1 {s['improved_f1']:.4f}",
             f"dF1 {s['delta_f1']:.2f}%"]
    if "oracle_f1" in s:
        parts.append(f"oracle F1 {s['oracle_f1']:.4f}")
    print(f"{label}" + ", ".join(parts))


def cmd_gen(args) -> int:
    kwargs = {"n_samples": args.n_samples, "seed": args.seed}
    if args.kind == "blobs":
        kwargs.update(n_classes=args.classes, n_features=args.features, cluster_std=args.std)
    elif args.kind == "moons":
        kwargs.update(noise=args.noise if args.noise is not None else 0.2)
    else:
        kwargs.update(cells=args.cells, noise=args.noise if args.noise is not None else 0.0)
    ds = generate(args.kind, **kwargs)
    save_dataset(ds, args.out, args.format)
    print(f"wrote {ds.n_samples} rows, {ds.n_features} features, {ds.class_count} classes to {args.out}")
    return 0


def cmd_run(args) -> int:
    cfg = build_config(args)
    ds = _load(cfg)
    started = time.monotonic()
    result = run_oracle_pipeline(cfg, ds)
    out = write_run_dir(result, cfg, args.out)
    _write_timing(out, started)
    _print_summary(result["summary"])
    for r in result["runs"]:
        for flag in r["flags"]:
            print(f"warning: run {r['run']}: {flag}", file=sys.stderr)
    print(f"run directory: {out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = build_config(args)
    ds = _load(cfg)
    started = time.monotonic()
    result = size_sweep(cfg, ds)
    out = write_run_dir(result, cfg, args.out)
    _write_timing(out, started)
    for row in result["rows"]:
        _print_summary(row, f"size {row['size']:>2}: ")
    if "compaction" in result:
        print(f"compaction index {result['compaction']['ci']:.4f}")
    print(f"run directory: {out}")
    return 0


def cmd_compare(args) -> int:
    cfg = build_config(args)
    alt = None
    if args.alt:
        if not Path(args.alt).is_file():
            raise ConfigError(f"comparator table not found: {args.alt}")
        try:
            alt = read_alt_deltas(args.alt)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    ds = _load(cfg)
    started = time.monotonic()
    result = size_sweep(cfg, ds, with_sus=alt is None)
    if alt is not None:
        result["comparison"] = compare_with_alt(result["rows"], alt)
    out = write_run_dir(result, cfg, args.out)
    _write_timing(out, started)
    for row in result["comparison"]["rows"]:
        print(f"size {row['size']:>2}: dF1 {row['delta_ora']:.2f}% vs {row['delta_alt']:.2f}%  SDI {row['sdi']:+.3f}")
    print(f"mean SDI {result['comparison']['mean_sdi']:+.3f}, better in {result['comparison']['pct_better']:.1f}%")
    print(f"run directory: {out}")
    return 0


def cmd_sus(args) -> int:
    cfg = build_config(args)
    ds = _load(cfg)
    result = run_supervised_uncertainty_sampling(cfg, args.batch_size, ds)
    out = write_run_dir(result, cfg, args.out)
    for r in result["runs"]:
        print(f"run {r['run']}: best round {r['best_round']}, test F1 {r['test_f1']:.4f}, "
              f"baseline {r['baseline_test_f1']:.4f}")
    print(f"run directory: {out}")
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    for name in ("config.json", "result.json", "trials.jsonl"):
        if not (run_dir / name).is_file():
            raise ConfigError(f"not a run directory (missing {run_dir / name})")
    curves = report_curves(run_dir, args.grid)
    (run_dir / "curves").mkdir(exist_ok=True)
    for name, text in curves.items():
        (run_dir / "curves" / name).write_text(text)
        print(f"wrote {run_dir / 'curves' / name}")
    if not curves:
        print("no size improved over its baseline; no curves to report")
    return 0


def cmd_scores(args) -> int:
    cfg = build_config(args)
    if cfg.oracle != "rf":
        raise ConfigError("scores needs the built-in oracle (--oracle rf)")
    ds = _load(cfg)
    from .dataset import SplitSpec, stratified_split
    from ._validation import derive_seed

    rs = run_seed_for(cfg, 0)
    train, _, _ = stratified_split(ds, SplitSpec(*cfg.split, seed=derive_seed(rs, 1)))
    grid = cfg.rf_grid or {"n_estimators": [cfg.rf_trees], "max_depth": [None]}
    oracle, _ = build_forest_oracle(train, derive_seed(rs, 2), cfg.calibrate, cfg.cal_fraction, grid)
    u = oracle_uncertainties(oracle, ds, cfg.metric)
    Path(args.out).write_text(write_precomputed(ds.row_ids, u))
    print(f"wrote {u.size} scores to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oracle-distill", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic dataset")
    g.add_argument("kind", choices=GENERATORS)
    g.add_argument("--n-samples", type=int, default=2000)
    g.add_argument("--classes", type=int, default=3)
    g.add_argument("--features", type=int, default=2)
    g.add_argument("--std", type=float, default=1.0)
    g.add_argument("--noise", type=float)
    g.add_argument("--cells", type=int, default=6, help="checkerboard cells per side (xor)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--format", choices=["libsvm", "csv"])
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="oracle-guided search at one model size")
    _add_run_flags(r)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="oracle-guided search over a range of sizes")
    _add_run_flags(s, sweep=True)
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("compare", help="sweep plus supervised uncertainty sampling; SDI tables")
    _add_run_flags(c, sweep=True)
    c.add_argument("--batch-size", type=int, help="points added per round (default 10)")
    c.add_argument("--alt", help="CSV with size,delta_f1 of another method instead of uncertainty sampling")
    c.set_defaults(func=cmd_compare)

    u = sub.add_parser("sus", help="supervised uncertainty sampling at one size")
    _add_run_flags(u)
    u.add_argument("--batch-size", type=int)
    u.set_defaults(func=cmd_sus)

    rep = sub.add_parser("report", help="mixture and compaction curves of a finished sweep")
    rep.add_argument("run_dir")
    rep.add_argument("--grid", type=int, default=101, help="grid points on [0, 1]")
    rep.set_defaults(func=cmd_report)

    sc = sub.add_parser("scores", help="dump oracle uncertainties in the precomputed CSV format")
    _add_run_flags(sc)
    sc.set_defaults(func=cmd_scores)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("ORACLE_DISTILL_THREADS")
    if threads is not None and not threads.strip().isdigit():
        print(f"error: ORACLE_DISTILL_THREADS must be a positive integer, got {threads!r}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
