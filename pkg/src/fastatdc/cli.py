"""Command-line interface: gen, detect, eval, sweep, bench, stats.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 algorithm error (no absolute normal trajectories found).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import statistics
import sys
import time
import warnings
from typing import Callable, Iterable, List, Optional, Sequence

from fastatdc import __version__
from fastatdc.diagnostics import (
    STATS_COLUMNS,
    MissingClassError,
    class_score_statistics,
    ordering_check,
)
from fastatdc.errors import AlgorithmError, ConfigError, DataError, EmptyANTError
from fastatdc.evaluation import CSV_COLUMNS, UndefinedMetricWarning, evaluate
from fastatdc.pipeline import load_run, run, stage1_scores
from fastatdc.scoring import (
    DEFAULT_K,
    DEFAULT_PHI,
    DEFAULT_R1,
    DEFAULT_R2,
    DEFAULT_THETA,
    THETA_PRESETS,
    DetectionConfig,
)
from fastatdc.trajdata import (
    PRESETS,
    ClassLabel,
    Dataset,
    GeneratorSpec,
    dataset_to_lines,
    generate,
    load_dataset,
    preset_spec,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_ALGORITHM = 4

SWEEP_COLUMNS = [
    "dataset",
    "stage",
    "rate",
    "r1",
    "r2",
    "seed",
    "f1_gd",
    "f1_ld",
    "f1_nt",
    "f1_ls",
    "f1_gs",
    "macro_f1",
    "stage1_seconds",
    "stage2_seconds",
    "error",
]
BENCH_COLUMNS = ["dataset", "method", "seconds_per_100", "speedup"]
RECORD_COLUMNS = ["id", "score", "stage", "predicted", "is_ant"]


# ---------------------------------------------------------------------------
# Flag parsing helpers
# ---------------------------------------------------------------------------


def _floats(text: str, what: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"{what}: expected comma-separated numbers, got {text!r}") from None


def _ints(text: str, what: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"{what}: expected comma-separated integers, got {text!r}") from None


def _theta(args) -> tuple:
    if args.theta is not None and args.theta_preset is not None:
        raise ConfigError("--theta and --theta-preset are mutually exclusive")
    if args.theta_preset is not None:
        return THETA_PRESETS[args.theta_preset]
    if args.theta is not None:
        return tuple(_floats(args.theta, "--theta"))
    return DEFAULT_THETA


def _config(args, **overrides) -> DetectionConfig:
    kwargs = dict(
        k=args.k, phi=args.phi, theta=_theta(args), r1=args.r1, r2=args.r2, seed=args.seed
    )
    kwargs.update(overrides)
    return DetectionConfig(**kwargs)


def _labeled(ds: Dataset, path: str) -> Dataset:
    if not ds.is_labeled:
        missing = next(t.id for t in ds.trajectories if t.label is None)
        raise DataError(f"{path}: dataset is unlabeled (trajectory {missing} has no label)")
    return ds


def _emit(args, text: str) -> None:
    if args.output in (None, "-"):
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    try:
        with open(args.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise DataError(f"cannot write {args.output}: {exc}") from exc


def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _note(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    overrides = {}
    if args.n is not None:
        overrides["n"] = args.n
    if args.probs is not None:
        overrides["probs"] = tuple(_floats(args.probs, "--probs"))
    for flag in ("grid_w", "grid_h", "route_len", "name"):
        value = getattr(args, flag)
        if value is not None:
            overrides[flag] = value
    if args.preset:
        spec = preset_spec(args.preset, seed=args.seed, **overrides)
    else:
        spec = GeneratorSpec(seed=args.seed, **overrides)
    ds = generate(spec)
    _emit(args, "\n".join(dataset_to_lines(ds)) + "\n")
    counts = ds.class_counts()
    _note(f"{len(ds)} trajectories: " + " ".join(f"{c.name}={counts[c]}" for c in ClassLabel))
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = _config(args)
    ds = load_dataset(args.dataset)
    result = run(ds, cfg, method=args.method, threads=args.threads)
    if (args.format or "json") == "csv":
        rows = [
            [r.trajectory_id, repr(r.score), r.stage.value, r.predicted.name, int(r.is_ant)]
            for r in result.records
        ]
        _emit(args, _csv_text(RECORD_COLUMNS, rows))
    else:
        _emit(args, "\n".join(result.to_lines()) + "\n")
    s = result.summary()
    _note(f"{s['method']}: {s['n']} trajectories, {s['n_ant']} ANT, theta={list(cfg.theta)}")
    return EXIT_OK


def _align(ds: Dataset, records) -> List[ClassLabel]:
    by_id = {r.trajectory_id: r for r in records}
    for tid in ds.ids:
        if tid not in by_id:
            raise DataError(f"trajectory {tid} is in the dataset but missing from the run file")
    known = set(ds.ids)
    for r in records:
        if r.trajectory_id not in known:
            raise DataError(f"trajectory {r.trajectory_id} is in the run file but missing from the dataset")
    return [by_id[tid].predicted for tid in ds.ids]


def cmd_eval(args) -> int:
    ds = _labeled(load_dataset(args.dataset), args.dataset)
    records, summary = load_run(args.run)
    pred = _align(ds, records)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", UndefinedMetricWarning)
        report = evaluate(ds.labels, pred)
    for w in caught:
        _note(f"warning: {w.message}")
    method = summary.get("method", "")
    per100 = summary.get("timings", {}).get("seconds_per_100_trajectories")
    if (args.format or "json") == "csv":
        _emit(args, _csv_text(CSV_COLUMNS, [report.csv_row(ds.name, method, per100)]))
        return EXIT_OK
    doc = report.as_dict()
    if args.case is None:
        doc.pop("case1_f1")
        doc.pop("case2_f1")
    elif args.case == 1:
        doc.pop("case2_f1")
    else:
        doc.pop("case1_f1")
    doc.update(dataset=ds.name, method=method, seconds_per_100=per100)
    _emit(args, json.dumps(doc, indent=2) + "\n")
    return EXIT_OK


def _sweep_cell(ds: Dataset, cfg: DetectionConfig, method: str, threads: int, repeat: int):
    """Run one (rate, seed) cell ``repeat`` times; labels are fixed, timings are medians."""
    t1, t2 = [], []
    result = None
    for _ in range(repeat):
        result = run(ds, cfg, method=method, threads=threads)
        t1.append(result.timings.stage1_seconds)
        t2.append(result.timings.stage2_seconds)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UndefinedMetricWarning)
        report = evaluate(ds.labels, result.predicted)
    return report, statistics.median(t1), statistics.median(t2)


def cmd_sweep(args) -> int:
    ds = _labeled(load_dataset(args.dataset), args.dataset)
    rates = _floats(args.rates, "--rates")
    if not rates:
        raise ConfigError("--rates must not be empty")
    for r in rates:
        if not 0 < r <= 1:
            raise ConfigError(f"sampling rate {r} outside (0, 1]")
    seeds = _ints(args.seeds, "--seeds") if args.seeds else [args.seed]
    if not seeds:
        raise ConfigError("--seeds must not be empty")
    if args.repeat < 1:
        raise ConfigError("--repeat must be at least 1")
    rows = []
    for rate in rates:
        for seed in seeds:
            if args.stage == "stage1":
                r1, r2 = rate, args.r2
            else:
                r1, r2 = args.fixed_r1, rate
            cfg = _config(args, r1=r1, r2=r2, seed=seed)
            head = [ds.name, args.stage, rate, r1, r2, seed]
            try:
                report, s1, s2 = _sweep_cell(ds, cfg, "fastatdc", args.threads, args.repeat)
            except (AlgorithmError, DataError) as exc:
                rows.append(head + [""] * 8 + [f"{type(exc).__name__}: {exc}"])
                continue
            rows.append(
                head
                + [_fmt(float(f)) for f in report.f1_per_class]
                + [_fmt(report.macro_f1_anomaly), _fmt(s1), _fmt(s2), ""]
            )
    _emit(args, _csv_text(SWEEP_COLUMNS, rows))
    return EXIT_OK


def _median_time(fn: Callable[[], object], reps: int) -> float:
    times = []
    for _ in range(reps):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return statistics.median(times)


def cmd_bench(args) -> int:
    if args.reps < 1:
        raise ConfigError("--reps must be at least 1")
    cfg = _config(args)
    rows = []
    for path in args.datasets:
        ds = load_dataset(path)
        per100 = {}
        for method in ("atdc", "fastatdc"):
            seconds = _median_time(lambda: run(ds, cfg, method=method, threads=args.threads), args.reps)
            per100[method] = 100.0 * seconds / len(ds)
        speedup = per100["atdc"] / per100["fastatdc"] if per100["fastatdc"] > 0 else float("inf")
        rows.append([ds.name, "atdc", _fmt(per100["atdc"]), _fmt(1.0)])
        rows.append([ds.name, "fastatdc", _fmt(per100["fastatdc"]), _fmt(speedup)])
    if args.format == "json":
        _emit(args, json.dumps([dict(zip(BENCH_COLUMNS, r)) for r in rows], indent=2) + "\n")
    else:
        _emit(args, _csv_text(BENCH_COLUMNS, rows))
    return EXIT_OK


def cmd_stats(args) -> int:
    ds = _labeled(load_dataset(args.dataset), args.dataset)
    cfg = _config(args)
    scores = stage1_scores(ds, cfg, exact=args.s1_mode == "full", threads=args.threads)
    stats = class_score_statistics(ds, scores)
    try:
        report = ordering_check(stats, cfg.phi)
        verdict = "PASS" if report.passed else "FAIL"
        detail = {"passed": report.passed, "checks": report.checks}
    except MissingClassError as exc:
        verdict = f"INCOMPLETE ({exc})"
        detail = {"passed": None, "error": str(exc)}
    if args.format == "json":
        doc = {
            "dataset": ds.name,
            "s1_mode": args.s1_mode,
            "stats": [dict(zip(STATS_COLUMNS, s.csv_row())) for s in stats],
            "ordering": detail,
        }
        _emit(args, json.dumps(doc, indent=2) + "\n")
    else:
        _emit(args, _csv_text(STATS_COLUMNS, [s.csv_row() for s in stats]))
    _note(f"ordering check: {verdict}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")
    p.add_argument("-o", "--output", help="output file (default stdout)")
    p.add_argument("--format", choices=("json", "csv"), help="output format")
    return p


def _detection_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--k", type=int, default=DEFAULT_K, help=f"nearest ANT per trajectory (default {DEFAULT_K})")
    p.add_argument("--phi", type=float, default=DEFAULT_PHI, help=f"ANT half-width (default {DEFAULT_PHI})")
    p.add_argument(
        "--theta",
        help="four thresholds t1,t2,t3,t4 with t1 > t2 > 0 > t3 > t4 (default 0.5,0.11,-0.11,-0.5)",
    )
    p.add_argument(
        "--theta-preset",
        choices=sorted(THETA_PRESETS),
        help="per-dataset tuned thresholds: "
        + "; ".join(f"{k}={','.join(str(x) for x in v)}" for k, v in sorted(THETA_PRESETS.items())),
    )
    p.add_argument("--r1", type=float, default=DEFAULT_R1, help=f"stage-1 sampling rate (default {DEFAULT_R1})")
    p.add_argument("--r2", type=float, default=DEFAULT_R2, help=f"stage-2 ANT sampling rate (default {DEFAULT_R2})")
    return p


def build_parser() -> argparse.ArgumentParser:
    common, det = _common(), _detection_flags()
    parser = argparse.ArgumentParser(prog="fastatdc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic labelled dataset (JSONL)")
    g.add_argument("--preset", choices=sorted(PRESETS), help="class mixture and size of a taxi dataset")
    g.add_argument("--n", type=int, help="number of trajectories")
    g.add_argument("--probs", help="class probabilities GD,LD,NT,LS,GS")
    g.add_argument("--grid-w", type=int)
    g.add_argument("--grid-h", type=int)
    g.add_argument("--route-len", type=int, help="cells on the normal route")
    g.add_argument("--name")
    g.set_defaults(func=cmd_gen)

    d = sub.add_parser(
        "detect",
        parents=[common, det],
        help="score and classify every trajectory",
        description="Writes one JSON record per trajectory and a final summary line "
        f"(json), or a CSV with columns {','.join(RECORD_COLUMNS)}.",
    )
    d.add_argument("dataset")
    d.add_argument("--method", choices=("atdc", "fastatdc"), default="fastatdc")
    d.set_defaults(func=cmd_detect)

    e = sub.add_parser(
        "eval",
        parents=[common],
        help="compare a run file against dataset labels",
        description=f"CSV columns: {','.join(CSV_COLUMNS)}.",
    )
    e.add_argument("dataset")
    e.add_argument("run")
    e.add_argument("--case", type=int, choices=(1, 2), help="binary collapse to report (json)")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser(
        "sweep",
        parents=[common, det],
        help="macro-F1 as a function of the sampling rate",
        description=f"CSV columns: {','.join(SWEEP_COLUMNS)}. Failed cells carry an error tag.",
    )
    s.add_argument("dataset")
    s.add_argument("--stage", choices=("stage1", "both"), default="stage1",
                   help="stage1: sweep r1 at fixed --r2; both: sweep r2 at fixed --fixed-r1")
    s.add_argument("--rates", default="0.004,0.01,0.05,0.1,0.2,0.3,0.5,1")
    s.add_argument("--fixed-r1", type=float, default=DEFAULT_R1)
    s.add_argument("--seeds", help="comma-separated seeds (default: --seed)")
    s.add_argument("--repeat", type=int, default=1, help="timing repetitions per cell")
    s.set_defaults(func=cmd_sweep)

    b = sub.add_parser(
        "bench",
        parents=[common, det],
        help="time both detectors and report the speedup",
        description=f"CSV columns: {','.join(BENCH_COLUMNS)}.",
    )
    b.add_argument("datasets", nargs="+")
    b.add_argument("--reps", type=int, default=5)
    b.set_defaults(func=cmd_bench)

    st = sub.add_parser(
        "stats",
        parents=[common, det],
        help="per-class stage-1 statistics and the class ordering check",
        description=f"CSV columns: {','.join(STATS_COLUMNS)}.",
    )
    st.add_argument("dataset")
    st.add_argument("--s1-mode", choices=("full", "sampled"), default="full")
    st.set_defaults(func=cmd_stats)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be at least 1")
    try:
        return args.func(args)
    except ConfigError as exc:
        _note(f"error: {exc}")
        return EXIT_CONFIG
    except EmptyANTError as exc:
        _note(f"error: {exc}")
        if exc.summary:
            _note("stage-1 summary: " + json.dumps(exc.summary, sort_keys=True))
        return EXIT_ALGORITHM
    except AlgorithmError as exc:
        _note(f"error: {exc}")
        return EXIT_ALGORITHM
    except DataError as exc:
        _note(f"error: {exc}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
