"""``chiron`` command line: simulate | profile | fit | optimize | validate | plotdata.

Each stage reads and writes plain files so the pipeline can be run and
inspected one step at a time::

    chiron profile --config cfg.json --out dataset.csv
    chiron fit dataset.csv --out models.json
    chiron optimize models.json --c-trt 180000 --case max > rec.json
    chiron validate models.json rec.json --config cfg.json --trials 5

Exit codes: 0 success, 2 bad input, 3 no feasible checkpoint interval.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from .errors import ChironError, Infeasible, InvalidInput, OutOfDomain
from .modeling import ModelFamily, fit_family
from .optimizer import CASES, QosConstraint, Recommendation, recommend
from .profiling import FORMATS, GridSpec, derive_trt_points, make_grid, read_dataset, write_dataset
from .simulator import FailureSpec, SimConfig, observed_trt_medians, profile_grid, run, validate

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3

PLOT_POINTS = 200


class UsageError(Exception):
    pass


def _read_json(path: str, what: str):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {what} {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} {path} is not valid JSON: {exc}") from None


def _read_bytes(path: str, what: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read {what} {path}: {exc.strerror}") from None


def _write(path: str | None, data: str | bytes) -> None:
    if isinstance(data, str):
        data = data.encode("utf-8")
    if path is None or path == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
        return
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(data)


def _format_for(path: str | None, explicit: str | None) -> str:
    if explicit:
        return explicit
    return "json" if path and path.endswith(".json") else "csv"


def _load_family(path: str) -> ModelFamily:
    return ModelFamily.from_json(_read_bytes(path, "models file"))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def cmd_simulate(args) -> int:
    cfg = SimConfig.from_dict(_read_json(args.config, "config"))
    spec = FailureSpec.from_dict(_read_json(args.failures, "failure spec")) if args.failures else None
    out = run(cfg, spec)
    _write(args.out, out.to_json())
    events = args.events or (str(Path(args.out).with_suffix("")) + ".events.csv" if args.out else None)
    if events:
        _write(events, out.event_log_csv())
    return EXIT_OK


def cmd_profile(args) -> int:
    cfg = SimConfig.from_dict(_read_json(args.config, "config"))
    grid = make_grid(GridSpec(args.ci_min, args.ci_max, args.count))
    ds, outcomes = profile_grid(cfg, grid, args.failures_per_run, args.repeats)
    _write(args.out, write_dataset(ds, _format_for(args.out, args.format)))
    if args.observed:
        rows = observed_trt_medians(grid, outcomes)
        _write(args.observed, _csv_text(["ci_ms", "median_trt_ms"], rows))
    return EXIT_OK


def cmd_fit(args) -> int:
    raw = _read_bytes(args.dataset, "dataset")
    ds = read_dataset(raw, _format_for(args.dataset, args.format))
    family = fit_family(ds, derive_trt_points(ds))
    _write(args.out, family.to_json())
    return EXIT_OK


def cmd_optimize(args) -> int:
    family = _load_family(args.models)
    rec = recommend(family, QosConstraint(args.c_trt, args.case), clamp=args.clamp)
    _write(args.out, rec.to_json(family))
    return EXIT_OK


def cmd_validate(args) -> int:
    family = _load_family(args.models)
    rec = Recommendation.from_json(_read_bytes(args.recommendation, "recommendation"))
    cfg = SimConfig.from_dict(_read_json(args.config, "config"))
    report = validate(family, rec, cfg, args.trials)
    _write(args.out, report.to_csv())
    return EXIT_OK


def cmd_plotdata(args) -> int:
    family = _load_family(args.models)
    raw = _read_bytes(args.dataset, "dataset")
    ds = read_dataset(raw, _format_for(args.dataset, args.format))
    lo, hi = family.domain
    xs = [lo + i * (hi - lo) / (PLOT_POINTS - 1) for i in range(PLOT_POINTS - 1)] + [hi]
    out = Path(args.out_dir)
    for key, m in family.models().items():
        _write(str(out / f"curve_{key}.csv"), _csv_text(["ci_ms", "value"], [(x, m(x)) for x in xs]))

    points = derive_trt_points(ds)
    train = [
        (r.ci_ms, r.l_avg_ms, p.estimate.trt_min_ms, p.estimate.trt_avg_ms, p.estimate.trt_max_ms)
        for r, p in zip(ds.runs, points)
    ]
    _write(
        str(out / "points_training.csv"),
        _csv_text(["ci_ms", "l_avg_ms", "trt_min_ms", "trt_avg_ms", "trt_max_ms"], train),
    )
    observed = []
    if args.observed:
        text = _read_bytes(args.observed, "observed TRT file").decode("utf-8")
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["ci_ms", "median_trt_ms"]:
            raise UsageError(f"{args.observed}: expected header ci_ms,median_trt_ms")
        try:
            observed = [(float(a), float(b)) for a, b in rows[1:] if a]
        except ValueError as exc:
            raise UsageError(f"{args.observed}: {exc}") from None
    _write(str(out / "points_observed_trt.csv"), _csv_text(["ci_ms", "median_trt_ms"], observed))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chiron", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one simulation")
    s.add_argument("--config", required=True)
    s.add_argument("--failures")
    s.add_argument("--out", help="outcome JSON (default: stdout)")
    s.add_argument("--events", help="event-log CSV (default: <out>.events.csv)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("profile", help="simulate a CI grid and write a dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--ci-min", type=float, default=1000.0)
    s.add_argument("--ci-max", type=float, default=60000.0)
    s.add_argument("--count", type=int, default=11)
    s.add_argument("--repeats", type=int, default=5)
    s.add_argument("--failures-per-run", type=int, default=3)
    s.add_argument("--format", choices=FORMATS)
    s.add_argument("--out")
    s.add_argument("--observed", help="also write per-CI median measured TRT here")
    s.set_defaults(func=cmd_profile)

    s = sub.add_parser("fit", help="fit the latency and availability models")
    s.add_argument("dataset")
    s.add_argument("--format", choices=FORMATS)
    s.add_argument("--out")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("optimize", help="recommend a CI for a TRT bound")
    s.add_argument("models")
    s.add_argument("--c-trt", type=float, required=True, help="TRT bound in ms")
    s.add_argument("--case", choices=CASES, default="max")
    s.add_argument("--clamp", action="store_true", help="clamp to the profiled range")
    s.add_argument("--out")
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("validate", help="check a recommendation against fresh simulations")
    s.add_argument("models")
    s.add_argument("recommendation")
    s.add_argument("--config", required=True)
    s.add_argument("--trials", type=int, default=5)
    s.add_argument("--out")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("plotdata", help="write curve and scatter CSVs for plotting")
    s.add_argument("models")
    s.add_argument("dataset")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--format", choices=FORMATS)
    s.add_argument("--observed", help="median TRT CSV written by `profile --observed`")
    s.set_defaults(func=cmd_plotdata)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        return args.func(args)
    except (Infeasible, OutOfDomain) as exc:
        print(f"chiron {args.command}: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (UsageError, InvalidInput, ChironError) as exc:
        print(f"chiron {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
