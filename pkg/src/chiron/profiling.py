"""Profiling datasets: one metric record per checkpoint interval.

Datasets move between pipeline stages as CSV or JSON files with a fixed
column order. Floats are written with ``repr`` (shortest round-trip form),
so reading a file and writing it back reproduces it byte for byte.
"""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import InvalidInput, OverUtilized, SchemaError
from .trt_heuristic import TrtEstimate, estimate_trt, utilization

FIELDS = ("ci_ms", "i_avg_eps", "i_max_eps", "l_avg_ms", "r_avg_ms", "w_avg_ms", "timeout_ms")
FORMATS = ("csv", "json")


@dataclass(frozen=True)
class ProfilingRunMetrics:
    ci_ms: float
    i_avg_eps: float
    i_max_eps: float
    l_avg_ms: float
    r_avg_ms: float
    w_avg_ms: float
    timeout_ms: float

    def __post_init__(self):
        for f in FIELDS:
            v = getattr(self, f)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                raise InvalidInput(f"{f} must be a finite number, got {v!r}")
            if v < 0:
                raise InvalidInput(f"{f} must be >= 0, got {v!r}")
        if self.ci_ms <= 0:
            raise InvalidInput(f"ci_ms must be > 0, got {self.ci_ms!r}")
        if self.timeout_ms <= 0:
            raise InvalidInput(f"timeout_ms must be > 0, got {self.timeout_ms!r}")
        if self.i_avg_eps >= self.i_max_eps:
            raise OverUtilized(
                f"i_avg_eps ({self.i_avg_eps!r}) must be < i_max_eps ({self.i_max_eps!r})"
            )


@dataclass(frozen=True)
class ProfilingDataset:
    runs: tuple[ProfilingRunMetrics, ...]

    def __post_init__(self):
        object.__setattr__(self, "runs", tuple(self.runs))
        if len(self.runs) < 3:
            raise InvalidInput(f"a dataset needs at least 3 runs, got {len(self.runs)}")
        for i in range(1, len(self.runs)):
            if not self.runs[i].ci_ms > self.runs[i - 1].ci_ms:
                raise InvalidInput(
                    f"ci_ms must be strictly increasing (run {i}: "
                    f"{self.runs[i].ci_ms!r} after {self.runs[i - 1].ci_ms!r})"
                )

    def __len__(self):
        return len(self.runs)

    def column(self, name: str) -> list[float]:
        return [getattr(r, name) for r in self.runs]

    @property
    def ci_values(self) -> list[float]:
        return self.column("ci_ms")


@dataclass(frozen=True)
class GridSpec:
    ci_min_ms: float
    ci_max_ms: float
    count: int


@dataclass(frozen=True)
class TrtDataPoint:
    ci_ms: float
    estimate: TrtEstimate


def make_grid(spec: GridSpec) -> list[float]:
    """``count`` equidistant CI values from ``ci_min_ms`` to ``ci_max_ms`` inclusive."""
    if int(spec.count) != spec.count or spec.count < 2:
        raise InvalidInput(f"grid count must be an integer >= 2, got {spec.count!r}")
    if not spec.ci_min_ms < spec.ci_max_ms:
        raise InvalidInput(
            f"ci_min_ms ({spec.ci_min_ms!r}) must be < ci_max_ms ({spec.ci_max_ms!r})"
        )
    lo, hi, k = float(spec.ci_min_ms), float(spec.ci_max_ms), int(spec.count) - 1
    # lo + i*(hi-lo)/k accumulates less error than repeated step addition
    grid = [lo + i * (hi - lo) / k for i in range(k)]
    grid.append(hi)
    return grid


def derive_trt_points(ds: ProfilingDataset) -> list[TrtDataPoint]:
    out = []
    for idx, run in enumerate(ds.runs):
        try:
            u = utilization(run.i_avg_eps, run.i_max_eps)
        except OverUtilized as exc:
            raise OverUtilized(f"run {idx}: {exc}", index=idx) from exc
        est = estimate_trt(run.ci_ms, run.timeout_ms, run.r_avg_ms, run.w_avg_ms, u)
        out.append(TrtDataPoint(run.ci_ms, est))
    return out


def median_runs(groups: Sequence[Sequence[ProfilingRunMetrics]]) -> list[ProfilingRunMetrics]:
    """Collapse repeated profiling runs to one record per CI by element-wise median.

    ``groups[j]`` holds the repeats for one CI setting; all of them must
    share that CI.
    """
    out = []
    for reps in groups:
        if not reps:
            raise InvalidInput("empty repeat group")
        ci = reps[0].ci_ms
        if any(r.ci_ms != ci for r in reps):
            raise InvalidInput(f"repeat group mixes CI values around {ci!r}")
        vals = {f: float(statistics.median([getattr(r, f) for r in reps])) for f in FIELDS}
        out.append(ProfilingRunMetrics(**vals))
    return out


# -- serialization -----------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def _parse_number(text, row: int, field: str) -> float:
    if isinstance(text, bool):
        raise SchemaError(f"row {row}: {field} must be a number", row=row, field=field)
    if isinstance(text, (int, float)):
        return float(text)
    if not isinstance(text, str):
        raise SchemaError(f"row {row}: {field} must be a number", row=row, field=field)
    t = text.strip()
    try:
        v = float(t)
    except ValueError:
        raise SchemaError(
            f"row {row}: {field} is not a number: {text!r}", row=row, field=field
        ) from None
    if not math.isfinite(v):
        raise SchemaError(f"row {row}: {field} must be finite", row=row, field=field)
    return v


def _build(records: Iterable[tuple[int, dict]]) -> ProfilingDataset:
    runs = []
    for row, rec in records:
        vals = {f: _parse_number(rec[f], row, f) for f in FIELDS}
        try:
            runs.append(ProfilingRunMetrics(**vals))
        except InvalidInput as exc:
            raise SchemaError(f"row {row}: {exc}", row=row) from exc
    runs.sort(key=lambda r: r.ci_ms)
    for a, b in zip(runs, runs[1:]):
        if a.ci_ms == b.ci_ms:
            raise SchemaError(f"duplicate ci_ms {a.ci_ms!r}")
    return ProfilingDataset(tuple(runs))


def read_dataset(source, format: str = "csv") -> ProfilingDataset:
    """Parse and validate a dataset from bytes, text or a binary/text stream.

    Rows are returned sorted by ``ci_ms``. Row numbers in error messages
    count data rows from 1 (the CSV header is not counted).
    """
    if format not in FORMATS:
        raise InvalidInput(f"unknown format {format!r}")
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        try:
            source = source.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SchemaError(f"dataset is not valid UTF-8: {exc}") from None

    if format == "json":
        try:
            doc = json.loads(source)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"malformed JSON: {exc}") from None
        if not isinstance(doc, dict) or not isinstance(doc.get("runs"), list):
            raise SchemaError('JSON dataset must be an object with a "runs" list')
        records = []
        for i, rec in enumerate(doc["runs"], start=1):
            if not isinstance(rec, dict):
                raise SchemaError(f"row {i}: run must be an object", row=i)
            missing = [f for f in FIELDS if f not in rec]
            if missing:
                raise SchemaError(f"row {i}: missing field(s) {missing}", row=i, field=missing[0])
            extra = sorted(set(rec) - set(FIELDS))
            if extra:
                raise SchemaError(f"row {i}: unknown field(s) {extra}", row=i, field=extra[0])
            records.append((i, rec))
        return _build(records)

    reader = csv.reader(io.StringIO(source, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("empty CSV: header row required") from None
    if tuple(h.strip() for h in header) != FIELDS:
        raise SchemaError(f"CSV header must be {','.join(FIELDS)}; got {','.join(header)}")
    records = []
    for i, cells in enumerate(reader, start=1):
        if not cells:
            continue
        if len(cells) != len(FIELDS):
            raise SchemaError(
                f"row {i}: expected {len(FIELDS)} columns, got {len(cells)}", row=i
            )
        records.append((i, dict(zip(FIELDS, cells))))
    return _build(records)


def write_dataset(ds: ProfilingDataset, format: str = "csv") -> bytes:
    if format not in FORMATS:
        raise InvalidInput(f"unknown format {format!r}")
    if format == "json":
        runs = [{f: float(getattr(r, f)) for f in FIELDS} for r in ds.runs]
        return (json.dumps({"runs": runs}, indent=2) + "\n").encode("utf-8")
    lines = [",".join(FIELDS)]
    for r in ds.runs:
        lines.append(",".join(_fmt(getattr(r, f)) for f in FIELDS))
    return ("\n".join(lines) + "\n").encode("utf-8")
