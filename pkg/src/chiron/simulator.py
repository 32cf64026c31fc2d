"""Fluid discrete-time simulation of a checkpointing stream job.

The job is modelled at 1 ms resolution with real-valued event counts.
Each step, events arrive at the (jittered) average ingress rate and the
job processes ``min(capacity, backlog + arrivals)``. Checkpoints complete
on a fixed period and record the committed stream offset.

A failure at ``t_f`` goes through the lifecycle

    fail -> detect (after the heartbeat timeout)
         -> restore (state rolled back, processing resumes)
         -> maximize (capacity ramp finished, catch-up at full rate)
         -> equalize (backlog drained, TRT recorded)

Rolling back re-queues everything committed since the last completed
checkpoint, so failures later in a checkpoint cycle replay more events.
Processing capacity is zero until the restore completes, then rises
linearly to ``i_max`` over the warm-up period.

Latency is not derived from the queue: every failure-free step gets a
sample ``base_latency + overhead_coeff / ci + noise``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, fields, replace
from typing import Sequence

import numpy as np

from .errors import InvalidFailureSpec, InvalidInput, NotCaughtUp, SchemaError
from .modeling import ModelFamily
from .optimizer import Recommendation
from .profiling import ProfilingDataset, ProfilingRunMetrics, median_runs

PHASES = ("checkpoint", "fail", "detect", "restore", "maximize", "equalize")
SPACINGS = ("uniform_random", "equally_spaced")
LATENCY_QUANTILE = 0.999

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(seed: int, index: int) -> int:
    """Seed for the ``index``-th repeat of a run seeded with ``seed``.

    ``splitmix64(seed ^ splitmix64(index))``; stable across platforms.
    """
    return _splitmix64((seed & _MASK64) ^ _splitmix64(index & _MASK64))


@dataclass(frozen=True)
class SimConfig:
    i_avg_eps: float
    i_max_eps: float
    ci_ms: float
    timeout_ms: float
    restore_ms: float
    warmup_ms: float
    base_latency_ms: float
    overhead_coeff: float
    duration_ms: float
    ingress_jitter: float = 0.0
    latency_noise_ms: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise InvalidInput(f"{f.name} must be a number, got {v!r}")
            if not math.isfinite(v) or v < 0:
                raise InvalidInput(f"{f.name} must be finite and >= 0, got {v!r}")
        if not isinstance(self.seed, int):
            raise InvalidInput(f"seed must be an integer, got {self.seed!r}")
        if self.i_max_eps <= 0 or self.i_avg_eps >= self.i_max_eps:
            raise InvalidInput(
                f"need 0 <= i_avg_eps < i_max_eps, got {self.i_avg_eps!r}, {self.i_max_eps!r}"
            )
        if self.ci_ms <= 0:
            raise InvalidInput("ci_ms must be > 0")
        if self.timeout_ms <= 0:
            raise InvalidInput("timeout_ms must be > 0")
        if self.duration_ms < 1:
            raise InvalidInput("duration_ms must be >= 1")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, doc: dict) -> "SimConfig":
        if not isinstance(doc, dict):
            raise SchemaError("config must be a JSON object")
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - names)
        if unknown:
            raise SchemaError(f"unknown config field(s) {unknown}", field=unknown[0])
        try:
            return cls(**doc)
        except TypeError as exc:
            raise SchemaError(f"bad config: {exc}") from None


def reference_config(**overrides) -> SimConfig:
    """Desk-scale scenario used by the acceptance checks and the README.

    U = 0.5, T = 5 s, R = 2 s, W = 1 s, 2% ingress jitter, ten minutes of
    simulated time. ``ci_ms`` is a placeholder that profiling overrides.
    """
    params = dict(
        i_avg_eps=1000.0,
        i_max_eps=2000.0,
        ci_ms=10000.0,
        timeout_ms=5000.0,
        restore_ms=2000.0,
        warmup_ms=1000.0,
        base_latency_ms=100.0,
        overhead_coeff=1e6,
        duration_ms=600000.0,
        ingress_jitter=0.02,
        latency_noise_ms=0.0,
        seed=42,
    )
    params.update(overrides)
    return SimConfig(**params)


@dataclass(frozen=True)
class FailureSpec:
    """Either explicit injection instants or a count with a spacing rule.

    ``uniform_random`` splits the run into ``count`` equal slots and fails
    at a uniformly random offset within one checkpoint interval of each
    slot's start. ``equally_spaced`` fails at ``(j+1) * duration / (count+1)``.
    """

    at_ms: tuple[float, ...] | None = None
    count: int | None = None
    spacing: str = "uniform_random"

    def __post_init__(self):
        if (self.at_ms is None) == (self.count is None):
            raise InvalidFailureSpec("give either at_ms instants or a count")
        if self.at_ms is not None:
            object.__setattr__(self, "at_ms", tuple(float(t) for t in self.at_ms))
        elif isinstance(self.count, bool) or not isinstance(self.count, int) or self.count < 0:
            raise InvalidFailureSpec(f"count must be a non-negative integer, got {self.count!r}")
        if self.spacing not in SPACINGS:
            raise InvalidFailureSpec(f"spacing must be one of {SPACINGS}, got {self.spacing!r}")

    @classmethod
    def none(cls) -> "FailureSpec":
        return cls(at_ms=())

    def to_dict(self) -> dict:
        if self.at_ms is not None:
            return {"injections": [{"at_ms": t} for t in self.at_ms]}
        return {"injections": {"count": self.count, "spacing": self.spacing}}

    @classmethod
    def from_dict(cls, doc: dict) -> "FailureSpec":
        if not isinstance(doc, dict) or "injections" not in doc:
            raise SchemaError('failure spec must be an object with "injections"', field="injections")
        inj = doc["injections"]
        if isinstance(inj, list) and len(inj) == 1 and isinstance(inj[0], dict) and "count" in inj[0]:
            inj = inj[0]
        if isinstance(inj, dict):
            extra = sorted(set(inj) - {"count", "spacing"})
            if extra or "count" not in inj:
                raise SchemaError(f"bad injections object {inj!r}", field="injections")
            return cls(count=inj["count"], spacing=inj.get("spacing", "uniform_random"))
        if not isinstance(inj, list):
            raise SchemaError("injections must be a list or an object", field="injections")
        times = []
        for i, item in enumerate(inj):
            if not isinstance(item, dict) or set(item) != {"at_ms"}:
                raise SchemaError(f"injection {i} must be {{\"at_ms\": t}}", field="at_ms")
            t = item["at_ms"]
            if isinstance(t, bool) or not isinstance(t, (int, float)):
                raise SchemaError(f"injection {i}: at_ms must be a number", field="at_ms")
            times.append(t)
        return cls(at_ms=tuple(times))


@dataclass(frozen=True)
class SimOutcome:
    measured_l_avg_ms: float
    measured_trt_ms: tuple[float, ...]
    measured_r_avg_ms: float | None
    measured_w_avg_ms: float | None
    measured_i_avg_eps: float
    measured_i_max_eps: float
    event_log: tuple[tuple[int, str], ...]
    failure_times_ms: tuple[int, ...] = ()
    # replayed span per failure (time since the last completed checkpoint)
    reprocess_ms: tuple[int, ...] = ()
    events_produced: float = 0.0
    events_processed: float = 0.0
    backlog_end: float = 0.0

    def to_dict(self) -> dict:
        return {
            "measured_l_avg_ms": self.measured_l_avg_ms,
            "measured_trt_ms": list(self.measured_trt_ms),
            "measured_r_avg_ms": self.measured_r_avg_ms,
            "measured_w_avg_ms": self.measured_w_avg_ms,
            "measured_i_avg_eps": self.measured_i_avg_eps,
            "measured_i_max_eps": self.measured_i_max_eps,
            "failure_times_ms": list(self.failure_times_ms),
            "reprocess_ms": list(self.reprocess_ms),
            "events_produced": self.events_produced,
            "events_processed": self.events_processed,
            "backlog_end": self.backlog_end,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def event_log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_ms", "phase"])
        w.writerows(self.event_log)
        return buf.getvalue()

    def to_run_metrics(self, ci_ms: float, timeout_ms: float) -> ProfilingRunMetrics:
        if self.measured_r_avg_ms is None or self.measured_w_avg_ms is None:
            raise InvalidInput("no failures were injected, recovery metrics are undefined")
        return ProfilingRunMetrics(
            ci_ms=ci_ms,
            i_avg_eps=self.measured_i_avg_eps,
            i_max_eps=self.measured_i_max_eps,
            l_avg_ms=self.measured_l_avg_ms,
            r_avg_ms=self.measured_r_avg_ms,
            w_avg_ms=self.measured_w_avg_ms,
            timeout_ms=timeout_ms,
        )


def _lindley(delta: np.ndarray, b0: float) -> np.ndarray:
    """Backlog after each step of ``b = max(0, b + delta)`` starting from ``b0``."""
    x = b0 + np.cumsum(delta)
    floor = np.minimum.accumulate(np.minimum(x, 0.0))
    return x - floor


def _steps(ms: float) -> int:
    return int(round(ms))


def _failure_instants(cfg: SimConfig, spec: FailureSpec, rng: np.random.Generator) -> list[int]:
    n = _steps(cfg.duration_ms)
    if spec.at_ms is not None:
        times = [int(math.floor(t)) for t in spec.at_ms]
    elif spec.spacing == "equally_spaced":
        times = [int(math.floor((j + 1) * n / (spec.count + 1))) for j in range(spec.count)]
    else:
        slot = n / spec.count if spec.count else 0.0
        offsets = rng.uniform(0.0, cfg.ci_ms, size=spec.count)
        times = [int(math.floor(j * slot + offsets[j])) for j in range(spec.count)]
    for t in times:
        if not 0 <= t < n:
            raise InvalidFailureSpec(f"failure at {t} ms outside the run [0, {n})")
    if any(b <= a for a, b in zip(times, times[1:])):
        raise InvalidFailureSpec(f"failure instants must be strictly increasing: {times}")
    return times


def run(cfg: SimConfig, failures: FailureSpec | None = None) -> SimOutcome:
    """Simulate one job execution and measure what a profiler would see."""
    failures = failures if failures is not None else FailureSpec.none()
    rng = np.random.default_rng(cfg.seed & _MASK64)
    n = _steps(cfg.duration_ms)
    t_down = _steps(cfg.timeout_ms) + _steps(cfg.restore_ms)
    t_warm = _steps(cfg.warmup_ms)
    cap_full = cfg.i_max_eps / 1000.0

    f_times = _failure_instants(cfg, failures, rng)

    ingress = np.full(n, cfg.i_avg_eps / 1000.0)
    if cfg.ingress_jitter > 0:
        ingress *= 1.0 + rng.uniform(-cfg.ingress_jitter, cfg.ingress_jitter, size=n)
    cap = np.full(n, cap_full)
    ramp = cap_full * (np.arange(t_warm) + 0.5) / t_warm if t_warm else np.empty(0)
    for tf in f_times:
        a, b = tf, min(tf + t_down, n)
        cap[a:b] = 0.0
        c = min(tf + t_down + t_warm, n)
        cap[b:c] = ramp[: c - b]

    # checkpoint boundaries k*ci, skipping those that fall while the job is down
    ck = []
    k = 0
    while True:
        tau = _steps(k * cfg.ci_ms)
        if tau >= n:
            break
        if not any(tf < tau <= tf + t_down for tf in f_times):
            ck.append(tau)
        k += 1
    ck = np.array(ck, dtype=np.int64)

    backlog = np.empty(n)
    replays: list[float] = []
    b_prev = 0.0
    produced = np.cumsum(ingress)
    trt, reprocess, eq_times = [], [], []
    bounds = list(f_times) + [n]
    start = 0
    for i, stop in enumerate(bounds):
        if stop > start:
            backlog[start:stop] = _lindley(ingress[start:stop] - cap[start:stop], b_prev)
            b_prev = float(backlog[stop - 1])
        if i > 0:
            tf = bounds[i - 1]
            first = tf + t_down - 1
            zeros = np.flatnonzero(backlog[max(first, tf):stop] == 0.0)
            if zeros.size == 0:
                if stop < n:
                    raise InvalidFailureSpec(
                        f"failure at {stop} ms overlaps recovery from failure at {tf} ms"
                    )
                raise NotCaughtUp(f"backlog from failure at {tf} ms not drained by {n} ms")
            t_eq = max(first, tf) + int(zeros[0]) + 1
            trt.append(float(t_eq - tf))
            eq_times.append(t_eq)
        if stop == n:
            break
        # failure at boundary `stop`: roll back to the last completed checkpoint
        tf = stop
        last = int(ck[np.searchsorted(ck, tf, side="right") - 1])
        committed_now = (produced[tf - 1] - backlog[tf - 1]) if tf > 0 else 0.0
        committed_ck = (produced[last - 1] - backlog[last - 1]) if last > 0 else 0.0
        replay = max(committed_now - committed_ck, 0.0)
        replays.append(replay)
        b_prev += replay
        reprocess.append(tf - last)
        start = stop

    log: list[tuple[int, str]] = [(int(t), "checkpoint") for t in ck if t > 0]
    for tf, t_eq in zip(f_times, eq_times):
        d = tf + _steps(cfg.timeout_ms)
        r = tf + t_down
        log += [(tf, "fail"), (d, "detect"), (r, "restore"), (r + t_warm, "maximize"), (t_eq, "equalize")]
    order = {p: i for i, p in enumerate(PHASES)}
    log.sort(key=lambda e: (e[0], order[e[1]]))

    healthy = np.ones(n, dtype=bool)
    for tf, t_eq in zip(f_times, eq_times):
        healthy[tf:t_eq] = False
    lat = np.full(n, cfg.base_latency_ms + cfg.overhead_coeff / cfg.ci_ms)
    if cfg.latency_noise_ms > 0:
        lat += rng.uniform(-cfg.latency_noise_ms, cfg.latency_noise_ms, size=n)
    lat = lat[healthy]
    if lat.size:
        cut = np.quantile(lat, LATENCY_QUANTILE)
        l_avg = float(lat[lat <= cut].mean())
        i_avg = float(ingress[healthy].mean() * 1000.0)
    else:
        l_avg = float("nan")
        i_avg = cfg.i_avg_eps

    prior = np.concatenate(([0.0], backlog[:-1]))
    prior[f_times] += replays
    served = prior + ingress - backlog
    # replayed events are served twice but only count once as processed
    processed = float(served.sum()) - float(sum(replays))

    failed = bool(f_times)
    return SimOutcome(
        measured_l_avg_ms=l_avg,
        measured_trt_ms=tuple(trt),
        measured_r_avg_ms=float(_steps(cfg.restore_ms)) if failed else None,
        measured_w_avg_ms=float(t_warm) if failed else None,
        measured_i_avg_eps=i_avg,
        measured_i_max_eps=float(cfg.i_max_eps),
        event_log=tuple(log),
        failure_times_ms=tuple(f_times),
        reprocess_ms=tuple(reprocess),
        events_produced=float(produced[-1]),
        events_processed=processed,
        backlog_end=float(backlog[-1]),
    )


def profile_grid(
    base: SimConfig,
    grid: Sequence[float],
    failures_per_run: int = 3,
    repeats: int = 5,
) -> tuple[ProfilingDataset, list[list[SimOutcome]]]:
    """Profile the job at every CI in ``grid``.

    Each CI is simulated ``repeats`` times with derived seeds and
    ``failures_per_run`` randomly placed failures; the dataset keeps the
    element-wise median of the per-run metrics. The raw outcomes are
    returned grouped by CI.
    """
    grid = [float(c) for c in grid]
    if not grid:
        raise InvalidInput("grid must not be empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise InvalidInput(f"grid must be strictly increasing without duplicates: {grid}")
    if repeats < 1:
        raise InvalidInput(f"repeats must be >= 1, got {repeats}")
    if failures_per_run < 1:
        raise InvalidInput("profiling needs at least one failure per run to measure recovery")
    spec = FailureSpec(count=failures_per_run, spacing="uniform_random")
    groups, outcomes = [], []
    for j, ci in enumerate(grid):
        reps, outs = [], []
        for r in range(repeats):
            cfg = replace(base, ci_ms=ci, seed=derive_seed(base.seed, j * repeats + r))
            out = run(cfg, spec)
            outs.append(out)
            reps.append(out.to_run_metrics(ci, base.timeout_ms))
        groups.append(reps)
        outcomes.append(outs)
    return ProfilingDataset(tuple(median_runs(groups))), outcomes


def observed_trt_medians(
    grid: Sequence[float], outcomes: Sequence[Sequence[SimOutcome]]
) -> list[tuple[float, float]]:
    """Median measured TRT per CI, pooled over every failure of every repeat."""
    out = []
    for ci, outs in zip(grid, outcomes):
        trts = [t for o in outs for t in o.measured_trt_ms]
        if trts:
            out.append((float(ci), float(np.median(trts))))
    return out


@dataclass(frozen=True)
class TrialResult:
    trial: int
    measured_trt_ms: float
    constraint_satisfied: bool
    measured_l_avg_ms: float
    percent_error: float


@dataclass(frozen=True)
class ValidationReport:
    ci_ms: float
    c_trt_ms: float
    predicted_l_avg_ms: float
    trials: tuple[TrialResult, ...]

    @property
    def all_satisfied(self) -> bool:
        return all(t.constraint_satisfied for t in self.trials)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "actual_trt_s", "constraint_satisfied", "actual_l_avg_ms", "percent_error"])
        for t in self.trials:
            w.writerow([
                t.trial,
                repr(t.measured_trt_ms / 1000.0),
                "true" if t.constraint_satisfied else "false",
                repr(t.measured_l_avg_ms),
                repr(t.percent_error),
            ])
        return buf.getvalue()


def validate(
    family: ModelFamily,
    rec: Recommendation,
    base: SimConfig,
    trials: int = 5,
) -> ValidationReport:
    """Re-run the job at the recommended CI and compare against the prediction.

    Each trial injects one failure at a random point of a checkpoint cycle.
    ``percent_error`` is ``|measured - predicted| / predicted * 100`` for
    the average latency.
    """
    if trials < 0:
        raise InvalidInput(f"trials must be >= 0, got {trials}")
    lo, hi = family.domain
    if not lo <= rec.ci_ms <= hi:
        raise InvalidInput(f"recommended CI {rec.ci_ms} outside model domain [{lo}, {hi}]")
    spec = FailureSpec(count=1, spacing="uniform_random")
    results = []
    for i in range(trials):
        cfg = replace(base, ci_ms=rec.ci_ms, seed=derive_seed(base.seed, i))
        out = run(cfg, spec)
        trt = out.measured_trt_ms[0]
        l_avg = out.measured_l_avg_ms
        err = abs(l_avg - rec.predicted_l_avg_ms) / abs(rec.predicted_l_avg_ms) * 100.0
        results.append(TrialResult(i + 1, trt, rec.c_trt_ms > trt, l_avg, err))
    return ValidationReport(rec.ci_ms, rec.c_trt_ms, rec.predicted_l_avg_ms, tuple(results))
