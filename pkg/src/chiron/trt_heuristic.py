"""Total Recovery Time (TRT) heuristic.

After a failure the job is down for the heartbeat timeout ``T`` and the
state restore ``R``; it then has to work off everything that arrived while
it was unavailable, plus everything that arrives while it catches up, and
so on. That catch-up is modelled as a decreasing geometric series whose
first term is the base duration ``D = E + T + R + W`` and whose ratio is
the capacity utilization ``U = I_avg / I_max``:

    a_n = D * U**(n - 1)
    S_n = D * (1 - U**n) / (1 - U)
    TRT = T + R + S_n

where ``n`` is the first term that drops below one millisecond. ``E``, the
span of events to reprocess, depends on where in the checkpoint cycle the
failure lands: 0, CI/2 and CI give the min, avg and max estimates.

All durations are float milliseconds.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import InvalidInput, OverUtilized

__all__ = [
    "Utilization",
    "RecoveryPhases",
    "TrtEstimate",
    "utilization",
    "term_count",
    "catchup_sum",
    "iterative_catchup_sum",
    "estimate_trt",
]

# Stop summing once a term is below this many milliseconds.
TERM_THRESHOLD_MS = 1.0


@dataclass(frozen=True)
class Utilization:
    value: float

    def __post_init__(self):
        v = self.value
        if not (v == v) or v < 0.0:
            raise InvalidInput(f"utilization must be >= 0, got {v!r}")
        if v >= 1.0:
            raise OverUtilized(f"utilization {v!r} >= 1: catch-up series diverges")

    def __float__(self) -> float:
        return float(self.value)


@dataclass(frozen=True)
class RecoveryPhases:
    """Durations of the phases a failure goes through, in ms."""

    reprocess_ms: float
    timeout_ms: float
    recovery_ms: float
    warmup_ms: float

    def __post_init__(self):
        for name in ("reprocess_ms", "timeout_ms", "recovery_ms", "warmup_ms"):
            v = getattr(self, name)
            if not (v >= 0.0):
                raise InvalidInput(f"{name} must be >= 0, got {v!r}")
        if self.timeout_ms <= 0.0:
            raise InvalidInput("timeout_ms must be > 0")

    @property
    def base_ms(self) -> float:
        """First term of the catch-up series, E + T + R + W."""
        return self.reprocess_ms + self.timeout_ms + self.recovery_ms + self.warmup_ms


@dataclass(frozen=True)
class TrtEstimate:
    trt_min_ms: float
    trt_avg_ms: float
    trt_max_ms: float
    # number of series terms summed for the (min, avg, max) cases
    terms_used: tuple[int, int, int]

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.trt_min_ms, self.trt_avg_ms, self.trt_max_ms)


def _as_u(u: Utilization | float) -> float:
    return u.value if isinstance(u, Utilization) else Utilization(float(u)).value


def utilization(i_avg: float, i_max: float) -> Utilization:
    """Fraction of the maximum processing capacity used under normal load."""
    if not (i_max > 0.0):
        raise InvalidInput(f"i_max must be > 0, got {i_max!r}")
    if not (i_avg >= 0.0):
        raise InvalidInput(f"i_avg must be >= 0, got {i_avg!r}")
    if i_avg >= i_max:
        raise OverUtilized(f"i_avg ({i_avg!r}) >= i_max ({i_max!r})")
    return Utilization(i_avg / i_max)


def term_count(base_ms: float, u: Utilization | float) -> int:
    """Smallest ``n >= 1`` whose term ``base_ms * u**(n-1)`` is below 1 ms."""
    if not (base_ms >= 0.0):
        raise InvalidInput(f"base_ms must be >= 0, got {base_ms!r}")
    r = _as_u(u)
    n = 1
    while base_ms * r ** (n - 1) >= TERM_THRESHOLD_MS:
        n += 1
    return n


def catchup_sum(base_ms: float, u: Utilization | float, n: int) -> float:
    """Closed-form sum of the first ``n`` catch-up terms."""
    if n < 1:
        raise InvalidInput(f"n must be >= 1, got {n!r}")
    r = _as_u(u)
    if r == 0.0:
        return float(base_ms)
    return base_ms * (1.0 - r**n) / (1.0 - r)


def iterative_catchup_sum(base_ms: float, u: Utilization | float) -> tuple[float, int]:
    """Sum the catch-up terms one at a time until one drops below 1 ms.

    Returns ``(sum, n)`` where the ``n``-th term is the first one under the
    threshold (and is included in the sum). Independent of
    :func:`catchup_sum`; used to cross-check it.
    """
    r = _as_u(u)
    total = 0.0
    n = 0
    while True:
        n += 1
        term = base_ms * r ** (n - 1)
        total += term
        if term < TERM_THRESHOLD_MS:
            return total, n


def _trt_case(reprocess_ms, timeout_ms, recovery_ms, warmup_ms, u) -> tuple[float, int]:
    phases = RecoveryPhases(reprocess_ms, timeout_ms, recovery_ms, warmup_ms)
    d = phases.base_ms
    n = term_count(d, u)
    return timeout_ms + recovery_ms + catchup_sum(d, u, n), n


def estimate_trt(
    ci_ms: float,
    timeout_ms: float,
    recovery_ms: float,
    warmup_ms: float,
    u: Utilization | float,
) -> TrtEstimate:
    """Best, average and worst case TRT for a checkpoint interval.

    The failure is assumed to land right after a checkpoint (nothing to
    reprocess), half way through the interval, or just before the next
    checkpoint (a full interval to reprocess).
    """
    if not (ci_ms > 0.0):
        raise InvalidInput(f"ci_ms must be > 0, got {ci_ms!r}")
    u = Utilization(_as_u(u))
    lo, n_lo = _trt_case(0.0, timeout_ms, recovery_ms, warmup_ms, u)
    mid, n_mid = _trt_case(ci_ms / 2.0, timeout_ms, recovery_ms, warmup_ms, u)
    hi, n_hi = _trt_case(ci_ms, timeout_ms, recovery_ms, warmup_ms, u)
    return TrtEstimate(lo, mid, hi, (n_lo, n_mid, n_hi))
