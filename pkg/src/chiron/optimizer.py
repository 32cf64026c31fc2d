"""Pick the checkpoint interval that meets a recovery-time bound.

Larger intervals mean less checkpoint overhead and therefore lower
latency, but more events to replay after a failure. Inverting the chosen
availability curve at the bound gives the largest interval that still
satisfies it; the performance curve then predicts the latency there.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .errors import Infeasible, InvalidInput, OutOfDomain
from .modeling import ModelFamily, PolyModel, predict

CASES = ("min", "avg", "max")

# |c2| below this (in the domain-scaled basis) is treated as a straight line
LINEAR_EPS = 1e-12
# roots this close to a domain edge (relative to its width) count as inside
EDGE_RTOL = 1e-9


@dataclass(frozen=True)
class QosConstraint:
    c_trt_ms: float
    case_selector: str = "max"

    def __post_init__(self):
        if not (self.c_trt_ms > 0 and math.isfinite(self.c_trt_ms)):
            raise InvalidInput(f"c_trt_ms must be > 0, got {self.c_trt_ms!r}")
        if self.case_selector not in CASES:
            raise InvalidInput(f"case must be one of {CASES}, got {self.case_selector!r}")


@dataclass(frozen=True)
class Recommendation:
    ci_ms: float
    c_trt_ms: float
    predicted_l_avg_ms: float
    clamped: bool
    case_used: str

    def to_dict(self, family: ModelFamily | None = None) -> dict:
        d = {
            "ci_ms": self.ci_ms,
            "c_trt_ms": self.c_trt_ms,
            "predicted_l_avg_ms": self.predicted_l_avg_ms,
            "clamped": self.clamped,
            "case_used": self.case_used,
        }
        if family is not None:
            d["r_squared"] = family.r_squared()
        return d

    def to_json(self, family: ModelFamily | None = None) -> str:
        return json.dumps(self.to_dict(family), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str | bytes) -> "Recommendation":
        try:
            d = json.loads(text)
            rec = cls(
                float(d["ci_ms"]),
                float(d["c_trt_ms"]),
                float(d["predicted_l_avg_ms"]),
                bool(d["clamped"]),
                str(d["case_used"]),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise InvalidInput(f"bad recommendation JSON: {exc!r}") from None
        if rec.case_used not in CASES:
            raise InvalidInput(f"bad case_used {rec.case_used!r}")
        return rec


def _real_roots(c0: float, c1: float, c2: float, half_width: float) -> list[float]:
    if abs(c2) * half_width**2 < LINEAR_EPS:
        if c1 == 0.0:
            return []
        return [-c0 / c1]
    disc = c1 * c1 - 4.0 * c2 * c0
    if disc < 0.0:
        return []
    # cancellation-free form
    q = -0.5 * (c1 + math.copysign(math.sqrt(disc), c1))
    roots = [q / c2]
    if q != 0.0:
        roots.append(c0 / q)
    return sorted(set(roots))


def invert_availability(m: PolyModel, target: float) -> float:
    """CI inside the model domain where the availability curve equals ``target``.

    Of two in-domain roots the larger is returned.
    """
    if not target > 0:
        raise InvalidInput(f"target must be > 0, got {target!r}")
    if m.degree > 2:
        raise InvalidInput(f"only models of degree <= 2 can be inverted, got {m.degree}")
    c = list(m.coefficients) + [0.0] * (3 - len(m.coefficients))
    lo, hi = m.domain
    roots = _real_roots(c[0] - target, c[1], c[2], (hi - lo) / 2.0)
    if not roots:
        raise Infeasible(f"availability model never reaches {target!r} ms")
    tol = EDGE_RTOL * (hi - lo)
    inside = [min(max(r, lo), hi) for r in roots if lo - tol <= r <= hi + tol]
    if inside:
        return max(inside)
    nearest = min(roots, key=lambda r: min(abs(r - lo), abs(r - hi)))
    raise OutOfDomain(
        f"root(s) {roots} outside profiled domain [{lo}, {hi}]", nearest, (lo, hi)
    )


def recommend(family: ModelFamily, q: QosConstraint, clamp: bool = False) -> Recommendation:
    avail = family.availability(q.case_selector)
    clamped = False
    try:
        ci = invert_availability(avail, q.c_trt_ms)
    except OutOfDomain as exc:
        if not clamp:
            raise
        lo, hi = exc.domain
        ok = [e for e in (lo, hi) if avail(e) <= q.c_trt_ms]
        if not ok:
            raise OutOfDomain(
                f"{exc}; neither domain endpoint meets c_trt={q.c_trt_ms!r}",
                exc.nearest_root,
                exc.domain,
            ) from exc
        ci = min(ok, key=lambda e: abs(e - exc.nearest_root))
        clamped = True
    return Recommendation(
        ci_ms=ci,
        c_trt_ms=q.c_trt_ms,
        predicted_l_avg_ms=predict(family.perf, ci).value,
        clamped=clamped,
        case_used=q.case_selector,
    )
