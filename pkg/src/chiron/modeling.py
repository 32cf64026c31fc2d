"""Polynomial regression of latency and TRT against checkpoint interval."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from math import comb
from typing import NamedTuple, Sequence

import numpy as np

from .errors import FitError, InvalidInput, ZeroVariance
from .profiling import ProfilingDataset, TrtDataPoint

PIPELINE_DEGREE = 2
MODEL_KEYS = ("p", "a_min", "a_avg", "a_max")


class Prediction(NamedTuple):
    value: float
    extrapolated: bool


@dataclass(frozen=True)
class PolyModel:
    """``value = c0 + c1*x + c2*x**2 + ...`` over raw CI milliseconds."""

    coefficients: tuple[float, ...]
    domain: tuple[float, float]
    r_squared: float

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        object.__setattr__(self, "domain", (float(self.domain[0]), float(self.domain[1])))
        if not self.coefficients:
            raise InvalidInput("a polynomial needs at least one coefficient")
        if not all(math.isfinite(c) for c in self.coefficients):
            raise InvalidInput(f"non-finite coefficients {self.coefficients}")
        lo, hi = self.domain
        if not lo < hi:
            raise InvalidInput(f"empty model domain [{lo}, {hi}]")
        if not self.r_squared <= 1.0:
            raise InvalidInput(f"r_squared must be <= 1, got {self.r_squared!r}")

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def __call__(self, x: float) -> float:
        acc = 0.0
        for c in reversed(self.coefficients):
            acc = acc * x + c
        return acc

    def to_dict(self) -> dict:
        return {
            "coefficients": list(self.coefficients),
            "domain": list(self.domain),
            "r_squared": self.r_squared,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolyModel":
        try:
            return cls(tuple(d["coefficients"]), tuple(d["domain"]), float(d["r_squared"]))
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise InvalidInput(f"bad model record: {exc!r}") from None


@dataclass(frozen=True)
class ModelFamily:
    perf: PolyModel
    avail_min: PolyModel
    avail_avg: PolyModel
    avail_max: PolyModel

    def __post_init__(self):
        doms = {m.domain for m in self.models().values()}
        if len(doms) != 1:
            raise InvalidInput(f"family models disagree on domain: {sorted(doms)}")

    @property
    def domain(self) -> tuple[float, float]:
        return self.perf.domain

    def models(self) -> dict[str, PolyModel]:
        return {
            "p": self.perf,
            "a_min": self.avail_min,
            "a_avg": self.avail_avg,
            "a_max": self.avail_max,
        }

    def availability(self, case: str) -> PolyModel:
        try:
            return {"min": self.avail_min, "avg": self.avail_avg, "max": self.avail_max}[case]
        except KeyError:
            raise InvalidInput(f"case must be one of min, avg, max; got {case!r}") from None

    def r_squared(self) -> dict[str, float]:
        return {k: m.r_squared for k, m in self.models().items()}

    def to_json(self) -> str:
        doc = {k: m.to_dict() for k, m in self.models().items()}
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str | bytes) -> "ModelFamily":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidInput(f"malformed model JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise InvalidInput("model JSON must be an object")
        missing = [k for k in MODEL_KEYS if k not in doc]
        if missing:
            raise InvalidInput(f"model JSON missing key(s) {missing}")
        m = {k: PolyModel.from_dict(doc[k]) for k in MODEL_KEYS}
        return cls(m["p"], m["a_min"], m["a_avg"], m["a_max"])


def _unscale(scaled: np.ndarray, mean: float, std: float) -> list[float]:
    """Map coefficients in ``t = (x - mean)/std`` back to powers of raw ``x``."""
    deg = len(scaled) - 1
    raw = [0.0] * (deg + 1)
    # ((x - m)/s)**k = s**-k * sum_j C(k,j) x**j (-m)**(k-j)
    for k, bk in enumerate(scaled):
        f = bk / std**k
        for j in range(k + 1):
            raw[j] += f * comb(k, j) * (-mean) ** (k - j)
    return raw


def fit_poly(xs: Sequence[float], ys: Sequence[float], degree: int = PIPELINE_DEGREE) -> PolyModel:
    """Least-squares polynomial fit with R^2.

    The solve runs on standardised x and the coefficients are returned in
    the raw-x basis. Constant ``ys`` give an exact constant model with
    R^2 = 1.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.ndim != 1 or x.shape != y.shape:
        raise FitError("xs and ys must be 1-d and of equal length")
    if degree < 0:
        raise FitError(f"degree must be >= 0, got {degree}")
    if len(x) < degree + 1:
        raise FitError(f"need at least {degree + 1} points for degree {degree}, got {len(x)}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise FitError("xs and ys must be finite")
    if len(np.unique(x)) != len(x):
        raise FitError("xs must be pairwise distinct")

    domain = (float(x.min()), float(x.max()))
    if np.all(y == y[0]):
        return PolyModel((float(y[0]),) + (0.0,) * degree, domain, 1.0)

    mean = float(x.mean())
    std = float(x.std())
    t = (x - mean) / std
    vander = np.vander(t, degree + 1, increasing=True)
    scaled, *_ = np.linalg.lstsq(vander, y, rcond=None)
    resid = y - vander @ scaled
    ss_res = float(resid @ resid)
    dev = y - y.mean()
    ss_tot = float(dev @ dev)
    if ss_tot == 0.0:
        # only reachable when the spread underflows
        if ss_res != 0.0:
            raise ZeroVariance("targets have zero variance but a non-zero residual")
        r2 = 1.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return PolyModel(tuple(_unscale(scaled, mean, std)), domain, min(r2, 1.0))


def predict(m: PolyModel, x: float) -> Prediction:
    lo, hi = m.domain
    return Prediction(m(x), not (lo <= x <= hi))


def fit_family(ds: ProfilingDataset, points: Sequence[TrtDataPoint]) -> ModelFamily:
    """Fit latency P(CI) and the min/avg/max availability curves A(CI)."""
    if len(ds.runs) != len(points):
        raise FitError(f"{len(ds.runs)} runs but {len(points)} TRT points")
    ci = ds.ci_values
    if [p.ci_ms for p in points] != ci:
        raise FitError("TRT points do not match the dataset's CI values")
    targets = {
        "p": ds.column("l_avg_ms"),
        "a_min": [p.estimate.trt_min_ms for p in points],
        "a_avg": [p.estimate.trt_avg_ms for p in points],
        "a_max": [p.estimate.trt_max_ms for p in points],
    }
    fitted = {}
    for key, ys in targets.items():
        try:
            fitted[key] = fit_poly(ci, ys, PIPELINE_DEGREE)
        except FitError as exc:
            raise FitError(str(exc), model=key) from exc
    return ModelFamily(fitted["p"], fitted["a_min"], fitted["a_avg"], fitted["a_max"])
