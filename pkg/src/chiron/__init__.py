"""Checkpoint-interval tuning for checkpoint/rollback stream processing jobs.

Profile a job over a grid of checkpoint intervals, fit latency and
recovery-time curves, and pick the interval with the lowest latency that
still recovers within a user-given bound.
"""

from .errors import (
    ChironError,
    FitError,
    Infeasible,
    InvalidFailureSpec,
    InvalidInput,
    NotCaughtUp,
    OutOfDomain,
    OverUtilized,
    SchemaError,
    ZeroVariance,
)
from .modeling import ModelFamily, PolyModel, fit_family, fit_poly, predict
from .optimizer import QosConstraint, Recommendation, invert_availability, recommend
from .profiling import (
    GridSpec,
    ProfilingDataset,
    ProfilingRunMetrics,
    TrtDataPoint,
    derive_trt_points,
    make_grid,
    read_dataset,
    write_dataset,
)
from .trt_heuristic import (
    RecoveryPhases,
    TrtEstimate,
    Utilization,
    catchup_sum,
    estimate_trt,
    term_count,
    utilization,
)

__version__ = "0.1.0"
