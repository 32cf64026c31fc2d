import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chiron.errors import InvalidFailureSpec, InvalidInput, NotCaughtUp, SchemaError
from chiron.modeling import ModelFamily, PolyModel
from chiron.optimizer import Recommendation
from chiron.profiling import GridSpec, make_grid
from chiron.simulator import (
    PHASES,
    FailureSpec,
    SimConfig,
    derive_seed,
    observed_trt_medians,
    profile_grid,
    reference_config,
    run,
    validate,
)
from chiron.trt_heuristic import estimate_trt

DATA = Path(__file__).parent / "data"


def cfg(**kw):
    base = dict(
        i_avg_eps=1000.0, i_max_eps=2000.0, ci_ms=10000.0, timeout_ms=5000.0,
        restore_ms=2000.0, warmup_ms=1000.0, base_latency_ms=100.0, overhead_coeff=1e6,
        duration_ms=100000.0,
    )
    base.update(kw)
    return SimConfig(**base)


def fluid_trt(i_avg, i_max, e, t, r, w):
    """Closed-form recovery time of the fluid model (no jitter).

    Backlog when processing resumes is i*(E+T+R); the ramp serves i_max*W/2
    while i*W more arrives; the rest drains at i_max - i. Assumes the
    backlog is still positive when the ramp ends.
    """
    i, m = i_avg / 1000.0, i_max / 1000.0
    left = i * (e + t + r + w) - m * w / 2.0
    assert left > 0
    return t + r + w + left / (m - i)


class TestRun:
    def test_no_failures(self):
        out = run(cfg())
        assert out.measured_l_avg_ms == 200.0
        assert out.measured_trt_ms == ()
        assert out.measured_r_avg_ms is None
        assert all(p == "checkpoint" for _, p in out.event_log)

    def test_failure_at_checkpoint_matches_fluid_oracle(self):
        out = run(cfg(), FailureSpec(at_ms=(20000,)))
        assert out.reprocess_ms == (0,)
        assert out.measured_trt_ms == (fluid_trt(1000, 2000, 0, 5000, 2000, 1000),)
        assert out.measured_trt_ms == (15000.0,)

    @pytest.mark.xfail(
        strict=True,
        reason="heuristic trt_min (~23000 ms) overestimates the fluid TRT at E=0 (15000 ms)",
    )
    def test_failure_at_checkpoint_within_heuristic_band(self):
        out = run(cfg(), FailureSpec(at_ms=(20000,)))
        est = estimate_trt(10000, 5000, 2000, 1000, 0.5)
        (trt,) = out.measured_trt_ms
        assert est.trt_min_ms <= trt <= est.trt_max_ms
        assert abs(trt - est.trt_min_ms) <= 0.15 * est.trt_min_ms

    def test_half_load_equals_ratio_first_series(self):
        # At U = 0.5 the ramp exactly pays for itself and the fluid TRT equals
        # T + R + sum_k D*U**k (first term D*U), i.e. the heuristic's series
        # scaled by U. The heuristic itself (first term D) is larger by about D.
        for e in (0, 2500, 7000):
            out = run(cfg(), FailureSpec(at_ms=(20000 + e,)))
            d = e + 8000
            assert out.measured_trt_ms[0] == pytest.approx(7000 + d * 0.5 / 0.5, abs=1)
            est = estimate_trt(10000, 5000, 2000, 1000, 0.5)
            assert out.measured_trt_ms[0] < est.trt_min_ms + e

    @settings(max_examples=40, deadline=None)
    @given(
        st.floats(100, 1500), st.floats(0, 9999), st.integers(100, 6000),
        st.integers(0, 4000), st.integers(0, 4000),
    )
    def test_fluid_oracle(self, i_avg, e, t, r, w):
        i_max = 2000.0
        c = cfg(i_avg_eps=i_avg, timeout_ms=t, restore_ms=r, warmup_ms=w, duration_ms=400000)
        e = int(e)
        i, m = i_avg / 1000, i_max / 1000
        if i * (e + t + r + w) - m * w / 2 <= 1.0:
            return
        out = run(c, FailureSpec(at_ms=(20000 + e,)))
        want = fluid_trt(i_avg, i_max, e, t, r, w)
        # 1 ms steps: drained within the step that crosses zero
        assert want - 1e-6 <= out.measured_trt_ms[0] <= want + 1 + 1e-6

    def test_deterministic(self):
        c = reference_config(ci_ms=12800.0, latency_noise_ms=5.0)
        spec = FailureSpec(count=3)
        assert run(c, spec) == run(c, spec)
        assert run(c, spec).to_json() == run(c, spec).to_json()

    def test_seed_changes_outcome(self):
        spec = FailureSpec(count=3)
        a = run(reference_config(seed=1), spec)
        b = run(reference_config(seed=2), spec)
        assert a.failure_times_ms != b.failure_times_ms

    def test_conservation(self):
        for spec in (FailureSpec.none(), FailureSpec(count=3), FailureSpec(at_ms=(5000, 300000))):
            out = run(reference_config(ci_ms=24600.0), spec)
            assert out.events_produced == pytest.approx(
                out.events_processed + out.backlog_end, rel=1e-12
            )

    def test_trt_lower_bound(self):
        out = run(reference_config(ci_ms=6900.0), FailureSpec(count=3))
        assert all(t >= 5000 + 2000 for t in out.measured_trt_ms)
        assert len(out.measured_trt_ms) == 3

    @pytest.mark.parametrize("jitter", [0.0, 0.05])
    def test_trt_non_decreasing_in_reprocess_span(self, jitter):
        c = cfg(ingress_jitter=jitter, seed=3, duration_ms=200000)
        trts = []
        for e in range(0, 10000, 500):
            out = run(c, FailureSpec(at_ms=(40000 + e,)))
            assert out.reprocess_ms == (e,)
            trts.append(out.measured_trt_ms[0])
        assert all(b >= a for a, b in zip(trts, trts[1:]))

    def test_failure_before_first_checkpoint_replays_from_start(self):
        out = run(cfg(), FailureSpec(at_ms=(3000,)))
        assert out.reprocess_ms == (3000,)

    def test_overlap_rejected(self):
        with pytest.raises(InvalidFailureSpec, match="overlaps"):
            run(cfg(), FailureSpec(at_ms=(20000, 25000)))

    @pytest.mark.parametrize("at", [(-1,), (100000,), (30000, 30000)])
    def test_bad_instants(self, at):
        with pytest.raises(InvalidFailureSpec):
            run(cfg(), FailureSpec(at_ms=at))

    def test_not_caught_up(self):
        with pytest.raises(NotCaughtUp):
            run(cfg(duration_ms=25000), FailureSpec(at_ms=(20000,)))

    def test_event_log(self):
        out = run(cfg(), FailureSpec(at_ms=(20000,)))
        fails = [(t, p) for t, p in out.event_log if p != "checkpoint"]
        assert fails == [
            (20000, "fail"), (25000, "detect"), (27000, "restore"),
            (28000, "maximize"), (35000, "equalize"),
        ]
        # a checkpoint due while the job is down does not complete
        cks = [t for t, p in out.event_log if p == "checkpoint"]
        assert 20000 in cks and 30000 in cks and 40000 in cks
        assert [t for t, _ in out.event_log] == sorted(t for t, _ in out.event_log)
        lines = out.event_log_csv().splitlines()
        assert lines[0] == "t_ms,phase"
        assert {l.split(",")[1] for l in lines[1:]} <= set(PHASES)

    def test_checkpoint_skipped_while_down(self):
        out = run(cfg(), FailureSpec(at_ms=(18000,)))
        cks = [t for t, p in out.event_log if p == "checkpoint"]
        assert 20000 not in cks  # 18000 + 7000 down covers the 20000 boundary

    def test_latency_filter(self):
        out = run(cfg(latency_noise_ms=50.0, seed=9))
        # dropping the top 0.1% pulls a symmetric noise mean just below 200
        assert 195.0 < out.measured_l_avg_ms < 200.0

    def test_latency_excludes_recovery(self):
        a = run(cfg(), FailureSpec(at_ms=(20000,)))
        assert a.measured_l_avg_ms == pytest.approx(200.0)

    def test_outcome_json(self):
        out = run(cfg(), FailureSpec(at_ms=(20000,)))
        doc = json.loads(out.to_json())
        assert doc["measured_trt_ms"] == [15000.0]
        assert doc["measured_r_avg_ms"] == 2000.0 and doc["measured_w_avg_ms"] == 1000.0


class TestConfig:
    def test_from_dict_round_trip(self):
        c = reference_config()
        assert SimConfig.from_dict(c.to_dict()) == c

    def test_unknown_field(self):
        d = reference_config().to_dict()
        d["bogus"] = 1
        with pytest.raises(SchemaError, match="bogus"):
            SimConfig.from_dict(d)

    def test_missing_field(self):
        d = reference_config().to_dict()
        del d["ci_ms"]
        with pytest.raises(SchemaError):
            SimConfig.from_dict(d)

    @pytest.mark.parametrize(
        "kw",
        [
            dict(i_avg_eps=2000.0),
            dict(ci_ms=0.0),
            dict(timeout_ms=0.0),
            dict(restore_ms=-1.0),
            dict(ingress_jitter=float("nan")),
            dict(seed=1.5),
            dict(ci_ms="10"),
        ],
    )
    def test_invariants(self, kw):
        with pytest.raises(InvalidInput):
            cfg(**kw)


class TestFailureSpec:
    def test_parse_instants(self):
        spec = FailureSpec.from_dict({"injections": [{"at_ms": 10}, {"at_ms": 2000.5}]})
        assert spec.at_ms == (10.0, 2000.5)

    @pytest.mark.parametrize(
        "doc",
        [
            {"injections": {"count": 3, "spacing": "equally_spaced"}},
            {"injections": [{"count": 3, "spacing": "equally_spaced"}]},
        ],
    )
    def test_parse_count(self, doc):
        spec = FailureSpec.from_dict(doc)
        assert spec.count == 3 and spec.spacing == "equally_spaced"
        assert FailureSpec.from_dict(spec.to_dict()) == spec

    @pytest.mark.parametrize(
        "doc",
        [
            {},
            {"injections": 3},
            {"injections": [{"at": 1}]},
            {"injections": [{"at_ms": "1"}]},
            {"injections": {"count": 2, "spacing": "bursty"}},
            {"injections": {"count": -1}},
        ],
    )
    def test_bad(self, doc):
        with pytest.raises(InvalidInput):
            FailureSpec.from_dict(doc)

    def test_equally_spaced(self):
        out = run(cfg(duration_ms=400000), FailureSpec(count=3, spacing="equally_spaced"))
        assert out.failure_times_ms == (100000, 200000, 300000)

    def test_uniform_random_within_slots(self):
        c = reference_config(ci_ms=30500.0)
        out = run(c, FailureSpec(count=3))
        for j, t in enumerate(out.failure_times_ms):
            start = j * 200000
            assert start <= t < start + 30500


class TestSeeds:
    def test_stable_and_distinct(self):
        seeds = [derive_seed(42, i) for i in range(1000)]
        assert len(set(seeds)) == 1000
        assert seeds == [derive_seed(42, i) for i in range(1000)]
        assert all(0 <= s < 2**64 for s in seeds)

    def test_known_value(self):
        # pinned so datasets stay reproducible across releases
        assert derive_seed(0, 0) == 0xA706DD2F4D197E6F


class TestProfileGrid:
    def test_reference_grid_shape(self):
        base = reference_config(ingress_jitter=0.0)
        grid = make_grid(GridSpec(1000, 60000, 11))
        ds, outs = profile_grid(base, grid, 3, 2)
        assert len(ds) == 11 and len(outs) == 11 and all(len(o) == 2 for o in outs)
        l = ds.column("l_avg_ms")
        assert all(b < a for a, b in zip(l, l[1:]))
        assert all(r.timeout_ms == base.timeout_ms for r in ds.runs)

    def test_single_repeat_is_identity(self):
        base = reference_config(latency_noise_ms=3.0)
        grid = [1000.0, 20000.0, 40000.0]
        ds, outs = profile_grid(base, grid, 2, 1)
        for run_metrics, (out,), ci in zip(ds.runs, outs, grid):
            assert run_metrics == out.to_run_metrics(ci, base.timeout_ms)

    @pytest.mark.parametrize("grid", [[], [1000.0, 1000.0, 2000.0], [2000.0, 1000.0, 3000.0]])
    def test_bad_grid(self, grid):
        with pytest.raises(InvalidInput):
            profile_grid(reference_config(), grid, 1, 1)

    def test_needs_failures(self):
        with pytest.raises(InvalidInput):
            profile_grid(reference_config(), [1000.0, 2000.0, 3000.0], 0, 1)

    def test_observed_medians(self):
        grid = [1000.0, 20000.0, 40000.0]
        _, outs = profile_grid(reference_config(), grid, 3, 3)
        med = observed_trt_medians(grid, outs)
        assert [c for c, _ in med] == grid
        for (_, m), group in zip(med, outs):
            assert m == np.median([t for o in group for t in o.measured_trt_ms])

    def test_golden_dataset(self):
        from chiron.profiling import write_dataset

        ds, _ = profile_grid(reference_config(), make_grid(GridSpec(1000, 60000, 11)), 3, 5)
        assert write_dataset(ds) == (DATA / "reference_dataset.csv").read_bytes()


def flat_family(l_avg=200.0, trt=(1e5, 1e5, 1e5)):
    dom = (1000.0, 60000.0)
    return ModelFamily(
        PolyModel((l_avg,), dom, 1.0),
        *(PolyModel((v,), dom, 1.0) for v in trt),
    )


class TestValidate:
    def test_zero_trials(self):
        rec = Recommendation(10000.0, 1e5, 200.0, False, "max")
        rep = validate(flat_family(), rec, cfg(), 0)
        assert rep.trials == ()
        assert rep.to_csv() == "trial,actual_trt_s,constraint_satisfied,actual_l_avg_ms,percent_error\n"

    def test_exact_prediction_has_zero_error(self):
        rec = Recommendation(10000.0, 1e5, 200.0, False, "max")
        rep = validate(flat_family(), rec, cfg(duration_ms=200000), 3)
        assert [t.percent_error for t in rep.trials] == [0.0, 0.0, 0.0]
        assert rep.all_satisfied
        assert len(rep.to_csv().splitlines()) == 4

    def test_constraint_flag(self):
        rec = Recommendation(10000.0, 16000.0, 200.0, False, "max")
        rep = validate(flat_family(), rec, cfg(duration_ms=200000), 5)
        for t in rep.trials:
            assert t.constraint_satisfied == (16000.0 > t.measured_trt_ms)

    def test_percent_error_relative_to_prediction(self):
        rec = Recommendation(10000.0, 1e5, 250.0, False, "max")
        (t,) = validate(flat_family(), rec, cfg(), 1).trials
        assert t.percent_error == pytest.approx(20.0)

    def test_ci_outside_domain(self):
        rec = Recommendation(500.0, 1e5, 200.0, False, "max")
        with pytest.raises(InvalidInput):
            validate(flat_family(), rec, cfg(), 1)
