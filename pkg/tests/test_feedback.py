import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autoscope.feedback import (
    FeedbackEvent,
    FeedbackPlan,
    SchmittTrigger,
    detect_crossings,
    events_to_jsonl,
    run_ferrobot,
    wall_positions,
)
from autoscope.sample import gen_domain_phantom
from autoscope.scope import ScanPath, ScopeSession, plan_path

BAND = SchmittTrigger(high=0.5, low=-0.5)


def _window(sample):
    ex, ey = sample.grid.extent
    return (0.0, 0.0, ex, ey)


def _raster(sample, rows=None):
    g = sample.grid
    return plan_path("raster", _window(sample), nx=g.width, ny=rows or g.height, dwell=1e-3)


def _half_sample(n=16):
    """Left half -1, right half +1: one rising wall at column n // 2 on every row."""
    s = gen_domain_phantom(n, n, 100.0, "stripes", 0)
    s.polarization.values[:] = -1.0
    s.polarization.values[:, n // 2:] = 1.0
    return s


# --- trigger ----------------------------------------------------------------------


class TestTrigger:
    def test_band_must_be_ordered(self):
        with pytest.raises(ValueError):
            SchmittTrigger(high=0.0, low=0.0)
        with pytest.raises(ValueError):
            SchmittTrigger(high=1.0, low=0.0, state="sideways")

    def test_inside_band_never_fires(self):
        hits, trig = detect_crossings([0.1, -0.4, 0.49, -0.49, 0.0], BAND)
        assert hits == []
        assert trig.state is None

    def test_clean_step(self):
        line = [-1.0] * 7 + [1.0] * 5
        hits, trig = detect_crossings(line, BAND)
        assert hits == [7]
        assert trig.state == "above"

    def test_line_starting_high_is_not_a_crossing(self):
        assert detect_crossings([1.0, 1.0, -1.0, 1.0], BAND)[0] == [3]

    def test_hysteresis_suppresses_chatter(self):
        # dips that stay above `low` do not re-arm the detector
        line = [-1, 1, 0.2, 0.9, -0.3, 1.0, -0.6, 0.7]
        assert detect_crossings(line, BAND)[0] == [1, 7]

    def test_state_carries_across_lines(self):
        _, trig = detect_crossings([-1.0, -1.0], BAND)
        hits, _ = detect_crossings([1.0, 1.0], trig)
        assert hits == [0]

    def test_empty_line(self):
        with pytest.raises(ValueError):
            detect_crossings([], BAND)

    @settings(max_examples=100)
    @given(st.lists(st.floats(-3, 3), min_size=1, max_size=60))
    def test_crossings_follow_low_then_high(self, values):
        hits, _ = detect_crossings(values, BAND)
        last = -1
        for i in hits:
            assert values[i] >= BAND.high
            assert any(v <= BAND.low for v in values[last + 1:i])
            last = i

    def test_noisy_wall_localization(self):
        """Step of height 2 under noise sigma 0.4 (signal-to-noise 5)."""
        n, hits_ok = 64, 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            wall = int(rng.integers(8, n - 8))
            line = np.where(np.arange(n) >= wall, 1.0, -1.0) + rng.normal(0, 0.4, n)
            hits, _ = detect_crossings(line, BAND)
            hits_ok += bool(hits) and abs(hits[0] - wall) <= 1
        assert hits_ok >= 95

    def test_wall_positions_per_row(self):
        img = np.array([[-1, -1, 1, 1], [-1, 1, 1, 1], [1, 1, 1, 1]], dtype=float)
        assert wall_positions(img, BAND) == [[2], [1], []]


# --- plan and events ------------------------------------------------------------------


class TestPlan:
    def test_invariants(self):
        with pytest.raises(ValueError):
            FeedbackPlan(BAND, ((6.0, 1.0),), per_line_limit=0)
        with pytest.raises(ValueError):
            FeedbackPlan(BAND, ())

    def test_event_jsonl_roundtrip(self):
        ev = FeedbackEvent(0.5, 3, 7, (1.5, 2.5), [(6.0, 1.0)], [(3, 7)])
        line = events_to_jsonl([ev])
        assert set(json.loads(line)) == {"t_sim", "line", "index", "pos", "pulse", "flips"}
        assert FeedbackEvent.from_dict(json.loads(line)) == ev


# --- closed loop ------------------------------------------------------------------------


class TestRunFerrobot:
    def test_constant_sample_no_triggers(self):
        s = _half_sample()
        s.polarization.values[:] = 1.0
        session = ScopeSession(s)
        events, obs = run_ferrobot(session, s, FeedbackPlan(BAND, ((6.0, 1.0),)), _raster(s))
        assert events == []
        assert len(obs) == 16 * 16
        assert session.ledger.totals()["decision"] == 0.0

    def test_single_wall_one_line(self):
        s = _half_sample()
        session = ScopeSession(s)
        plan = FeedbackPlan(BAND, ((-6.0, 1.0),), per_line_limit=4)
        events, _ = run_ferrobot(session, s, plan, _raster(s, rows=1))
        assert len(events) == 1
        ev = events[0]
        row = s.grid.to_pixel(ev.pos)[0]
        assert ev.index == 8
        assert s.grid.to_pixel(ev.pos) == (row, 8)
        assert ev.flips == [(row, 8)]
        assert s.polarization.values[row, 8] == -1.0
        assert np.sum(s.polarization.values[:, 8] == -1.0) == 1

    def test_freeform_path_rejected(self):
        s = _half_sample()
        path = ScanPath.from_points([[10.0, 10.0]], 1e-3, _window(s))
        with pytest.raises(ValueError):
            run_ferrobot(ScopeSession(s), s, FeedbackPlan(BAND, ((6.0, 1.0),)), path)

    def test_foreign_sample_rejected(self):
        s = _half_sample()
        with pytest.raises(ValueError):
            run_ferrobot(ScopeSession(s), s.copy(), FeedbackPlan(BAND, ((6.0, 1.0),)), _raster(s))

    def test_zero_dose_leaves_sample_identical(self):
        s = gen_domain_phantom(24, 24, 100.0, "mixed", 3, period=4)
        before = s.copy()
        events, _ = run_ferrobot(ScopeSession(s, seed=1), s, FeedbackPlan(BAND, ((6.0, 0.0), (-6.0, 0.0)), 3),
                                 _raster(s), noise_sigma=0.3, seed=2)
        assert events
        assert all(e.flips == [] for e in events)
        assert s.equals(before)

    def test_ledger_charges_per_trigger(self):
        s = _half_sample()
        session = ScopeSession(s)
        plan = FeedbackPlan(BAND, ((6.0, 1.0), (6.0, 1.0)), pulse_time=2e-3)
        events, _ = run_ferrobot(session, s, plan, _raster(s))
        totals = session.ledger.totals()
        assert len(events) == 16
        assert totals["decision"] == pytest.approx(16 * session.latency.decision_charge)
        assert totals["modify"] == pytest.approx(16 * 2 * 2e-3)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 1000), st.integers(1, 3), st.floats(0.0, 0.6))
    def test_limits_and_clock(self, seed, limit, noise):
        s = gen_domain_phantom(16, 16, 100.0, "stripes", seed % 7, period=2)
        session = ScopeSession(s, seed=seed)
        plan = FeedbackPlan(BAND, ((-6.0, 1.0),), per_line_limit=limit, radius=1.0)
        events, obs = run_ferrobot(session, s, plan, _raster(s), noise_sigma=noise, seed=seed)
        per_line = {}
        for e in events:
            per_line[e.line] = per_line.get(e.line, 0) + 1
        assert all(c <= limit for c in per_line.values())
        times = [e.t_sim for e in events]
        assert times == sorted(times)
        assert all(t <= session.clock for t in times)
        by_key = {(o.line, o.index): o.t_sim for o in obs}
        for e in events:
            assert by_key[(e.line, e.index)] <= e.t_sim

    def test_walls_move_with_the_pulse(self):
        """Negative pulses on rising walls grow the negative domain, pushing walls to larger x."""
        shifts = []
        for seed in range(20):
            s = gen_domain_phantom(32, 32, 100.0, "stripes", seed, period=6)
            before = wall_positions(s.polarization.values, BAND)
            plan = FeedbackPlan(BAND, ((-6.0, 1.0),), per_line_limit=8)
            run_ferrobot(ScopeSession(s, seed=seed), s, plan, _raster(s), noise_sigma=0.2, seed=seed)
            after = wall_positions(s.polarization.values, BAND)
            shifts.append(sum(sum(a) - sum(b) for a, b in zip(after, before) if len(a) == len(b)))
        assert sum(shifts) > 0
