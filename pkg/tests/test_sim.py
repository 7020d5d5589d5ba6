"""Environment dynamics: scan paths, the detection oracle, alert lifecycle,
schedules, and the split-window determinism contract."""
import numpy as np
import pytest

from dronesar.scenarios import OracleConfig, build_scenario, build_tiny_scenario, initial_state
from dronesar.sim import (
    ClockOverflow,
    DetectionOracle,
    advance_inplace,
    area_scan_time,
    catch_up,
    coverage_fraction,
    footprint_rect,
    lawnmower_stops,
    step,
    stop_cost,
    travel_time,
)
from dronesar.world import (
    AlertKind,
    AreaLevel,
    CellRect,
    Decision,
    DroneStatus,
    EXPIRED,
    HandleAlert,
    ScanParams,
    apply_action,
)


def oracle(seed=0, **cfg):
    return DetectionOracle(OracleConfig(**cfg), np.random.default_rng(seed))


class ScriptedOracle(DetectionOracle):
    """Deterministic stand-in: scripted draws instead of sampling. Target
    draws repeat the given constant; clutter scripts pop left to right and
    fall back to quiet."""

    def __init__(self, target_conf=0.0, clutter=(), clutter_conf=()):
        super().__init__(OracleConfig(), np.random.default_rng(0))
        self._target = target_conf
        self._clutter = list(clutter)
        self._conf = list(clutter_conf)

    def target_confidence(self, params):
        return self._target

    def clutter_count(self, level):
        return self._clutter.pop(0) if self._clutter else 0

    def clutter_confidence(self):
        return self._conf.pop(0) if self._conf else 0.0

    def clutter_cell(self, rect):
        return rect.row0, rect.col0


def scanning_setup(target_cells=((11, 11), (11, 10), (10, 11)), lc=0.4, hc=0.8):
    """Tiny state surgery: drone 0 parked on the first stop of area 0 with
    a 2-cell footprint (altitude 20, velocity 5), everything else idle."""
    scenario = build_tiny_scenario(0)
    state = initial_state(scenario)
    state.params[AreaLevel.LOW] = ScanParams(lc=lc, hc=hc, altitude=20.0, velocity=5.0)
    state.sub_areas[0].level = AreaLevel.LOW
    for t, (r, c) in zip(state.targets, target_cells):
        t.row, t.col = r, c
    d = state.drones[0]
    d.queue = [0]
    d.status = DroneStatus.FLYING
    d.x, d.y = 10.0, 10.0  # center of the first 2x2 footprint
    return scenario, state


# ---------------------------------------------------------------------------
# scan geometry
# ---------------------------------------------------------------------------


def test_lawnmower_footprint_one_visits_every_cell_serpentine():
    stops = lawnmower_stops(CellRect(0, 0, 2, 3), fp=1)
    assert stops == [(0, 0), (0, 1), (0, 2), (1, 2), (1, 1), (1, 0)]


def test_lawnmower_single_cell():
    assert lawnmower_stops(CellRect(4, 7, 1, 1), fp=1) == [(4, 7)]


def test_lawnmower_4x4_footprint_2_covers_all_cells():
    rect = CellRect(0, 0, 4, 4)
    stops = lawnmower_stops(rect, fp=2)
    assert len(stops) == 4
    covered = set()
    for r0, c0 in stops:
        covered.update((r, c) for r in range(r0, r0 + 2) for c in range(c0, c0 + 2))
    assert covered == set(rect.cells())


@pytest.mark.parametrize("rows,cols,fp", [(6, 6, 2), (5, 7, 3), (4, 4, 8), (10, 3, 4)])
def test_lawnmower_covers_without_gaps(rows, cols, fp):
    # stride == footprint, trailing blocks shift flush, so the union of
    # footprints is exactly the rect even when fp does not divide the extent
    rect = CellRect(2, 1, rows, cols)
    covered = set()
    for r0, c0 in lawnmower_stops(rect, fp):
        covered.update(
            (r, c)
            for r in range(r0, min(r0 + fp, rect.row0 + rows))
            for c in range(c0, min(c0 + fp, rect.col0 + cols))
        )
    assert covered == set(rect.cells())


def test_footprint_rect_clamped_to_grid():
    s = initial_state(build_tiny_scenario(0))
    rect = footprint_rect(s, (10, 10), fp=4)
    assert (rect.rows, rect.cols) == (2, 2)  # 12x12 grid


def test_scan_and_travel_times():
    params = ScanParams(lc=0.4, hc=0.8, altitude=20.0, velocity=5.0)
    # 4x4 area, footprint 2, 10 m cells, dwell 2 s: four stops, each
    # dwell 2 s plus a 20 m hop at 5 m/s
    assert stop_cost(params, fp=2, dwell=2.0, cell_size=10.0) == 6.0
    assert area_scan_time(CellRect(0, 0, 4, 4), params, dwell=2.0, cell_size=10.0) == 24.0
    assert travel_time((3.0, 4.0), (3.0, 4.0), 7.0) == 0.0
    assert travel_time((0, 0), (30, 40), 5.0) == 2 * travel_time((0, 0), (30, 40), 10.0)


# ---------------------------------------------------------------------------
# detection oracle
# ---------------------------------------------------------------------------


def test_target_mean_follows_altitude_velocity_penalties():
    o = oracle()
    assert o.target_mean(ScanParams(0.35, 0.75, 80.0, 10.0)) == pytest.approx(0.55)
    assert o.target_mean(ScanParams(0.40, 0.70, 60.0, 7.0)) == pytest.approx(0.69)
    assert o.target_mean(ScanParams(0.45, 0.65, 40.0, 4.0)) == pytest.approx(0.83)
    # gentlest flight profile saturates at the ceiling
    assert o.target_mean(ScanParams(0.4, 0.7, 20.0, 2.0)) == 0.95


def test_target_mean_clamped_to_floor():
    o = oracle(alt_coeff=0.008)
    assert o.target_mean(ScanParams(0.4, 0.7, 120.0, 15.0)) == 0.2


def test_oracle_deterministic_per_seed():
    a, b = oracle(9), oracle(9)
    p = ScanParams(0.4, 0.7, 60.0, 7.0)
    assert [a.target_confidence(p) for _ in range(20)] == [b.target_confidence(p) for _ in range(20)]
    assert [a.clutter_count(AreaLevel.HIGH) for _ in range(20)] == [
        b.clutter_count(AreaLevel.HIGH) for _ in range(20)
    ]


def test_survival_matches_empirical_frequency():
    o = oracle(3)
    p = ScanParams(0.40, 0.70, 60.0, 7.0)
    draws = np.array([o.target_confidence(p) for _ in range(100_000)])
    for thr in (0.5, 0.69, 0.8):
        assert o.p_target_ge(p, thr) == pytest.approx(float((draws >= thr).mean()), abs=0.01)
    assert o.p_target_ge(p, 0.0) == 1.0
    draws = np.array([o.clutter_confidence() for _ in range(100_000)])
    assert o.p_clutter_ge(0.5) == pytest.approx(float((draws >= 0.5).mean()), abs=0.01)


def test_clutter_rate_scales_with_difficulty():
    o = oracle(4, clutter_rate=0.3)
    n = 50_000
    for level, mult in ((AreaLevel.LOW, 1.0), (AreaLevel.HIGH, 4.0)):
        lam = 0.3 * mult
        mean = np.mean([o.clutter_count(level) for _ in range(n)])
        assert mean == pytest.approx(lam, abs=4 * np.sqrt(lam / n))


def test_confidences_stay_in_unit_interval():
    o = oracle(5)
    p = ScanParams(0.4, 0.7, 100.0, 12.0)
    for _ in range(1000):
        assert 0.0 <= o.target_confidence(p) <= 1.0
        assert 0.0 <= o.clutter_confidence() <= 1.0


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------


def test_step_is_value_semantic_and_quiet_without_work():
    scenario = build_tiny_scenario(0)
    s = initial_state(scenario)
    before = s.digest()
    s2, events = step(s, scenario, ScriptedOracle(), dt=10.0)
    assert s.digest() == before
    assert s2.clock == 10.0 and s2.sim_t == 10.0
    assert events == []  # idle drones, empty schedule


def test_step_guards():
    scenario = build_tiny_scenario(0)
    s = initial_state(scenario)
    with pytest.raises(ClockOverflow):
        step(s, scenario, ScriptedOracle(), dt=0.0)
    s.clock = s.duration
    with pytest.raises(ClockOverflow):
        step(s, scenario, ScriptedOracle(), dt=1.0)


def test_single_area_coverage_takes_exactly_scan_time():
    scenario, s = scanning_setup()
    params = s.params[AreaLevel.LOW]
    total = area_scan_time(s.sub_areas[0].rect, params, scenario.dwell_s, s.cell_size)
    assert total == 81.0  # 9 stops x (5 s dwell + 20 m hop at 5 m/s)
    advance_inplace(s, scenario, ScriptedOracle(), to_clock=total - 1)
    assert s.sub_areas[0].scanned_fraction == pytest.approx(8 / 9)
    advance_inplace(s, scenario, ScriptedOracle(), to_clock=total)
    assert s.sub_areas[0].scanned_fraction == 1.0
    assert s.drones[0].status is DroneStatus.IDLE  # queue drained
    assert coverage_fraction(s) == pytest.approx(0.25)


def test_point_mass_target_raises_high_alert():
    # forced by thresholds: a certain detection must stop the drone
    scenario, s = scanning_setup(target_cells=((0, 0), (11, 11), (11, 10)), hc=0.8)
    events = advance_inplace(s, scenario, ScriptedOracle(target_conf=1.0), to_clock=15.0)
    kinds = [e["type"] for e in events]
    assert "alert_raised" in kinds
    a = s.alerts[0]
    assert a.kind is AlertKind.DETECTION_HIGH
    assert a.confidence == 1.0
    assert a.cell == (0, 0) and a.open
    d = s.drones[0]
    assert d.status is DroneStatus.WAITING_ON_ALERT and d.alert_id == a.id


def test_waiting_drone_makes_no_progress_until_handled():
    scenario, s = scanning_setup(target_cells=((0, 0), (11, 11), (11, 10)))
    advance_inplace(s, scenario, ScriptedOracle(target_conf=1.0), to_clock=15.0)
    d = s.drones[0]
    frozen = (d.x, d.y, d.stop_index, s.sub_areas[0].scanned_fraction)
    advance_inplace(s, scenario, ScriptedOracle(target_conf=1.0), to_clock=40.0)
    assert (d.x, d.y, d.stop_index, s.sub_areas[0].scanned_fraction) == frozen

    s2 = apply_action(s, HandleAlert(0, Decision.APPROVE), elapsed=5.0)
    assert s2.targets[0].found
    assert s2.drones[0].status is DroneStatus.SCANNING  # plan intact, resumes
    advance_inplace(s2, scenario, ScriptedOracle(), to_clock=150.0)
    assert s2.sub_areas[0].scanned_fraction == 1.0


def test_mid_band_cue_investigates_then_expires():
    # one clutter cue at 0.5 with lc=0.4, hc=0.8: low alert with a timeout,
    # loiter never escalates, timeout closes it and scanning resumes
    scenario, s = scanning_setup()
    orc = ScriptedOracle(clutter=[1], clutter_conf=[0.5])
    advance_inplace(s, scenario, orc, to_clock=15.0)
    a = s.alerts[0]
    assert a.kind is AlertKind.DETECTION_LOW and a.confidence == 0.5
    assert a.timeout_at == pytest.approx(a.created_at + scenario.low_timeout_s)
    assert s.drones[0].status is DroneStatus.INVESTIGATING

    advance_inplace(s, scenario, orc, to_clock=a.timeout_at + 2.0)
    assert not a.open and a.resolution == EXPIRED
    assert s.history.false_negatives == 0  # clutter, not a missed target
    assert s.drones[0].investigation is None
    assert s.drones[0].status is DroneStatus.SCANNING
    advance_inplace(s, scenario, orc, to_clock=150.0)
    assert s.sub_areas[0].scanned_fraction == 1.0


def test_expired_true_cue_counts_false_negative():
    scenario, s = scanning_setup(target_cells=((0, 0), (11, 11), (11, 10)))
    orc = ScriptedOracle(target_conf=0.5)
    advance_inplace(s, scenario, orc, to_clock=60.0)
    a = s.alerts[0]
    assert a.kind is AlertKind.DETECTION_LOW and not a.open
    assert s.history.false_negatives == 1


def test_investigation_escalates_on_high_draw():
    scenario, s = scanning_setup()
    orc = ScriptedOracle(clutter=[1], clutter_conf=[0.5, 0.95])
    events = advance_inplace(s, scenario, orc, to_clock=30.0)
    assert "alert_escalated" in [e["type"] for e in events]
    a = s.alerts[0]
    assert len(s.alerts) == 1  # escalated in place, not reissued
    assert a.kind is AlertKind.DETECTION_HIGH
    assert a.confidence == 0.95 and a.timeout_at is None and a.open
    assert s.drones[0].status is DroneStatus.WAITING_ON_ALERT
    assert s.drones[0].investigation is None


def test_best_cue_wins_the_stop():
    # target and clutter in one footprint: only the strongest cue alerts
    scenario, s = scanning_setup(target_cells=((0, 0), (11, 11), (11, 10)))
    orc = ScriptedOracle(target_conf=0.9, clutter=[1], clutter_conf=[0.99])
    advance_inplace(s, scenario, orc, to_clock=15.0)
    assert len(s.alerts) == 1
    assert s.alerts[0].confidence == 0.99
    assert s.alerts[0].cell == (0, 0)  # ScriptedOracle pins clutter to the corner


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------


def test_loud_malfunction_raises_alert_and_stalls():
    scenario = build_tiny_scenario(0, malfunctions=[(5.0, 0, False)])
    s = initial_state(scenario)
    s.drones[0].queue = [0]
    s.drones[0].status = DroneStatus.FLYING
    events = advance_inplace(s, scenario, ScriptedOracle(), to_clock=10.0)
    assert [e["type"] for e in events if e["type"] == "alert_raised"]
    d = s.drones[0]
    assert d.status is DroneStatus.MALFUNCTIONING and not d.disabled
    a = s.alerts[0]
    assert a.kind is AlertKind.MALFUNCTION and a.drone_id == 0
    pos = (d.x, d.y)
    advance_inplace(s, scenario, ScriptedOracle(), to_clock=60.0)
    assert (d.x, d.y) == pos  # stalled until repaired

    s2 = apply_action(s, HandleAlert(0, Decision.REPAIR), elapsed=10.0)
    advance_inplace(s2, scenario, ScriptedOracle(), to_clock=100.0)
    assert s2.drones[0].status in (DroneStatus.SCANNING, DroneStatus.FLYING, DroneStatus.IDLE)
    assert (s2.drones[0].x, s2.drones[0].y) != pos


def test_silent_malfunction_stalls_without_alert():
    scenario = build_tiny_scenario(0, malfunctions=[(5.0, 1, True)])
    s = initial_state(scenario)
    s.drones[1].queue = [2]
    s.drones[1].status = DroneStatus.FLYING
    events = advance_inplace(s, scenario, ScriptedOracle(), to_clock=20.0)
    assert s.alerts == []
    assert [e["type"] for e in events] == ["malfunction_silent"]
    d = s.drones[1]
    assert d.disabled
    assert d.status is DroneStatus.FLYING  # the reported status lies
    pos = (d.x, d.y)
    advance_inplace(s, scenario, ScriptedOracle(), to_clock=60.0)
    assert (d.x, d.y) == pos


def test_intelligence_schedule_raises_alert():
    scenario = build_tiny_scenario(0, intel_times=(7.0,))
    s = initial_state(scenario)
    advance_inplace(s, scenario, ScriptedOracle(), to_clock=10.0)
    (a,) = s.alerts
    assert a.kind is AlertKind.INTELLIGENCE
    assert len(a.intel_area_ids) == 1
    assert a.intel_probability is not None and a.intel_note


# ---------------------------------------------------------------------------
# determinism
# ---------------------------------------------------------------------------


def busy_tiny():
    scenario = build_tiny_scenario(3, malfunctions=[(40.0, 0, False)], intel_times=(60.0,))
    s = initial_state(scenario)
    for d, queue in zip(s.drones, ([0, 1], [2, 3])):
        d.queue = list(queue)
        d.status = DroneStatus.FLYING
    return scenario, s


def test_identical_seeds_reproduce_runs_exactly():
    outs = []
    for _ in range(2):
        scenario, s = busy_tiny()
        events = advance_inplace(s, scenario, oracle(11), to_clock=200.0)
        outs.append((s.digest(), events))
    assert outs[0] == outs[1]


def test_split_windows_match_one_shot():
    scenario, one = busy_tiny()
    events_one = advance_inplace(one, scenario, oracle(11), to_clock=200.0)

    scenario2, split = busy_tiny()
    orc = oracle(11)
    events_split = []
    # uneven cuts on the whole-second grid, straddling both schedule entries
    for t in (1.0, 17.0, 40.0, 61.0, 93.0, 200.0):
        events_split += advance_inplace(split, scenario2, orc, to_clock=t)
    assert split.digest() == one.digest()
    assert events_split == events_one


def test_catch_up_is_value_semantic():
    scenario, s = busy_tiny()
    s.clock = 50.0  # clock moved by operator handling; dynamics owe 50 s
    before = s.digest()
    s2, events = catch_up(s, scenario, oracle(2))
    assert s.digest() == before
    assert s2.sim_t == 50.0 and events
