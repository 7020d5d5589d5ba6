"""Environment dynamics: movement, lawnmower scanning, the detection
oracle, scheduled malfunctions/intelligence, and alert timeouts.

Scan plans materialize when a drone enters an area: the footprint (and so
the stop grid) is frozen for that pass, while threshold/velocity changes
take effect immediately. Parameter changes reshape coverage from the next
area entry on.

All dynamics run in whole-ish sub-steps of at most one second so that
scheduled events, timeouts, and multi-drone interleaving stay deterministic
regardless of how large a window is being caught up.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .world import (
    Alert,
    AlertKind,
    AreaLevel,
    CellRect,
    Drone,
    DroneStatus,
    Investigation,
    MissionState,
    ScanParams,
    SubArea,
    WorldError,
    expire_alert,
    resume_after_interruption,
)
from .scenarios import OracleConfig, Scenario


class ClockOverflow(WorldError):
    pass


EPS = 1e-9


# ---------------------------------------------------------------------------
# detection oracle
# ---------------------------------------------------------------------------


class DetectionOracle:
    """Draws detection confidences and clutter cues.

    True targets draw from a Beta whose mean degrades with altitude and
    velocity; clutter cues arrive Poisson per stop (rate scaled by area
    difficulty) with their own Beta confidence. The closed-form survival
    probability is exposed for planners that need P(conf >= threshold)
    without consuming randomness.
    """

    def __init__(self, cfg: OracleConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng

    def target_mean(self, params: ScanParams) -> float:
        c = self.cfg
        mu = c.base_conf - c.alt_coeff * (params.altitude - 20.0) - c.vel_coeff * (params.velocity - 2.0)
        return min(max(mu, c.conf_floor), c.conf_ceil)

    def _target_ab(self, params: ScanParams) -> tuple[float, float]:
        mu = self.target_mean(params)
        k = self.cfg.target_concentration
        return mu * k, (1.0 - mu) * k

    def target_confidence(self, params: ScanParams) -> float:
        a, b = self._target_ab(params)
        return float(self.rng.beta(a, b))

    def p_target_ge(self, params: ScanParams, threshold: float) -> float:
        a, b = self._target_ab(params)
        return float(stats.beta.sf(threshold, a, b))

    def clutter_count(self, level) -> int:
        lam = self.cfg.clutter_rate * self.cfg.clutter_mult[level]
        return int(self.rng.poisson(lam))

    def clutter_confidence(self) -> float:
        mu = self.cfg.clutter_conf_mean
        k = self.cfg.clutter_concentration
        return float(self.rng.beta(mu * k, (1.0 - mu) * k))

    def p_clutter_ge(self, threshold: float) -> float:
        mu = self.cfg.clutter_conf_mean
        k = self.cfg.clutter_concentration
        return float(stats.beta.sf(threshold, mu * k, (1.0 - mu) * k))

    def clutter_cell(self, rect: CellRect) -> tuple[int, int]:
        r = int(self.rng.integers(rect.row0, rect.row0 + rect.rows))
        c = int(self.rng.integers(rect.col0, rect.col0 + rect.cols))
        return r, c


# ---------------------------------------------------------------------------
# geometry / time helpers
# ---------------------------------------------------------------------------


def _block_starts(extent: int, fp: int) -> list[int]:
    if extent <= fp:
        return [0]
    starts = list(range(0, extent - fp + 1, fp))
    if starts[-1] != extent - fp:
        starts.append(extent - fp)  # final block shifted flush, overlapping
    return starts


def lawnmower_stops(rect: CellRect, fp: int) -> list[tuple[int, int]]:
    """Serpentine stop grid over `rect` with stride == footprint side, so
    coverage is gap-free. Stops are the top-left cells of footprint blocks."""
    row_starts = _block_starts(rect.rows, fp)
    col_starts = _block_starts(rect.cols, fp)
    stops = []
    for i, rs in enumerate(row_starts):
        cols = col_starts if i % 2 == 0 else list(reversed(col_starts))
        for cs in cols:
            stops.append((rect.row0 + rs, rect.col0 + cs))
    return stops


def footprint_rect(state: MissionState, stop: tuple[int, int], fp: int) -> CellRect:
    r0, c0 = stop
    r0 = max(0, min(r0, state.rows - 1))
    c0 = max(0, min(c0, state.cols - 1))
    return CellRect(r0, c0, min(fp, state.rows - r0), min(fp, state.cols - c0))


def stop_cost(params: ScanParams, fp: int, dwell: float, cell_size: float) -> float:
    """Seconds per scan stop: dwell plus the hop to the next stop."""
    return dwell + fp * cell_size / params.velocity


def area_scan_time(rect: CellRect, params: ScanParams, dwell: float, cell_size: float) -> float:
    fp = params.footprint_cells(cell_size)
    n = len(_block_starts(rect.rows, fp)) * len(_block_starts(rect.cols, fp))
    return n * stop_cost(params, fp, dwell, cell_size)


def travel_time(from_xy: tuple[float, float], to_xy: tuple[float, float], velocity: float) -> float:
    return math.hypot(to_xy[0] - from_xy[0], to_xy[1] - from_xy[1]) / velocity


def coverage_fraction(state: MissionState) -> float:
    total = sum(a.rect.n_cells for a in state.sub_areas)
    done = sum(a.scanned_fraction * a.rect.n_cells for a in state.sub_areas)
    return done / total if total else 0.0


def _stop_center_xy(state: MissionState, stop: tuple[int, int], fp: int) -> tuple[float, float]:
    rect = footprint_rect(state, stop, fp)
    return rect.center_xy(state.cell_size)


def _drone_velocity(state: MissionState, drone: Drone) -> float:
    head = drone.current_area()
    if head is not None:
        return state.params[state.sub_areas[head].level].velocity
    return state.params[AreaLevel.MEDIUM].velocity


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------


def _raise_alert(state: MissionState, events: list, t: float, **kw) -> Alert:
    alert = Alert(id=len(state.alerts), created_at=t, **kw)
    state.alerts.append(alert)
    events.append({"t": t, "type": "alert_raised", "alert": alert.to_dict()})
    return alert


def _fire_malfunction(state: MissionState, events: list, t: float, drone_id: int, silent: bool) -> None:
    d = state.drones[drone_id]
    if silent:
        d.disabled = True
        events.append({"t": t, "type": "malfunction_silent", "drone_id": drone_id})
        return
    d.status = DroneStatus.MALFUNCTIONING
    d.investigation = None
    alert = _raise_alert(
        state, events, t,
        kind=AlertKind.MALFUNCTION, drone_id=drone_id, area_id=d.current_area(),
    )
    d.alert_id = alert.id


def _fire_intel(state: MissionState, events: list, t: float, area_ids, probability, note) -> None:
    _raise_alert(
        state, events, t,
        kind=AlertKind.INTELLIGENCE,
        intel_area_ids=tuple(area_ids),
        intel_probability=probability,
        intel_note=note,
    )


def _scan_draws(
    state: MissionState,
    scenario: Scenario,
    oracle: DetectionOracle,
    drone: Drone,
    area: SubArea,
    rect: CellRect,
    events: list,
    t: float,
) -> None:
    """Detection draws for one completed stop; at most one alert (best cue)."""
    params = state.params[area.level]
    cues = []  # (confidence, is_target, cell)
    for tgt in state.targets:
        if not tgt.found and rect.contains(tgt.row, tgt.col):
            cues.append((oracle.target_confidence(params), True, (tgt.row, tgt.col)))
    for _ in range(oracle.clutter_count(area.level)):
        cues.append((oracle.clutter_confidence(), False, oracle.clutter_cell(rect)))
    if not cues:
        return
    conf, is_target, cell = max(cues, key=lambda c: c[0])
    if conf >= params.hc:
        alert = _raise_alert(
            state, events, t,
            kind=AlertKind.DETECTION_HIGH, drone_id=drone.id, area_id=area.id,
            confidence=conf, cell=cell, footprint=rect,
        )
        drone.status = DroneStatus.WAITING_ON_ALERT
        drone.alert_id = alert.id
    elif conf >= params.lc:
        alert = _raise_alert(
            state, events, t,
            kind=AlertKind.DETECTION_LOW, drone_id=drone.id, area_id=area.id,
            confidence=conf, cell=cell, footprint=rect,
            timeout_at=t + scenario.low_timeout_s,
        )
        drone.status = DroneStatus.INVESTIGATING
        drone.investigation = Investigation(
            alert_id=alert.id, cell=cell, is_target=is_target,
            stops_left=scenario.invest_stops,
        )


def _investigation_draw(
    state: MissionState,
    scenario: Scenario,
    oracle: DetectionOracle,
    drone: Drone,
    events: list,
    t: float,
) -> None:
    inv = drone.investigation
    area_id = drone.current_area()
    level = state.sub_areas[area_id].level if area_id is not None else None
    params = state.params[level] if level is not None else next(iter(state.params.values()))
    conf = oracle.target_confidence(params) if inv.is_target else oracle.clutter_confidence()
    drone.last_moved_at = t
    if conf >= params.hc:
        alert = state.alerts[inv.alert_id]
        alert.kind = AlertKind.DETECTION_HIGH
        alert.confidence = conf
        alert.timeout_at = None
        events.append({"t": t, "type": "alert_escalated", "alert": alert.to_dict()})
        drone.status = DroneStatus.WAITING_ON_ALERT
        drone.alert_id = alert.id
        drone.investigation = None
        return
    inv.stops_left -= 1
    if inv.stops_left <= 0:
        # loiter exhausted without escalation; the alert lives until its
        # timeout or an operator decision, scanning resumes now
        drone.status = DroneStatus.SCANNING
        drone.investigation = None


def _finish_area(state: MissionState, drone: Drone, events: list, t: float) -> None:
    area_id = drone.queue.pop(0)
    state.sub_areas[area_id].scanned_fraction = 1.0
    events.append({"t": t, "type": "area_complete", "area_id": area_id, "drone_id": drone.id})
    drone.stops = None
    drone.stop_index = 0
    drone.stop_progress = 0.0
    drone.travel_target = None
    drone.status = DroneStatus.FLYING if drone.queue else DroneStatus.IDLE


def _advance_drone(
    state: MissionState,
    scenario: Scenario,
    oracle: DetectionOracle,
    drone: Drone,
    h: float,
    events: list,
    t: float,
) -> None:
    cs = state.cell_size
    while h > EPS:
        if drone.disabled or drone.status in (
            DroneStatus.IDLE, DroneStatus.WAITING_ON_ALERT, DroneStatus.MALFUNCTIONING,
        ):
            return

        if drone.status in (DroneStatus.MANUAL, DroneStatus.FLYING):
            if drone.travel_target is None:
                if drone.status is DroneStatus.MANUAL:
                    return  # nothing to fly to; wait for orders
                if not drone.queue:
                    drone.status = DroneStatus.IDLE
                    return
                area = state.sub_areas[drone.queue[0]]
                if drone.stops is None:
                    params = state.params[area.level]
                    fp = params.footprint_cells(cs)
                    drone.stops = lawnmower_stops(area.rect, fp)
                    drone.footprint = fp
                    drone.stop_index = 0
                    drone.stop_progress = 0.0
                if drone.stop_index >= len(drone.stops):
                    _finish_area(state, drone, events, t)
                    continue
                drone.travel_target = _stop_center_xy(state, drone.stops[drone.stop_index], drone.footprint)
            v = _drone_velocity(state, drone)
            dx = drone.travel_target[0] - drone.x
            dy = drone.travel_target[1] - drone.y
            dist = math.hypot(dx, dy)
            reach = v * h
            if reach < dist - EPS:
                drone.x += dx / dist * reach
                drone.y += dy / dist * reach
                drone.last_moved_at = t
                return
            drone.x, drone.y = drone.travel_target
            drone.last_moved_at = t
            h -= dist / v if v > 0 else 0.0
            drone.travel_target = None
            if drone.status is DroneStatus.MANUAL:
                resume_after_interruption(drone)
                if drone.status is DroneStatus.SCANNING and drone.stops:
                    # fly back to the interrupted stop before scanning on
                    drone.status = DroneStatus.FLYING
                    drone.travel_target = _stop_center_xy(
                        state, drone.stops[min(drone.stop_index, len(drone.stops) - 1)], drone.footprint
                    )
            else:
                drone.status = DroneStatus.SCANNING

        elif drone.status is DroneStatus.SCANNING:
            if not drone.queue:
                drone.status = DroneStatus.IDLE
                return
            if drone.stops is None:
                drone.status = DroneStatus.FLYING
                continue
            if drone.stop_index >= len(drone.stops):
                _finish_area(state, drone, events, t)
                continue
            area = state.sub_areas[drone.queue[0]]
            params = state.params[area.level]
            cost = stop_cost(params, drone.footprint, scenario.dwell_s, cs)
            need = cost - drone.stop_progress
            if h < need - EPS:
                drone.stop_progress += h
                return
            h -= need
            drone.stop_progress = 0.0
            stop = drone.stops[drone.stop_index]
            drone.x, drone.y = _stop_center_xy(state, stop, drone.footprint)
            drone.last_moved_at = t
            drone.stop_index += 1
            area.scanned_fraction = max(area.scanned_fraction, drone.stop_index / len(drone.stops))
            rect = footprint_rect(state, stop, drone.footprint)
            _scan_draws(state, scenario, oracle, drone, area, rect, events, t)
            if drone.stop_index >= len(drone.stops) and drone.status is DroneStatus.SCANNING:
                _finish_area(state, drone, events, t)

        elif drone.status is DroneStatus.INVESTIGATING:
            inv = drone.investigation
            if inv is None:
                drone.status = DroneStatus.SCANNING
                continue
            area_id = drone.current_area()
            level = state.sub_areas[area_id].level if area_id is not None else None
            params = state.params[level] if level is not None else next(iter(state.params.values()))
            cost = scenario.invest_dwell_s + cs / params.velocity
            need = cost - inv.progress
            if h < need - EPS:
                inv.progress += h
                return
            h -= need
            inv.progress = 0.0
            _investigation_draw(state, scenario, oracle, drone, events, t)

        else:
            return


def _advance(state: MissionState, scenario: Scenario, oracle: DetectionOracle, events: list) -> None:
    """Run dynamics from state.sim_t up to state.clock, in place.

    Sub-steps align to the absolute whole-second grid (not to the window
    start), so advancing over [a, b] in one call or split at any integral
    time gives the identical draw sequence. Mid-window snapshots rely on
    this.
    """
    t0 = state.sim_t
    t1 = state.clock
    schedule = scenario.schedule_between(t0, t1)
    si = 0
    while t1 - t0 > EPS:
        h = min(math.floor(t0 + EPS) + 1.0 - t0, t1 - t0)
        while si < len(schedule) and schedule[si].time < t0 + h - EPS:
            ev = schedule[si]
            if ev.kind == "malfunction":
                _fire_malfunction(state, events, t0, ev.drone_id, ev.silent)
            else:
                _fire_intel(state, events, t0, ev.area_ids, ev.probability, ev.note)
            si += 1
        for alert in state.alerts:
            if alert.open and alert.timeout_at is not None and alert.timeout_at <= t0 + EPS:
                expire_alert(state, alert.id, at=t0)
                events.append({"t": t0, "type": "alert_expired", "alert_id": alert.id})
                if alert.drone_id is not None:
                    d = state.drones[alert.drone_id]
                    if d.investigation is not None and d.investigation.alert_id == alert.id:
                        d.investigation = None
                        d.status = DroneStatus.SCANNING
        for drone in state.drones:
            _advance_drone(state, scenario, oracle, drone, h, events, t0)
        t0 += h
        # keep grid steps exactly integral so split and unsplit advances
        # feed drones bit-identical h sequences; float() because round()
        # returns int and the type would leak into serialized timestamps
        if abs(t0 - round(t0)) < EPS:
            t0 = float(round(t0))
    state.sim_t = t1


def catch_up(state: MissionState, scenario: Scenario, oracle: DetectionOracle):
    """Simulate dynamics over [sim_t, clock]; returns (new state, events)."""
    s = state.clone()
    events: list = []
    _advance(s, scenario, oracle, events)
    return s, events


def step(state: MissionState, scenario: Scenario, oracle: DetectionOracle, dt: float = 1.0):
    """Advance the mission clock by dt and simulate. Raises ClockOverflow
    when stepping an already-finished mission."""
    if state.terminal:
        raise ClockOverflow(f"mission over at t={state.clock}")
    if dt <= 0:
        raise ClockOverflow(f"dt must be positive, got {dt}")
    s = state.clone()
    s.clock = min(s.duration, s.clock + dt)
    events: list = []
    _advance(s, scenario, oracle, events)
    return s, events


def advance_inplace(state: MissionState, scenario: Scenario, oracle: DetectionOracle, to_clock=None) -> list:
    """In-place variant for owners of private state (runners, the service)."""
    if to_clock is not None:
        state.clock = min(state.duration, float(to_clock))
    events: list = []
    _advance(state, scenario, oracle, events)
    return events
