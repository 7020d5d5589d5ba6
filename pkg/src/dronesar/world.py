"""Core domain model for a multi-drone search-and-rescue mission.

This layer owns the mission snapshot (sub-areas, drones, targets, alerts,
operator history) and the semantics of operator actions. Every public
operation is value-semantic: it returns a fresh state and never mutates its
input. Environment dynamics (movement, scanning, detections, schedules)
live in :mod:`dronesar.sim`.

Conventions used throughout the package:

* the search grid is ``rows x cols`` square cells of ``cell_size`` meters;
  cell coordinates are ``(row, col)`` with row 0 at the top,
* continuous positions are ``(x, y)`` in meters with ``x`` along columns
  and ``y`` along rows, so cell ``(r, c)`` has its center at
  ``((c + 0.5) * cell_size, (r + 0.5) * cell_size)``,
* sub-area ids and drone ids are dense (``id == list index``); alert ids
  are dense over all alerts ever raised in the mission.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

CELL_SIZE_M = 10.0

LC_HC_BOUNDS = (0.05, 0.99)
ALTITUDE_BOUNDS = (20.0, 120.0)
VELOCITY_BOUNDS = (2.0, 15.0)


class WorldError(Exception):
    """Base class for action/state contract violations."""


class UnknownId(WorldError):
    pass


class AlertAlreadyClosed(WorldError):
    pass


class OutOfBounds(WorldError):
    pass


class NotApplicable(WorldError):
    pass


class AreaLevel(str, Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


LEVELS = (AreaLevel.LOW, AreaLevel.MEDIUM, AreaLevel.HIGH)


class DroneStatus(str, Enum):
    IDLE = "idle"
    FLYING = "flying"
    SCANNING = "scanning"
    INVESTIGATING = "investigating"
    WAITING_ON_ALERT = "waiting_on_alert"
    MALFUNCTIONING = "malfunctioning"
    MANUAL = "manual"


class AlertKind(str, Enum):
    DETECTION_LOW = "detection_low"
    DETECTION_HIGH = "detection_high"
    MALFUNCTION = "malfunction"
    INTELLIGENCE = "intelligence"


DETECTION_KINDS = (AlertKind.DETECTION_LOW, AlertKind.DETECTION_HIGH)


class Decision(str, Enum):
    APPROVE = "approve"
    REJECT = "reject"
    REPAIR = "repair"
    ACKNOWLEDGE = "acknowledge"


# how an alert left the open set without an operator decision
EXPIRED = "expired"


@dataclass(frozen=True, slots=True)
class CellRect:
    """Axis-aligned rectangle of grid cells, half-open on neither side:
    covers rows ``[row0, row0 + rows)`` and cols ``[col0, col0 + cols)``."""

    row0: int
    col0: int
    rows: int
    cols: int

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    def contains(self, row: int, col: int) -> bool:
        return (
            self.row0 <= row < self.row0 + self.rows
            and self.col0 <= col < self.col0 + self.cols
        )

    def center_xy(self, cell_size: float) -> tuple[float, float]:
        x = (self.col0 + self.cols / 2.0) * cell_size
        y = (self.row0 + self.rows / 2.0) * cell_size
        return x, y

    def cells(self):
        for r in range(self.row0, self.row0 + self.rows):
            for c in range(self.col0, self.col0 + self.cols):
                yield r, c


@dataclass(frozen=True, slots=True)
class ScanParams:
    """Per-area-type scan configuration.

    ``lc``/``hc`` are the low/high confidence thresholds of the two-tier
    detection pipeline, ``altitude`` (m) sets the camera footprint side,
    ``velocity`` (m/s) the flight speed inside and between areas.
    """

    lc: float
    hc: float
    altitude: float
    velocity: float

    def validate(self) -> None:
        lo, hi = LC_HC_BOUNDS
        if not (lo <= self.lc <= hi and lo <= self.hc <= hi):
            raise OutOfBounds(f"confidence thresholds outside {LC_HC_BOUNDS}: {self}")
        if self.lc > self.hc:
            raise OutOfBounds(f"lc > hc: {self}")
        if not ALTITUDE_BOUNDS[0] <= self.altitude <= ALTITUDE_BOUNDS[1]:
            raise OutOfBounds(f"altitude outside {ALTITUDE_BOUNDS}: {self}")
        if not VELOCITY_BOUNDS[0] <= self.velocity <= VELOCITY_BOUNDS[1]:
            raise OutOfBounds(f"velocity outside {VELOCITY_BOUNDS}: {self}")

    def footprint_cells(self, cell_size: float = CELL_SIZE_M) -> int:
        """Camera footprint side length in whole cells (altitude-driven)."""
        return max(1, round(self.altitude / cell_size))

    def to_dict(self) -> dict:
        return {"lc": self.lc, "hc": self.hc, "altitude": self.altitude, "velocity": self.velocity}

    @classmethod
    def from_dict(cls, d: dict) -> "ScanParams":
        return cls(lc=d["lc"], hc=d["hc"], altitude=d["altitude"], velocity=d["velocity"])


@dataclass(slots=True)
class SubArea:
    id: int
    rect: CellRect
    probability: float
    level: AreaLevel
    scanned_fraction: float = 0.0

    def copy(self) -> "SubArea":
        return SubArea(self.id, self.rect, self.probability, self.level, self.scanned_fraction)


@dataclass(slots=True)
class Target:
    row: int
    col: int
    found: bool = False
    found_at: Optional[float] = None

    def copy(self) -> "Target":
        return Target(self.row, self.col, self.found, self.found_at)


@dataclass(slots=True)
class Investigation:
    """Loiter state while a drone re-checks a low-confidence cue."""

    alert_id: int
    cell: tuple[int, int]
    is_target: bool
    stops_left: int
    progress: float = 0.0

    def copy(self) -> "Investigation":
        return Investigation(self.alert_id, self.cell, self.is_target, self.stops_left, self.progress)


@dataclass(slots=True)
class Drone:
    id: int
    x: float
    y: float
    status: DroneStatus = DroneStatus.IDLE
    queue: list[int] = field(default_factory=list)
    # scan plan for the queue head; None means "not materialized yet"
    stops: Optional[list[tuple[int, int]]] = None
    stop_index: int = 0
    stop_progress: float = 0.0
    footprint: int = 1
    travel_target: Optional[tuple[float, float]] = None
    alert_id: Optional[int] = None
    investigation: Optional[Investigation] = None
    # silent malfunction: reported status stays unchanged but the drone stalls
    disabled: bool = False
    last_moved_at: float = 0.0

    def copy(self) -> "Drone":
        d = Drone(
            self.id, self.x, self.y, self.status, list(self.queue),
            None if self.stops is None else list(self.stops),
            self.stop_index, self.stop_progress, self.footprint,
            self.travel_target, self.alert_id,
            None if self.investigation is None else self.investigation.copy(),
            self.disabled, self.last_moved_at,
        )
        return d

    @property
    def reported_status(self) -> DroneStatus:
        """Status as shown to the operator; silent malfunctions lie."""
        return self.status

    def current_area(self) -> Optional[int]:
        return self.queue[0] if self.queue else None


@dataclass(slots=True)
class Alert:
    id: int
    kind: AlertKind
    created_at: float
    drone_id: Optional[int] = None
    area_id: Optional[int] = None
    confidence: float = 0.0
    cell: Optional[tuple[int, int]] = None
    footprint: Optional[CellRect] = None
    timeout_at: Optional[float] = None
    # intelligence payload
    intel_area_ids: tuple[int, ...] = ()
    intel_probability: Optional[float] = None
    intel_note: str = ""
    open: bool = True
    closed_at: Optional[float] = None
    resolution: Optional[str] = None  # Decision value or EXPIRED

    def copy(self) -> "Alert":
        return Alert(
            self.id, self.kind, self.created_at, self.drone_id, self.area_id,
            self.confidence, self.cell, self.footprint, self.timeout_at,
            self.intel_area_ids, self.intel_probability, self.intel_note,
            self.open, self.closed_at, self.resolution,
        )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "created_at": self.created_at,
            "drone_id": self.drone_id,
            "area_id": self.area_id,
            "confidence": round(self.confidence, 6),
            "cell": list(self.cell) if self.cell else None,
            "timeout_at": self.timeout_at,
            "intel_area_ids": list(self.intel_area_ids),
            "intel_probability": self.intel_probability,
            "intel_note": self.intel_note,
            "open": self.open,
            "closed_at": self.closed_at,
            "resolution": self.resolution,
        }


# operator think-time classes; keys double as history/action-time keys
CLASS_HANDLE_DETECTION = "handle_detection"
CLASS_HANDLE_MALFUNCTION = "handle_malfunction"
CLASS_CHANGE_PARAMS = "change_params"
CLASS_CHANGE_AREA_TYPE = "change_area_type"
CLASS_MANUAL_ASSIGN = "manual_assign"
CLASS_OTHER = "other"

ACTION_CLASSES = (
    CLASS_HANDLE_DETECTION,
    CLASS_HANDLE_MALFUNCTION,
    CLASS_CHANGE_PARAMS,
    CLASS_CHANGE_AREA_TYPE,
    CLASS_MANUAL_ASSIGN,
    CLASS_OTHER,
)

DEFAULT_ACTION_TIMES = {
    CLASS_HANDLE_DETECTION: 10.0,
    CLASS_HANDLE_MALFUNCTION: 15.0,
    CLASS_CHANGE_PARAMS: 20.0,
    CLASS_CHANGE_AREA_TYPE: 10.0,
    CLASS_MANUAL_ASSIGN: 12.0,
    CLASS_OTHER: 10.0,
}


@dataclass(slots=True)
class MissionHistory:
    """Operator-side bookkeeping accumulated over a mission.

    Monotone counters feed state featurization; per-class action times feed
    think-time estimation; the detection log keeps (area_id, confidence)
    for every detection alert ever raised so threshold sweeps can be
    recomputed after parameter changes.
    """

    approved: int = 0
    rejected: int = 0
    actions_performed: int = 0
    false_positives: int = 0
    false_negatives: int = 0
    lowest_conf_detection: float = 1.0
    wait_time_sum: float = 0.0
    alerts_handled: int = 0
    action_time_sum: dict[str, float] = field(default_factory=dict)
    action_time_count: dict[str, int] = field(default_factory=dict)
    prev_params: dict[AreaLevel, ScanParams] = field(default_factory=dict)

    def copy(self) -> "MissionHistory":
        return MissionHistory(
            self.approved, self.rejected, self.actions_performed,
            self.false_positives, self.false_negatives,
            self.lowest_conf_detection, self.wait_time_sum, self.alerts_handled,
            dict(self.action_time_sum), dict(self.action_time_count),
            dict(self.prev_params),
        )

    def record_action_time(self, cls: str, elapsed: float) -> None:
        self.action_time_sum[cls] = self.action_time_sum.get(cls, 0.0) + elapsed
        self.action_time_count[cls] = self.action_time_count.get(cls, 0) + 1

    def mean_action_time(self, cls: str) -> float:
        n = self.action_time_count.get(cls, 0)
        if n == 0:
            return DEFAULT_ACTION_TIMES[cls]
        return self.action_time_sum[cls] / n


@dataclass(slots=True)
class MissionState:
    rows: int
    cols: int
    cell_size: float
    duration: float
    clock: float = 0.0
    sim_t: float = 0.0
    sub_areas: list[SubArea] = field(default_factory=list)
    drones: list[Drone] = field(default_factory=list)
    targets: list[Target] = field(default_factory=list)
    alerts: list[Alert] = field(default_factory=list)
    params: dict[AreaLevel, ScanParams] = field(default_factory=dict)
    history: MissionHistory = field(default_factory=MissionHistory)

    # ---- lookups ----

    def area(self, area_id: int) -> SubArea:
        if not 0 <= area_id < len(self.sub_areas):
            raise UnknownId(f"no sub-area {area_id}")
        return self.sub_areas[area_id]

    def drone(self, drone_id: int) -> Drone:
        if not 0 <= drone_id < len(self.drones):
            raise UnknownId(f"no drone {drone_id}")
        return self.drones[drone_id]

    def alert(self, alert_id: int) -> Alert:
        if not 0 <= alert_id < len(self.alerts):
            raise UnknownId(f"no alert {alert_id}")
        return self.alerts[alert_id]

    def open_alerts(self) -> list[Alert]:
        return [a for a in self.alerts if a.open]

    def in_grid(self, row: int, col: int) -> bool:
        return 0 <= row < self.rows and 0 <= col < self.cols

    @property
    def terminal(self) -> bool:
        return self.clock >= self.duration

    def targets_found(self) -> int:
        return sum(1 for t in self.targets if t.found)

    def clone(self) -> "MissionState":
        return MissionState(
            self.rows, self.cols, self.cell_size, self.duration,
            self.clock, self.sim_t,
            [a.copy() for a in self.sub_areas],
            [d.copy() for d in self.drones],
            [t.copy() for t in self.targets],
            [a.copy() for a in self.alerts],
            dict(self.params),
            self.history.copy(),
        )

    # ---- serialization (operator view; targets hidden unless asked) ----

    def to_dict(self, include_targets: bool = False) -> dict:
        d = {
            "rows": self.rows,
            "cols": self.cols,
            "cell_size": self.cell_size,
            "clock": self.clock,
            "duration": self.duration,
            "params": {lv.value: self.params[lv].to_dict() for lv in LEVELS if lv in self.params},
            "sub_areas": [
                {
                    "id": a.id,
                    "rect": [a.rect.row0, a.rect.col0, a.rect.rows, a.rect.cols],
                    "probability": round(a.probability, 6),
                    "level": a.level.value,
                    "scanned_fraction": round(a.scanned_fraction, 6),
                }
                for a in self.sub_areas
            ],
            "drones": [
                {
                    "id": dr.id,
                    "x": round(dr.x, 3),
                    "y": round(dr.y, 3),
                    "status": dr.status.value,
                    "queue": list(dr.queue),
                    "alert_id": dr.alert_id,
                }
                for dr in self.drones
            ],
            "alerts": [a.to_dict() for a in self.alerts],
            "counters": {
                "approved": self.history.approved,
                "rejected": self.history.rejected,
                "actions_performed": self.history.actions_performed,
                "targets_found": self.targets_found(),
            },
        }
        if include_targets:
            d["targets"] = [
                {"row": t.row, "col": t.col, "found": t.found, "found_at": t.found_at}
                for t in self.targets
            ]
        return d

    def digest(self) -> str:
        """Stable fingerprint of the full state, targets included."""
        payload = json.dumps(self.to_dict(include_targets=True), sort_keys=True)
        return hashlib.sha1(payload.encode()).hexdigest()


# ---------------------------------------------------------------------------
# operator actions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class ChangeProbability:
    area_id: int
    probability: float


@dataclass(frozen=True, slots=True)
class ChangeAreaType:
    area_id: int
    level: AreaLevel


@dataclass(frozen=True, slots=True)
class ChangeParams:
    """Partial update of one area type's scan parameters; None keeps the
    current value."""

    level: AreaLevel
    lc: Optional[float] = None
    hc: Optional[float] = None
    altitude: Optional[float] = None
    velocity: Optional[float] = None

    def merged(self, base: ScanParams) -> ScanParams:
        return ScanParams(
            lc=self.lc if self.lc is not None else base.lc,
            hc=self.hc if self.hc is not None else base.hc,
            altitude=self.altitude if self.altitude is not None else base.altitude,
            velocity=self.velocity if self.velocity is not None else base.velocity,
        )


@dataclass(frozen=True, slots=True)
class ManualFly:
    drone_id: int
    row: int
    col: int


@dataclass(frozen=True, slots=True)
class ManualReport:
    row: int
    col: int


@dataclass(frozen=True, slots=True)
class ManualAssign:
    drone_id: int
    area_ids: tuple[int, ...]


@dataclass(frozen=True, slots=True)
class HandleAlert:
    """decision None means "to be resolved by the acting operator model"
    and is only legal in trajectory synthesis; apply_action requires a
    concrete decision."""

    alert_id: int
    decision: Optional[Decision] = None


@dataclass(frozen=True, slots=True)
class NullAction:
    pass


@dataclass(frozen=True, slots=True)
class Composite:
    """Several changes issued as one operator intervention (the advisor's
    bundled recommendations). Parts apply in order; think time covers the
    bundle."""

    parts: tuple["OperatorAction", ...]


OperatorAction = Union[
    ChangeProbability, ChangeAreaType, ChangeParams, ManualFly, ManualReport,
    ManualAssign, HandleAlert, NullAction, Composite,
]

NULL = NullAction()


def action_class(action: OperatorAction) -> str:
    """Think-time class of an action (Composite classifies by first part)."""
    if isinstance(action, Composite):
        return action_class(action.parts[0])
    if isinstance(action, HandleAlert):
        return CLASS_HANDLE_DETECTION  # refined by apply via alert kind
    if isinstance(action, ChangeParams):
        return CLASS_CHANGE_PARAMS
    if isinstance(action, ChangeAreaType):
        return CLASS_CHANGE_AREA_TYPE
    if isinstance(action, ManualAssign):
        return CLASS_MANUAL_ASSIGN
    return CLASS_OTHER


def action_class_in(state: MissionState, action: OperatorAction) -> str:
    """Like action_class but resolves alert kinds against the state."""
    if isinstance(action, Composite):
        return action_class_in(state, action.parts[0])
    if isinstance(action, HandleAlert):
        try:
            alert = state.alert(action.alert_id)
        except UnknownId:
            return CLASS_HANDLE_DETECTION
        if alert.kind is AlertKind.MALFUNCTION:
            return CLASS_HANDLE_MALFUNCTION
        if alert.kind is AlertKind.INTELLIGENCE:
            return CLASS_OTHER
        return CLASS_HANDLE_DETECTION
    return action_class(action)


# ---- wire format ----


def action_to_dict(action: OperatorAction) -> dict:
    if isinstance(action, ChangeProbability):
        return {"type": "change_probability", "area_id": action.area_id, "probability": action.probability}
    if isinstance(action, ChangeAreaType):
        return {"type": "change_area_type", "area_id": action.area_id, "level": action.level.value}
    if isinstance(action, ChangeParams):
        d = {"type": "change_params", "level": action.level.value}
        for k in ("lc", "hc", "altitude", "velocity"):
            v = getattr(action, k)
            if v is not None:
                d[k] = v
        return d
    if isinstance(action, ManualFly):
        return {"type": "manual_fly", "drone_id": action.drone_id, "row": action.row, "col": action.col}
    if isinstance(action, ManualReport):
        return {"type": "manual_report", "row": action.row, "col": action.col}
    if isinstance(action, ManualAssign):
        return {"type": "manual_assign", "drone_id": action.drone_id, "area_ids": list(action.area_ids)}
    if isinstance(action, HandleAlert):
        return {
            "type": "handle_alert",
            "alert_id": action.alert_id,
            "decision": action.decision.value if action.decision else None,
        }
    if isinstance(action, NullAction):
        return {"type": "null"}
    if isinstance(action, Composite):
        return {"type": "composite", "parts": [action_to_dict(p) for p in action.parts]}
    raise TypeError(f"not an operator action: {action!r}")


def action_from_dict(d: dict) -> OperatorAction:
    t = d["type"]
    if t == "change_probability":
        return ChangeProbability(d["area_id"], d["probability"])
    if t == "change_area_type":
        return ChangeAreaType(d["area_id"], AreaLevel(d["level"]))
    if t == "change_params":
        return ChangeParams(
            AreaLevel(d["level"]),
            lc=d.get("lc"), hc=d.get("hc"),
            altitude=d.get("altitude"), velocity=d.get("velocity"),
        )
    if t == "manual_fly":
        return ManualFly(d["drone_id"], d["row"], d["col"])
    if t == "manual_report":
        return ManualReport(d["row"], d["col"])
    if t == "manual_assign":
        return ManualAssign(d["drone_id"], tuple(d["area_ids"]))
    if t == "handle_alert":
        dec = d.get("decision")
        return HandleAlert(d["alert_id"], Decision(dec) if dec else None)
    if t == "null":
        return NULL
    if t == "composite":
        return Composite(tuple(action_from_dict(p) for p in d["parts"]))
    raise ValueError(f"unknown action type {t!r}")


# ---------------------------------------------------------------------------
# applicability and application
# ---------------------------------------------------------------------------

_ALWAYS_FAMILIES = frozenset({
    "change_probability", "change_area_type", "change_params",
    "manual_fly", "manual_report", "manual_assign", "null",
})


def applicable_actions(state: MissionState) -> frozenset:
    """Families applicable now, plus one ('handle_alert', id) entry per open
    alert. Terminal states admit only 'null'."""
    if state.terminal:
        return frozenset({"null"})
    items = set(_ALWAYS_FAMILIES)
    for a in state.alerts:
        if a.open:
            items.add(("handle_alert", a.id))
    return frozenset(items)


_VALID_DECISIONS = {
    AlertKind.DETECTION_LOW: (Decision.APPROVE, Decision.REJECT),
    AlertKind.DETECTION_HIGH: (Decision.APPROVE, Decision.REJECT),
    AlertKind.MALFUNCTION: (Decision.REPAIR,),
    AlertKind.INTELLIGENCE: (Decision.ACKNOWLEDGE,),
}


def check_action(state: MissionState, action: OperatorAction) -> None:
    """Raise a WorldError if `action` cannot be applied to `state`."""
    if isinstance(action, NullAction):
        return
    if state.terminal:
        raise NotApplicable("mission over; only null is applicable")
    if isinstance(action, Composite):
        if not action.parts:
            raise NotApplicable("empty composite")
        # parts are validated against the evolving state during apply; here
        # we only check the first to keep the pre-check cheap and total
        check_action(state, action.parts[0])
        return
    if isinstance(action, ChangeProbability):
        state.area(action.area_id)
        if not 0.0 <= action.probability <= 1.0:
            raise OutOfBounds(f"probability {action.probability} outside [0, 1]")
    elif isinstance(action, ChangeAreaType):
        state.area(action.area_id)
        if not isinstance(action.level, AreaLevel):
            raise NotApplicable(f"bad area level {action.level!r}")
    elif isinstance(action, ChangeParams):
        if action.level not in state.params:
            raise UnknownId(f"no params for level {action.level}")
        action.merged(state.params[action.level]).validate()
    elif isinstance(action, ManualFly):
        state.drone(action.drone_id)
        if not state.in_grid(action.row, action.col):
            raise OutOfBounds(f"cell ({action.row}, {action.col}) outside grid")
    elif isinstance(action, ManualReport):
        if not state.in_grid(action.row, action.col):
            raise OutOfBounds(f"cell ({action.row}, {action.col}) outside grid")
    elif isinstance(action, ManualAssign):
        state.drone(action.drone_id)
        if len(set(action.area_ids)) != len(action.area_ids):
            raise NotApplicable("duplicate area ids in assignment")
        for aid in action.area_ids:
            state.area(aid)
    elif isinstance(action, HandleAlert):
        alert = state.alert(action.alert_id)
        if not alert.open:
            raise AlertAlreadyClosed(f"alert {alert.id} already closed ({alert.resolution})")
        if action.decision is None:
            raise NotApplicable("handle_alert needs a concrete decision")
        if action.decision not in _VALID_DECISIONS[alert.kind]:
            raise NotApplicable(f"{action.decision.value} not valid for {alert.kind.value}")
    else:
        raise NotApplicable(f"unknown action {action!r}")


def resume_after_interruption(drone: Drone) -> None:
    """Put a drone back to work after an alert/manual interruption.

    The scan plan is kept, so scanning resumes at the interrupted stop; a
    drone with no materialized plan flies to its queue head (the simulator
    fills in the travel target lazily), and with an empty queue it idles.
    """
    drone.alert_id = None
    drone.investigation = None
    if drone.stops is not None and drone.stop_index < len(drone.stops):
        drone.status = DroneStatus.SCANNING
    elif drone.queue:
        drone.status = DroneStatus.FLYING
        drone.stops = None
        drone.stop_index = 0
        drone.stop_progress = 0.0
        drone.travel_target = None
    else:
        drone.status = DroneStatus.IDLE
        drone.stops = None
        drone.travel_target = None


def _apply_effect(state: MissionState, action: OperatorAction) -> None:
    h = state.history
    if isinstance(action, ChangeProbability):
        state.area(action.area_id).probability = float(action.probability)
    elif isinstance(action, ChangeAreaType):
        state.area(action.area_id).level = action.level
    elif isinstance(action, ChangeParams):
        old = state.params[action.level]
        new = action.merged(old)
        new.validate()
        h.prev_params[action.level] = old
        state.params[action.level] = new
    elif isinstance(action, ManualFly):
        d = state.drone(action.drone_id)
        d.status = DroneStatus.MANUAL
        d.disabled = False
        d.alert_id = None
        d.investigation = None
        cs = state.cell_size
        d.travel_target = ((action.col + 0.5) * cs, (action.row + 0.5) * cs)
    elif isinstance(action, ManualReport):
        for t in state.targets:
            if not t.found and max(abs(t.row - action.row), abs(t.col - action.col)) <= 1:
                t.found = True
                t.found_at = state.clock
                break
    elif isinstance(action, ManualAssign):
        d = state.drone(action.drone_id)
        old_head = d.queue[0] if d.queue else None
        d.queue = list(action.area_ids)
        new_head = d.queue[0] if d.queue else None
        if new_head is None:
            if d.status in (DroneStatus.FLYING, DroneStatus.SCANNING):
                d.status = DroneStatus.IDLE
            d.stops = None
            d.travel_target = None
        elif new_head != old_head:
            d.stops = None
            d.stop_index = 0
            d.stop_progress = 0.0
            d.travel_target = None
            if d.status in (DroneStatus.IDLE, DroneStatus.FLYING, DroneStatus.SCANNING):
                d.status = DroneStatus.FLYING
        # same head: keep the in-progress plan untouched
    elif isinstance(action, HandleAlert):
        _close_alert(state, action.alert_id, action.decision)
    elif isinstance(action, NullAction):
        pass
    else:
        raise NotApplicable(f"unknown action {action!r}")


def _close_alert(state: MissionState, alert_id: int, decision: Decision) -> None:
    alert = state.alert(alert_id)
    h = state.history
    alert.open = False
    alert.closed_at = state.clock
    alert.resolution = decision.value
    h.wait_time_sum += state.clock - alert.created_at
    h.alerts_handled += 1

    if alert.kind in DETECTION_KINDS:
        truth = _footprint_target(state, alert)
        if decision is Decision.APPROVE:
            h.approved += 1
            if truth is not None:
                truth.found = True
                truth.found_at = state.clock
                h.lowest_conf_detection = min(h.lowest_conf_detection, alert.confidence)
            else:
                h.false_positives += 1
        else:
            h.rejected += 1
            if truth is not None:
                h.false_negatives += 1
        if alert.drone_id is not None:
            d = state.drone(alert.drone_id)
            if d.alert_id == alert.id or (
                d.investigation is not None and d.investigation.alert_id == alert.id
            ):
                resume_after_interruption(d)
    elif alert.kind is AlertKind.MALFUNCTION:
        d = state.drone(alert.drone_id)
        d.disabled = False
        if d.status is DroneStatus.MALFUNCTIONING:
            resume_after_interruption(d)
    # intelligence: closing is the whole effect


def _footprint_target(state: MissionState, alert: Alert) -> Optional[Target]:
    """First unfound target inside the alert's camera footprint, if any."""
    rect = alert.footprint
    if rect is None and alert.cell is not None:
        rect = CellRect(alert.cell[0], alert.cell[1], 1, 1)
    if rect is None:
        return None
    for t in state.targets:
        if not t.found and rect.contains(t.row, t.col):
            return t
    return None


def alert_truth(state: MissionState, alert: Alert) -> bool:
    """Whether an unfound target sits in the alert's camera footprint (what
    a careful operator would see in the video feed)."""
    return _footprint_target(state, alert) is not None


def expire_alert(state: MissionState, alert_id: int, at: Optional[float] = None) -> None:
    """Close a timed-out low-confidence detection without operator input.

    Mutates in place; only the simulator calls this, passing the sub-step
    time `at` so the stamp does not depend on how a catch-up window was
    split. A real target lost to the timeout counts as a false negative.
    """
    alert = state.alerts[alert_id]
    alert.open = False
    alert.closed_at = state.clock if at is None else at
    alert.resolution = EXPIRED
    if alert.kind in DETECTION_KINDS and _footprint_target(state, alert) is not None:
        state.history.false_negatives += 1


def apply_action(
    state: MissionState, action: OperatorAction, elapsed: float = 0.0
) -> MissionState:
    """Apply one operator action, advancing the mission clock by `elapsed`
    (the operator's think/handle time). Returns a new state; environment
    dynamics for the elapsed window are NOT simulated here (see
    sim.catch_up)."""
    check_action(state, action)
    if elapsed < 0:
        raise OutOfBounds(f"negative elapsed {elapsed}")
    s = state.clone()
    if isinstance(action, Composite):
        for part in action.parts:
            check_action(s, part)
            _apply_effect(s, part)
        n = len(action.parts)
        cls = action_class_in(s, action.parts[0])
        for _ in range(n):
            s.history.record_action_time(cls, elapsed / n)
        s.history.actions_performed += n
    elif isinstance(action, NullAction):
        pass
    else:
        cls = action_class_in(s, action)
        _apply_effect(s, action)
        s.history.record_action_time(cls, elapsed)
        s.history.actions_performed += 1
    s.clock = min(s.duration, s.clock + elapsed)
    return s
