"""Operator models: think-time profiles, decision simulation, and a catalog
of scripted operators used to produce demonstration missions.

A profile captures what we can estimate about a human from their logs: mean
handle time per action class plus true-positive / true-negative rates on
detection decisions. Scripted operators wrap a profile with a behavior
(setup configuration, alert policy, scheduled parameter changes) so that
different "people" leave distinguishable traces.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .scenarios import assignment_by_probability
from .world import (
    ACTION_CLASSES,
    AlertKind,
    AreaLevel,
    CLASS_CHANGE_AREA_TYPE,
    CLASS_CHANGE_PARAMS,
    CLASS_HANDLE_DETECTION,
    CLASS_HANDLE_MALFUNCTION,
    CLASS_MANUAL_ASSIGN,
    CLASS_OTHER,
    ChangeAreaType,
    ChangeParams,
    ChangeProbability,
    Composite,
    DEFAULT_ACTION_TIMES,
    Decision,
    DETECTION_KINDS,
    HandleAlert,
    ManualAssign,
    MissionState,
    OperatorAction,
    alert_truth,
    check_action,
    WorldError,
)


@dataclass
class OperatorProfile:
    """Estimated operator characteristics driving synthesis and advising."""

    action_time: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_ACTION_TIMES))
    tp_rate: float = 0.9
    tn_rate: float = 0.9

    def mean_time(self, cls: str) -> float:
        return self.action_time.get(cls, DEFAULT_ACTION_TIMES[cls])

    @property
    def detection_handle_time(self) -> float:
        return self.mean_time(CLASS_HANDLE_DETECTION)

    @property
    def cp_handle_time(self) -> float:
        return self.mean_time(CLASS_CHANGE_PARAMS)

    def to_dict(self) -> dict:
        return {"action_time": dict(self.action_time), "tp_rate": self.tp_rate, "tn_rate": self.tn_rate}

    @classmethod
    def from_dict(cls, d: dict) -> "OperatorProfile":
        return cls(action_time=dict(d["action_time"]), tp_rate=d["tp_rate"], tn_rate=d["tn_rate"])


def estimate_profile(trajectory) -> tuple[OperatorProfile, set[str]]:
    """Estimate a profile from a demonstration.

    Per-class mean handle times come from the recorded elapsed values;
    classes never observed fall back to defaults and are reported in the
    returned `missing` set. TP/TN rates come from the final
    approve/reject/false counters (expiries bias FN slightly; acceptable
    for estimation).
    """
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for rec in trajectory.records:
        cls = rec.action_class
        if cls is None or rec.elapsed <= 0:
            continue
        sums[cls] = sums.get(cls, 0.0) + rec.elapsed
        counts[cls] = counts.get(cls, 0) + 1
    times = {}
    missing = set()
    for cls in ACTION_CLASSES:
        if counts.get(cls):
            times[cls] = sums[cls] / counts[cls]
        else:
            times[cls] = DEFAULT_ACTION_TIMES[cls]
            missing.add(cls)

    m = trajectory.summary
    approved = m.get("approved", 0)
    rejected = m.get("rejected", 0)
    fp = m.get("false_positives", 0)
    fn = m.get("false_negatives", 0)
    tp = max(0, approved - fp)
    tn = max(0, rejected - fn)
    tp_rate = tp / (tp + fn) if (tp + fn) > 0 else 0.9
    tn_rate = tn / (tn + fp) if (tn + fp) > 0 else 0.9
    if (tp + fn) == 0:
        missing.add("tp_rate")
    if (tn + fp) == 0:
        missing.add("tn_rate")
    return OperatorProfile(action_time=times, tp_rate=tp_rate, tn_rate=tn_rate), missing


def simulate_handle(
    state: MissionState, alert, profile: OperatorProfile, rng: np.random.Generator
) -> tuple[Decision, float]:
    """Draw an operator's decision for an alert. Detection alerts approve
    with probability tp_rate on true targets and (1 - tn_rate) on clutter;
    malfunction/intelligence have a single valid decision. Returns the
    decision and the mean handle time for the class. Consumes exactly one
    rng draw per call regardless of kind, so call sites stay replayable."""
    u = rng.random()
    if alert.kind in DETECTION_KINDS:
        truth = alert_truth(state, alert)
        p_approve = profile.tp_rate if truth else 1.0 - profile.tn_rate
        dec = Decision.APPROVE if u < p_approve else Decision.REJECT
        return dec, profile.mean_time(CLASS_HANDLE_DETECTION)
    if alert.kind is AlertKind.MALFUNCTION:
        return Decision.REPAIR, profile.mean_time(CLASS_HANDLE_MALFUNCTION)
    return Decision.ACKNOWLEDGE, profile.mean_time(CLASS_OTHER)


# ---------------------------------------------------------------------------
# scripted operators
# ---------------------------------------------------------------------------


class ScriptedOperator:
    """A deterministic-behavior operator with stochastic decision noise.

    `setup` runs once at mission start (configuration phase, no clock
    cost); `schedule` holds (time, action) pairs fired when the clock
    passes them; alert handling follows `alert_policy`:

    * "fifo": oldest open alert first, any kind
    * "conf_first": highest-confidence open detection first
    * "high_first": high detections, then malfunctions, then the rest
    """

    def __init__(
        self,
        name: str,
        profile: OperatorProfile,
        *,
        alert_policy: str = "fifo",
        handles_low: bool = True,
        handles_intel: bool = True,
        repair_delay: float = 0.0,
        jitter: float = 0.1,
        setup: Optional[Callable[[MissionState], list[OperatorAction]]] = None,
        schedule: Optional[list[tuple[float, OperatorAction]]] = None,
        intel_reaction: bool = False,
    ):
        self.name = name
        self.profile = profile
        self.alert_policy = alert_policy
        self.handles_low = handles_low
        self.handles_intel = handles_intel
        self.repair_delay = repair_delay
        self.jitter = jitter
        self.setup = setup
        self.schedule = sorted(schedule or [], key=lambda x: x[0])
        self.intel_reaction = intel_reaction
        self.reset()

    def reset(self) -> None:
        self._fired: set[int] = set()
        self._pending: list[OperatorAction] = []

    # -- setup phase -------------------------------------------------------

    def setup_actions(self, state: MissionState) -> list[OperatorAction]:
        actions: list[OperatorAction] = []
        if self.setup is not None:
            actions.extend(self.setup(state))
        return actions

    def assignment_actions(self, state: MissionState) -> list[OperatorAction]:
        return [
            ManualAssign(did, tuple(queue))
            for did, queue in sorted(assignment_by_probability(state).items())
        ]

    # -- live phase --------------------------------------------------------

    def _alert_queue(self, state: MissionState, now: float):
        open_alerts = state.open_alerts()
        mal = [a for a in open_alerts if a.kind is AlertKind.MALFUNCTION and now - a.created_at >= self.repair_delay]
        det = [a for a in open_alerts if a.kind in DETECTION_KINDS]
        if not self.handles_low:
            det = [a for a in det if a.kind is not AlertKind.DETECTION_LOW]
        intel = [a for a in open_alerts if a.kind is AlertKind.INTELLIGENCE] if self.handles_intel else []

        if self.alert_policy == "fifo":
            pool = mal + det + intel
            pool.sort(key=lambda a: a.id)
            return pool
        if self.alert_policy == "conf_first":
            det.sort(key=lambda a: (-a.confidence, a.id))
            return mal + det + intel
        # high_first
        high = sorted((a for a in det if a.kind is AlertKind.DETECTION_HIGH), key=lambda a: a.id)
        low = sorted((a for a in det if a.kind is AlertKind.DETECTION_LOW), key=lambda a: a.id)
        return high + mal + low + intel

    def decide(
        self, state: MissionState, now: float, rng: np.random.Generator, advice=None
    ) -> Optional[tuple[OperatorAction, float]]:
        for i, (t, action) in enumerate(self.schedule):
            if i in self._fired or t > now:
                continue
            self._fired.add(i)
            try:
                check_action(state, action)
            except WorldError:
                continue
            return action, self._class_time(state, action)

        if self._pending:
            action = self._pending.pop(0)
            try:
                check_action(state, action)
            except WorldError:
                return self.decide(state, now, rng, advice)
            return action, self._class_time(state, action)

        queue = self._alert_queue(state, now)
        if queue:
            alert = queue[0]
            dec, mean = simulate_handle(state, alert, self.profile, rng)
            if alert.kind is AlertKind.INTELLIGENCE and self.intel_reaction:
                for aid in alert.intel_area_ids:
                    p = alert.intel_probability
                    if p is not None:
                        self._pending.append(ChangeProbability(aid, min(1.0, max(0.0, p))))
                    # re-grade tipped areas; a deliberate CT like this is part
                    # of the operator's visible style (and survives synthesis)
                    self._pending.append(ChangeAreaType(aid, AreaLevel.HIGH))
            return HandleAlert(alert.id, dec), mean

        return None

    def _class_time(self, state: MissionState, action: OperatorAction) -> float:
        from .world import action_class_in

        return self.profile.mean_time(action_class_in(state, action))

    def sample_elapsed(self, mean: float, rng: np.random.Generator) -> float:
        if self.jitter <= 0:
            return mean
        return float(max(1.0, rng.normal(mean, self.jitter * mean)))


class AdviceFollower(ScriptedOperator):
    """Executes the advising agent's top applicable recommendation when one
    is offered; falls back to scripted behavior otherwise.

    Configuration advice (parameters, single or bundled) is adopted at most
    once per `cp_cooldown_s`. Without the cooldown a stream of small
    threshold nudges compounds into settings no one intended, and the
    think time eats the mission.

    Adopted advice costs `advised_time_factor` of the operator's usual
    time for that action class: the deliberation is already done, what
    remains is reviewing the suggestion and executing it.
    """

    def __init__(
        self,
        *args,
        cp_cooldown_s: float = 120.0,
        min_value: float = 0.0,
        config_min_value: float = 0.0,
        advised_time_factor: float = 0.5,
        **kwargs,
    ):
        self.cp_cooldown_s = cp_cooldown_s
        self.min_value = min_value
        self.config_min_value = config_min_value
        self.advised_time_factor = advised_time_factor
        super().__init__(*args, **kwargs)

    def reset(self) -> None:
        super().reset()
        self._last_cp_at = float("-inf")

    def decide(self, state, now, rng, advice=None):
        if advice is not None:
            for entry in advice.entries:
                action = entry.action
                is_cp = isinstance(action, (ChangeParams, ChangeAreaType, Composite))
                # marginal suggestions aren't worth the think time; the bar
                # is higher for configuration edits, whose effects compound
                floor = self.config_min_value if is_cp else self.min_value
                if entry.value <= floor:
                    continue
                if is_cp and state.clock - self._last_cp_at < self.cp_cooldown_s:
                    continue
                try:
                    check_action(state, action)
                except WorldError:
                    continue
                if is_cp:
                    self._last_cp_at = state.clock
                if isinstance(action, HandleAlert):
                    alert = state.alert(action.alert_id)
                    dec, mean = simulate_handle(state, alert, self.profile, rng)
                    return HandleAlert(action.alert_id, dec), self.advised_time_factor * mean
                return action, self.advised_time_factor * self._class_time(state, action)
        return super().decide(state, now, rng, advice)


# ---------------------------------------------------------------------------
# demonstration catalog
# ---------------------------------------------------------------------------


def _times(det, mal, cp, ct, assign, other) -> dict[str, float]:
    return {
        CLASS_HANDLE_DETECTION: det,
        CLASS_HANDLE_MALFUNCTION: mal,
        CLASS_CHANGE_PARAMS: cp,
        CLASS_CHANGE_AREA_TYPE: ct,
        CLASS_MANUAL_ASSIGN: assign,
        CLASS_OTHER: other,
    }


def setup_cp(deltas: dict[AreaLevel, dict]) -> Callable:
    """Setup hook applying per-level parameter offsets from the presets."""

    def setup(state: MissionState) -> list[OperatorAction]:
        out = []
        for lv, kw in deltas.items():
            base = state.params[lv]
            merged = {}
            for k, dv in kw.items():
                merged[k] = getattr(base, k) + dv
            out.append(ChangeParams(lv, **merged))
        return out

    return setup


def _setup_ct(assignments: dict[int, AreaLevel]) -> Callable:
    def setup(state: MissionState) -> list[OperatorAction]:
        return [ChangeAreaType(aid, lv) for aid, lv in sorted(assignments.items()) if aid < len(state.sub_areas)]

    return setup


def _setup_chain(*setups: Callable) -> Callable:
    def setup(state: MissionState) -> list[OperatorAction]:
        out = []
        for s in setups:
            out.extend(s(state))
        return out

    return setup


def _setup_probability(hot: dict[int, float]) -> Callable:
    def setup(state: MissionState) -> list[OperatorAction]:
        return [
            ChangeProbability(aid, p) for aid, p in sorted(hot.items()) if aid < len(state.sub_areas)
        ]

    return setup


def build_operator(name: str) -> ScriptedOperator:
    """Fresh instance of a named catalog operator."""
    if name not in _CATALOG:
        raise KeyError(f"unknown operator {name!r}; have {sorted(_CATALOG)}")
    return _CATALOG[name]()


OPERATOR_NAMES = [
    "by_the_book",
    "diligent_low_alt",
    "fast_scanner",
    "cautious",
    "prob_manager",
    "type_tuner",
    "hands_off",
    "micro_manager",
    "intel_follower",
    "threshold_tinkerer",
]

# Ten distinguishable demonstrator styles. Styles are expressed through
# things that persist in the mission record (setup parameters, deliberate
# mid-mission CP/CT, think times, decision rates) rather than through alert
# triage order alone, which the record only shows indirectly.
_CATALOG: dict[str, Callable[[], ScriptedOperator]] = {
    "by_the_book": lambda: ScriptedOperator(
        "by_the_book",
        OperatorProfile(_times(10, 15, 20, 10, 12, 10), tp_rate=0.9, tn_rate=0.9),
    ),
    "diligent_low_alt": lambda: ScriptedOperator(
        "diligent_low_alt",
        OperatorProfile(_times(8, 12, 15, 8, 10, 8), tp_rate=0.95, tn_rate=0.9),
        alert_policy="conf_first",
        setup=setup_cp({
            AreaLevel.LOW: {"altitude": -20.0, "velocity": -2.0},
            AreaLevel.MEDIUM: {"altitude": -15.0},
            AreaLevel.HIGH: {"altitude": -10.0},
        }),
    ),
    "fast_scanner": lambda: ScriptedOperator(
        "fast_scanner",
        OperatorProfile(_times(7, 11, 13, 8, 9, 7), tp_rate=0.85, tn_rate=0.8),
        alert_policy="high_first",
        setup=setup_cp({
            AreaLevel.LOW: {"velocity": 3.0},
            AreaLevel.MEDIUM: {"altitude": 20.0, "velocity": 3.0},
            AreaLevel.HIGH: {"altitude": 20.0, "velocity": 2.0},
        }),
    ),
    "cautious": lambda: ScriptedOperator(
        "cautious",
        OperatorProfile(_times(16, 20, 26, 14, 16, 14), tp_rate=0.9, tn_rate=0.97),
        repair_delay=15.0,
        setup=setup_cp({
            AreaLevel.LOW: {"hc": 0.1},
            AreaLevel.MEDIUM: {"hc": 0.08},
            AreaLevel.HIGH: {"lc": 0.05},
        }),
    ),
    "prob_manager": lambda: ScriptedOperator(
        "prob_manager",
        OperatorProfile(_times(13, 16, 18, 10, 12, 12), tp_rate=0.9, tn_rate=0.88),
        setup=_setup_chain(
            _setup_probability({0: 0.08, 7: 0.07, 13: 0.06, 21: 0.05, 34: 0.05}),
            _setup_ct({21: AreaLevel.HIGH}),
        ),
        schedule=[
            (320.0, ChangeProbability(13, 0.12)),
            (520.0, ChangeAreaType(34, AreaLevel.HIGH)),
        ],
    ),
    "type_tuner": lambda: ScriptedOperator(
        "type_tuner",
        OperatorProfile(_times(10, 14, 17, 9, 12, 10), tp_rate=0.92, tn_rate=0.85),
        alert_policy="conf_first",
        setup=_setup_ct({3: AreaLevel.HIGH, 11: AreaLevel.HIGH, 19: AreaLevel.LOW, 27: AreaLevel.HIGH}),
        schedule=[(500.0, ChangeParams(AreaLevel.HIGH, velocity=3.0))],
    ),
    "hands_off": lambda: ScriptedOperator(
        "hands_off",
        OperatorProfile(_times(20, 26, 30, 16, 18, 16), tp_rate=0.88, tn_rate=0.92),
        alert_policy="high_first",
        setup=setup_cp({
            AreaLevel.LOW: {"altitude": 30.0, "velocity": 4.0},
            AreaLevel.MEDIUM: {"velocity": 2.0},
        }),
    ),
    "micro_manager": lambda: ScriptedOperator(
        "micro_manager",
        OperatorProfile(_times(6, 10, 12, 7, 8, 6), tp_rate=0.93, tn_rate=0.9),
        setup=setup_cp({
            AreaLevel.LOW: {"lc": -0.05},
            AreaLevel.MEDIUM: {"lc": -0.05},
            AreaLevel.HIGH: {"lc": -0.05},
        }),
        schedule=[
            (300.0, ChangeParams(AreaLevel.HIGH, lc=0.5)),
            (600.0, ChangeParams(AreaLevel.LOW, altitude=70.0)),
            (900.0, ChangeParams(AreaLevel.MEDIUM, velocity=6.0)),
        ],
    ),
    "intel_follower": lambda: ScriptedOperator(
        "intel_follower",
        OperatorProfile(_times(12, 16, 22, 11, 13, 10), tp_rate=0.9, tn_rate=0.9),
        intel_reaction=True,
        setup=_setup_chain(
            _setup_probability({5: 0.06, 25: 0.06}),
            setup_cp({AreaLevel.HIGH: {"altitude": -10.0}}),
        ),
    ),
    "threshold_tinkerer": lambda: ScriptedOperator(
        "threshold_tinkerer",
        OperatorProfile(_times(13, 17, 21, 11, 13, 12), tp_rate=0.87, tn_rate=0.93),
        setup=_setup_chain(
            setup_cp({
                AreaLevel.LOW: {"lc": 0.1, "hc": -0.05},
                AreaLevel.HIGH: {"lc": 0.08},
            }),
            _setup_ct({8: AreaLevel.MEDIUM}),
        ),
        schedule=[(620.0, ChangeParams(AreaLevel.MEDIUM, lc=0.45))],
    ),
}
