"""Synthetic trajectory generation from a handful of demonstrations.

A demonstration pins down three things we reuse verbatim: the scenario, the
operator's initial configuration, and the times of their deliberate
parameter/area-type changes. Everything else (alert handling, idle time) is
re-enacted by an operator model with the demonstrator's estimated timing and
decision rates, so each synthetic run is a plausible alternate history of the
same mission rather than a copy of it.

The perturbing policy picks its action by fixed priority at every decision
point:

1. replicate the demo's next ChangeParams/ChangeAreaType at the first
   decision at or after its demo time, well within a minute of it (each
   demo action replays exactly once);
2. at each configured injection time, a parameter or area-type change drawn
   uniformly from a small menu (one ChangeParams per area type plus one
   ChangeAreaType), fired once;
3. repair the oldest open malfunction;
4. resolve the highest-confidence open detection;
5. resolve a random remaining open alert;
6. otherwise Null.

Detection decisions are drawn through ``simulate_handle`` with the estimated
profile, and every action consumes exactly the profile's mean think time for
its class, so a synthetic mission is fully determined by (demo, profile,
seed).
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .operators import OperatorProfile, simulate_handle
from .scenarios import Scenario, assignment_by_probability, initial_state
from .session import MissionResult, run_mission
from .sim import DetectionOracle, advance_inplace
from .trajlog import Trajectory
from .world import (
    ALTITUDE_BOUNDS,
    CLASS_CHANGE_AREA_TYPE,
    CLASS_CHANGE_PARAMS,
    DETECTION_KINDS,
    LC_HC_BOUNDS,
    VELOCITY_BOUNDS,
    AlertKind,
    AreaLevel,
    ChangeAreaType,
    ChangeParams,
    Composite,
    HandleAlert,
    ManualAssign,
    MissionState,
    NULL,
    OperatorAction,
    action_class_in,
    action_from_dict,
    apply_action,
)

LEVELS = (AreaLevel.LOW, AreaLevel.MEDIUM, AreaLevel.HIGH)


class MissingConfiguration(ValueError):
    """The demonstration carries no initial-configuration record."""


@dataclass(frozen=True)
class PerturbConfig:
    """Knobs of the synthesis scheme. ``injection_times`` are the clocks at
    which rule (2) fires (once each); deltas bound the injected changes."""

    injection_times: tuple[float, ...] = (600.0,)
    demo_window_s: float = 60.0
    threshold_deltas: tuple[float, ...] = (0.05, 0.10)
    altitude_delta: float = 10.0
    velocity_delta: float = 2.0
    variant_delta: float = 0.05

    def to_dict(self) -> dict:
        return {
            "injection_times": list(self.injection_times),
            "demo_window_s": self.demo_window_s,
            "threshold_deltas": list(self.threshold_deltas),
            "altitude_delta": self.altitude_delta,
            "velocity_delta": self.velocity_delta,
            "variant_delta": self.variant_delta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbConfig":
        return cls(
            injection_times=tuple(d.get("injection_times", (600.0,))),
            demo_window_s=d.get("demo_window_s", 60.0),
            threshold_deltas=tuple(d.get("threshold_deltas", (0.05, 0.10))),
            altitude_delta=d.get("altitude_delta", 10.0),
            velocity_delta=d.get("velocity_delta", 2.0),
            variant_delta=d.get("variant_delta", 0.05),
        )


# ---------------------------------------------------------------------------
# initial state
# ---------------------------------------------------------------------------


def demo_config_actions(demo: Trajectory) -> list[OperatorAction]:
    if demo.initial_config is None:
        raise MissingConfiguration("demonstration has no initial configuration")
    return [action_from_dict(d) for d in demo.initial_config]


def complete_assignment(state: MissionState) -> list[ManualAssign]:
    """Assignments for every area not already queued: descending belief,
    round-robin over the drones with the shortest queues (ties to lower id)."""
    taken = {aid for d in state.drones for aid in d.queue}
    missing = sorted(
        (a for a in state.sub_areas if a.id not in taken),
        key=lambda a: (-a.probability, a.id),
    )
    if not missing:
        return []
    queues = {d.id: list(d.queue) for d in state.drones}
    for area in missing:
        did = min(queues, key=lambda i: (len(queues[i]), i))
        queues[did].append(area.id)
    return [
        ManualAssign(did, tuple(queue))
        for did, queue in sorted(queues.items())
        if tuple(queue) != tuple(state.drone(did).queue)
    ]


def select_initial_state(demo: Trajectory) -> MissionState:
    """Rebuild the mission start the demonstrator saw: scenario defaults,
    then their configuration actions, then probability-descending allocation
    of any areas the config left unassigned."""
    scenario = Scenario.from_dict(demo.scenario)
    state = initial_state(scenario)
    for action in demo_config_actions(demo):
        state = apply_action(state, action, 0.0)
    for action in complete_assignment(state):
        state = apply_action(state, action, 0.0)
    state.history.actions_performed = 0
    state.history.action_time_sum.clear()
    state.history.action_time_count.clear()
    return state


# ---------------------------------------------------------------------------
# the perturbing operator model
# ---------------------------------------------------------------------------


def _clamp(v: float, lo: float, hi: float) -> float:
    return min(hi, max(lo, v))


def random_param_change(
    state: MissionState, level: AreaLevel, rng: np.random.Generator, cfg: PerturbConfig
) -> ChangeParams:
    """One random in-bounds delta on a single parameter of `level`."""
    base = state.params[level]
    field = ("lc", "hc", "altitude", "velocity")[rng.integers(4)]
    sign = 1.0 if rng.random() < 0.5 else -1.0
    if field in ("lc", "hc"):
        delta = sign * cfg.threshold_deltas[rng.integers(len(cfg.threshold_deltas))]
        if field == "lc":
            return ChangeParams(level, lc=_clamp(base.lc + delta, LC_HC_BOUNDS[0], base.hc))
        return ChangeParams(level, hc=_clamp(base.hc + delta, base.lc, LC_HC_BOUNDS[1]))
    if field == "altitude":
        return ChangeParams(level, altitude=_clamp(base.altitude + sign * cfg.altitude_delta, *ALTITUDE_BOUNDS))
    return ChangeParams(level, velocity=_clamp(base.velocity + sign * cfg.velocity_delta, *VELOCITY_BOUNDS))


def random_type_change(state: MissionState, rng: np.random.Generator) -> ChangeAreaType:
    area = state.sub_areas[rng.integers(len(state.sub_areas))]
    others = [lv for lv in LEVELS if lv != area.level]
    return ChangeAreaType(area.id, others[rng.integers(len(others))])


class PerturbPolicy:
    """Operator model that re-enacts a demonstration under the priority
    rules above. Plugs into `run_mission` like a scripted operator; think
    times are the profile means exactly (no jitter), so runs are repeatable
    from the seed alone."""

    def __init__(
        self,
        demo: Trajectory,
        profile: OperatorProfile,
        config: Optional[PerturbConfig] = None,
        *,
        inject: bool = True,
    ):
        self.name = f"perturb[{demo.operator}]"
        self.profile = profile
        self.config = config or PerturbConfig()
        self._config_actions = demo_config_actions(demo)
        # the demo's deliberate parameter/area-type timeline, replayed by rule (1)
        self._script = [
            (r.t, action_from_dict(r.action))
            for r in demo.records
            if r.action_class in (CLASS_CHANGE_PARAMS, CLASS_CHANGE_AREA_TYPE)
        ]
        self._inject = inject
        self.reset()

    def reset(self) -> None:
        self._script_idx = 0
        self._injections = sorted(self.config.injection_times) if self._inject else []
        self._inj_idx = 0

    # -- setup phase (mirror of the demo's) ---------------------------------

    def setup_actions(self, state: MissionState) -> list[OperatorAction]:
        return [a for a in self._config_actions if not isinstance(a, ManualAssign)]

    def assignment_actions(self, state: MissionState) -> list[OperatorAction]:
        demo_assigns = [a for a in self._config_actions if isinstance(a, ManualAssign)]
        probe = state.clone()
        for a in demo_assigns:
            probe = apply_action(probe, a, 0.0)
        return demo_assigns + list(complete_assignment(probe))

    # -- live phase ----------------------------------------------------------

    def _priority_action(
        self, state: MissionState, now: float, rng: np.random.Generator
    ) -> OperatorAction:
        if self._script_idx < len(self._script):
            t_demo, action = self._script[self._script_idx]
            # fire at the first decision at/after the demo time: still inside
            # the replication window (decisions come every few seconds), and
            # the dynamics before the change stay aligned with the demo
            if now >= t_demo:
                self._script_idx += 1
                return action
        if self._inj_idx < len(self._injections) and now >= self._injections[self._inj_idx]:
            self._inj_idx += 1
            menu_size = len(LEVELS) + 1
            pick = int(rng.integers(menu_size))
            if pick < len(LEVELS):
                return random_param_change(state, LEVELS[pick], rng, self.config)
            return random_type_change(state, rng)
        open_alerts = state.open_alerts()
        malfunctions = [a for a in open_alerts if a.kind == AlertKind.MALFUNCTION]
        if malfunctions:
            oldest = min(malfunctions, key=lambda a: (a.created_at, a.id))
            return HandleAlert(oldest.id)
        detections = [a for a in open_alerts if a.kind in DETECTION_KINDS]
        if detections:
            best = max(detections, key=lambda a: (a.confidence, -a.id))
            return HandleAlert(best.id)
        if open_alerts:
            return HandleAlert(open_alerts[rng.integers(len(open_alerts))].id)
        return NULL

    def decide(
        self, state: MissionState, now: float, rng: np.random.Generator, advice=None
    ) -> Optional[tuple[OperatorAction, float]]:
        action = self._priority_action(state, now, rng)
        if isinstance(action, HandleAlert) and action.decision is None:
            decision, _ = simulate_handle(state, state.alert(action.alert_id), self.profile, rng)
            action = replace(action, decision=decision)
        return action, self.profile.mean_time(action_class_in(state, action))

    def sample_elapsed(self, mean: float, rng: np.random.Generator) -> float:
        return mean


class VariantPolicy(PerturbPolicy):
    """PerturbPolicy with rule (2) disabled and, for direction +1/-1, a
    single bundled threshold shift (lc and hc of every area type) pinned to
    the mission midpoint. Think times are clipped so a decision lands on the
    midpoint exactly."""

    def __init__(self, demo, profile, config=None, *, direction: int = 0):
        super().__init__(demo, profile, config, inject=False)
        self.direction = direction

    def reset(self) -> None:
        super().reset()
        self._midpoint: Optional[float] = None
        self._fired_variant = False
        self._next_gap: Optional[float] = None

    def _variant_action(self, state: MissionState) -> Composite:
        delta = self.direction * self.config.variant_delta
        parts = []
        for level in LEVELS:
            p = state.params[level]
            lc = _clamp(p.lc + delta, LC_HC_BOUNDS[0], LC_HC_BOUNDS[1])
            hc = _clamp(p.hc + delta, LC_HC_BOUNDS[0], LC_HC_BOUNDS[1])
            parts.append(ChangeParams(level, lc=min(lc, hc), hc=hc))
        return Composite(tuple(parts))

    def decide(self, state, now, rng, advice=None):
        if self._midpoint is None:
            self._midpoint = state.duration / 2.0
        if self.direction and not self._fired_variant and now >= self._midpoint:
            self._fired_variant = True
            action = self._variant_action(state)
            self._next_gap = None
            return action, self.profile.mean_time(action_class_in(state, action))
        decision = super().decide(state, now, rng, advice)
        # stop short of the midpoint so the variant change lands on it
        if decision is not None and self.direction and not self._fired_variant:
            _, mean = decision
            if now < self._midpoint < now + mean:
                self._next_gap = self._midpoint - now
        return decision

    def sample_elapsed(self, mean: float, rng: np.random.Generator) -> float:
        if self._next_gap is not None:
            gap, self._next_gap = self._next_gap, None
            return gap
        return mean


# ---------------------------------------------------------------------------
# spec'd single-step ops (the generate loop composes these through run_mission)
# ---------------------------------------------------------------------------


def perturb_action(
    state: MissionState, policy: PerturbPolicy, now: float, rng: np.random.Generator
) -> OperatorAction:
    """The priority-rule choice at one decision point (rule bookkeeping
    lives on the policy)."""
    return policy._priority_action(state, now, rng)


def get_new_state(
    state: MissionState,
    action: OperatorAction,
    profile: OperatorProfile,
    scenario: Scenario,
    oracle: DetectionOracle,
    rng: np.random.Generator,
) -> MissionState:
    """Apply one synthesized action at the profile's mean think time, then
    let the mission dynamics catch up to the new clock."""
    if isinstance(action, HandleAlert) and action.decision is None:
        decision, _ = simulate_handle(state, state.alert(action.alert_id), profile, rng)
        action = replace(action, decision=decision)
    nxt = apply_action(state, action, profile.mean_time(action_class_in(state, action)))
    advance_inplace(nxt, scenario, oracle)
    return nxt


# ---------------------------------------------------------------------------
# batch generation
# ---------------------------------------------------------------------------


def _child_seeds(seed: int, k: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(k, dtype=np.uint64)]


def _run_policy(demo: Trajectory, policy: PerturbPolicy, seed: int) -> MissionResult:
    scenario = Scenario.from_dict(demo.scenario)
    return run_mission(scenario, seed, policy)


def generate(
    demo: Trajectory,
    k: int,
    profile: OperatorProfile,
    config: Optional[PerturbConfig] = None,
    seed: int = 0,
) -> list[Trajectory]:
    """k alternate histories of the demo's mission, one rng substream each."""
    out: list[Trajectory] = []
    for i, child in enumerate(_child_seeds(seed, k)):
        result = _run_policy(demo, PerturbPolicy(demo, profile, config), child)
        traj = result.trajectory
        traj.meta = {"origin": demo.operator, "synthetic_index": i}
        out.append(traj)
    return out


VARIANT_LABELS = ("none", "increase", "decrease")
_DIRECTIONS = {"none": 0, "increase": 1, "decrease": -1}


def generate_cp_variants(
    demo: Trajectory,
    profile: OperatorProfile,
    config: Optional[PerturbConfig] = None,
    seed: int = 0,
    per_label: int = 10,
) -> list[Trajectory]:
    """30 synthetics in labeled thirds: untouched thresholds, a midpoint
    raise of lc+hc across all area types, and a midpoint lowering. Injection
    rule (2) is off so the midpoint change is the only planted difference."""
    out: list[Trajectory] = []
    seeds = _child_seeds(seed, per_label * len(VARIANT_LABELS))
    i = 0
    for label in VARIANT_LABELS:
        for _ in range(per_label):
            policy = VariantPolicy(demo, profile, config, direction=_DIRECTIONS[label])
            result = _run_policy(demo, policy, seeds[i])
            traj = result.trajectory
            traj.label = label
            traj.meta = {"origin": demo.operator, "variant": label, "synthetic_index": i}
            out.append(traj)
            i += 1
    return out
