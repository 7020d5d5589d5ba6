"""Headless mission runner: one loop that drives dynamics, an operator
model, and (optionally) the advising agent, while recording a trajectory.

The same primitives (apply_action + advance) back the live service; this
runner is what demonstrations, synthetic trajectories, and evaluation
sweeps share, so a mission is fully determined by (scenario, seed,
operator behavior, advisor presence).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .features import featurize
from .operators import ScriptedOperator
from .scenarios import Scenario, initial_state
from .sim import DetectionOracle, advance_inplace, coverage_fraction
from .trajlog import Trajectory, TrajectoryRecord
from .world import (
    DETECTION_KINDS,
    MissionState,
    action_class_in,
    action_to_dict,
    apply_action,
)

EPS = 1e-9


def mission_metrics(state: MissionState) -> dict:
    h = state.history
    det_alerts = sum(1 for a in state.alerts if a.kind in DETECTION_KINDS)
    return {
        "coverage": round(coverage_fraction(state), 6),
        "targets_found": state.targets_found(),
        "det_alerts": det_alerts,
        "fp": h.false_positives,
        "fn": h.false_negatives,
        "wait_sum": round(h.wait_time_sum, 3),
        "handled": h.alerts_handled,
        "reward": 0.0,
    }


def summarize(state: MissionState) -> dict:
    h = state.history
    return {
        "clock": state.clock,
        "duration": state.duration,
        "coverage": round(coverage_fraction(state), 6),
        "targets_found": state.targets_found(),
        "total_targets": len(state.targets),
        "approved": h.approved,
        "rejected": h.rejected,
        "false_positives": h.false_positives,
        "false_negatives": h.false_negatives,
        "wait_time_sum": round(h.wait_time_sum, 3),
        "alerts_handled": h.alerts_handled,
        "alerts_total": len(state.alerts),
        "detection_alerts": sum(1 for a in state.alerts if a.kind in DETECTION_KINDS),
        "actions_performed": h.actions_performed,
    }


@dataclass
class MissionResult:
    trajectory: Trajectory
    state: MissionState
    events: list = field(default_factory=list)
    advice_log: list = field(default_factory=list)


def run_mission(
    scenario: Scenario,
    seed: int,
    operator: ScriptedOperator,
    *,
    advisor=None,
    dt: float = 1.0,
    until: Optional[float] = None,
    checkpoint_every: Optional[float] = None,
) -> MissionResult:
    """Run to mission end, or to `until` seconds for prefix replays (the
    prefix of a run is bit-identical to the full run with the same seed).
    Checkpoint records default to every duration/20 so the 10/50/90%
    sampling points always hit an exactly-timed snapshot."""
    oracle_seq, op_seq, _ = np.random.SeedSequence(seed).spawn(3)
    oracle = DetectionOracle(scenario.oracle, np.random.default_rng(oracle_seq))
    op_rng = np.random.default_rng(op_seq)

    state = initial_state(scenario)
    operator.reset()
    if advisor is not None:
        advisor.reset()

    config_actions = operator.setup_actions(state) + operator.assignment_actions(state)
    for a in config_actions:
        state = apply_action(state, a, 0.0)
    # setup-phase bookkeeping should not count toward live behavior stats
    state.history.actions_performed = 0
    state.history.action_time_sum.clear()
    state.history.action_time_count.clear()

    events: list = [{"t": 0.0, "type": "mission_start"}]
    records: list[TrajectoryRecord] = []
    advice_log: list = []
    # fixed-cadence snapshots make feature sampling at mission fractions
    # exact regardless of how sparsely the operator acts
    cp_every = scenario.duration / 20.0 if checkpoint_every is None else checkpoint_every
    next_cp = cp_every
    last_found = state.targets_found()

    def record(action_dict: dict, cls, elapsed: float) -> None:
        nonlocal last_found
        found = state.targets_found()
        metrics = mission_metrics(state)
        metrics["reward"] = 1.0 if found > last_found else 0.0
        last_found = found
        records.append(
            TrajectoryRecord(
                t=state.clock, action=action_dict, action_class=cls, elapsed=elapsed,
                features=featurize(state).tolist(), metrics=metrics, digest=state.digest(),
            )
        )

    def advance_to(target: float) -> None:
        nonlocal next_cp
        while next_cp < min(target, state.duration) - EPS:
            events.extend(advance_inplace(state, scenario, oracle, to_clock=next_cp))
            record({"type": "checkpoint"}, None, 0.0)
            next_cp += cp_every
        events.extend(advance_inplace(state, scenario, oracle, to_clock=target))
        if abs(next_cp - state.clock) <= EPS and next_cp < state.duration - EPS:
            record({"type": "checkpoint"}, None, 0.0)
            next_cp += cp_every

    record({"type": "init"}, None, 0.0)

    while not state.terminal:
        if until is not None and state.clock >= until:
            break
        now = state.clock
        advice = advisor.maybe_advise(state, now) if advisor is not None else None
        if advice is not None and advice.entries:
            advice_log.append((now, advice))
            events.append({"t": now, "type": "advice", "advice": advice.to_dict()})

        decision = operator.decide(state, now, op_rng, advice)
        if decision is None:
            advance_to(min(state.duration, now + dt))
            continue

        action, mean_time = decision
        elapsed = operator.sample_elapsed(mean_time, op_rng)
        cls = action_class_in(state, action)
        state = apply_action(state, action, elapsed)
        events.append({"t": now, "type": "action", "action": action_to_dict(action), "elapsed": round(elapsed, 3)})
        advance_to(state.clock)
        record(action_to_dict(action), cls, round(elapsed, 3))

    if state.terminal:
        record({"type": "terminal"}, None, 0.0)
    summary = summarize(state)
    events.append({"t": state.clock, "type": "mission_end", "summary": summary})

    trajectory = Trajectory(
        scenario=scenario.to_dict(),
        seed=seed,
        operator=operator.name,
        initial_config=[action_to_dict(a) for a in config_actions],
        records=records,
        summary=summary,
    )
    return MissionResult(trajectory=trajectory, state=state, events=events, advice_log=advice_log)
