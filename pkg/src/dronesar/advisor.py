"""Advice generation and ranking.

Candidates come in two phases. Phase one enumerates simple actions:
scan-parameter steps per area type, re-grades for promising unscanned
sub-areas, a handle per open alert, and a nudge for any silently stalled
drone. Phase two bundles the best-scoring parameter step of each kind
across area types into one composite intervention. Every candidate is
scored by the reward model on a projected feature vector, never by
stepping the simulator, so the volume stays affordable: at most 6 steps
per (type, parameter), `ct_top_k` re-grades times two levels, one handle
per open alert, one nudge per drone, and a handful of bundles.

Probability edits are deliberately absent from the candidate set: the
beliefs they encode aren't observable by the advisor.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .features import featurize, feature_index
from .forest import RegressionForest
from .world import (
    ALTITUDE_BOUNDS,
    AlertKind,
    AreaLevel,
    ChangeAreaType,
    ChangeParams,
    Composite,
    DETECTION_KINDS,
    Decision,
    DroneStatus,
    HandleAlert,
    LC_HC_BOUNDS,
    LEVELS,
    ManualFly,
    MissionState,
    OperatorAction,
    VELOCITY_BOUNDS,
    WorldError,
    action_class_in,
    action_to_dict,
    check_action,
)

STEP_MULTIPLIERS = (0.5, 1.0, 2.0)
DEFAULT_STEPS = {"lc": 0.05, "hc": 0.05, "altitude": 10.0, "velocity": 2.0}
_PARAM_BOUNDS = {
    "lc": LC_HC_BOUNDS,
    "hc": LC_HC_BOUNDS,
    "altitude": ALTITUDE_BOUNDS,
    "velocity": VELOCITY_BOUNDS,
}
_PARAMS = ("lc", "hc", "altitude", "velocity")

# tie-break order after value, detection-first and confidence are applied
FAMILY_ORDER = (
    "handle_detection",
    "handle_malfunction",
    "handle_intel",
    "change_params",
    "change_area_type",
    "manual_fly",
)

# families whose value estimate must clear the significance gate; the rest
# are things the operator does anyway, where acting on a noisy value is free
_GATED_FAMILIES = frozenset({"change_params", "change_area_type"})

_I_REMAINING = feature_index("remaining_time")
_I_APPROVED = feature_index("approved")
_I_ACTIONS = feature_index("actions_performed")
_I_OPEN = {
    AlertKind.DETECTION_LOW: feature_index("open_low"),
    AlertKind.DETECTION_HIGH: feature_index("open_high"),
    AlertKind.MALFUNCTION: feature_index("open_malfunction"),
    AlertKind.INTELLIGENCE: feature_index("open_intel"),
}
_STALL_EXEMPT = (DroneStatus.IDLE, DroneStatus.WAITING_ON_ALERT, DroneStatus.MALFUNCTIONING)


@dataclass
class AdvisorConfig:
    c: int = 3
    cadence_s: float = 10.0
    stall_window_s: float = 60.0
    ct_top_k: int = 10
    min_step_observations: int = 3
    # advise only when the mean per-tree gain clears this many standard
    # errors; at 0 every nonnegative point estimate gets through
    z_gate: float = 2.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class Candidate:
    action: OperatorAction
    family: str
    rationale: str
    ordinal: int
    confidence: float = 0.0
    features: Optional[np.ndarray] = None
    value: float = 0.0


@dataclass(frozen=True)
class AdviceEntry:
    action: OperatorAction
    value: float
    rationale: str


@dataclass
class Advice:
    entries: list[AdviceEntry]
    generated_at: float

    def to_dict(self) -> dict:
        return {
            "generated_at": self.generated_at,
            "entries": [
                {
                    "action": action_to_dict(e.action),
                    "value": round(e.value, 4),
                    "rationale": e.rationale,
                }
                for e in self.entries
            ],
        }


def param_step_sizes(
    demos: Sequence, min_observations: int = 3
) -> dict[str, float]:
    """Step size x per scan parameter: the mean absolute change seen in the
    demonstrations once there are enough of them, else the stock step."""
    seen: dict[str, list[float]] = {k: [] for k in DEFAULT_STEPS}

    def eat(action: dict, params: dict) -> None:
        if action.get("type") == "composite":
            for p in action["parts"]:
                eat(p, params)
            return
        if action.get("type") != "change_params":
            return
        cur = params[action["level"]]
        for k in DEFAULT_STEPS:
            if action.get(k) is not None:
                seen[k].append(abs(action[k] - cur[k]))
                cur[k] = action[k]

    for tr in demos:
        params = {lv: dict(p) for lv, p in tr.scenario["presets"].items()}
        for a in tr.initial_config:
            eat(a, params)
        for r in tr.records:
            eat(r.action, params)

    out = {}
    for k, obs in seen.items():
        m = float(np.mean(obs)) if len(obs) >= min_observations else 0.0
        out[k] = m if m > 1e-9 else DEFAULT_STEPS[k]
    return out


def _cp_rationale(lv: AreaLevel, param: str, cur: float, new: float) -> str:
    verb = "raise" if new > cur else "lower"
    return f"{verb} {param} for {lv.value} areas to {new:g} (now {cur:g})"


def generate_simple_actions(
    state: MissionState,
    config: Optional[AdvisorConfig] = None,
    steps: Optional[dict[str, float]] = None,
) -> list[Candidate]:
    cfg = config or AdvisorConfig()
    steps = steps or DEFAULT_STEPS
    out: list[Candidate] = []

    for li, lv in enumerate(LEVELS):
        cur = state.params[lv]
        for pi, param in enumerate(_PARAMS):
            lo, hi = _PARAM_BOUNDS[param]
            base = getattr(cur, param)
            values: list[float] = []
            for m in STEP_MULTIPLIERS:
                for sign in (1.0, -1.0):
                    v = min(max(base + sign * m * steps[param], lo), hi)
                    if abs(v - base) < 1e-9 or any(abs(v - w) < 1e-9 for w in values):
                        continue
                    values.append(v)
            for vi, v in enumerate(values):
                action = ChangeParams(lv, **{param: round(v, 6)})
                try:
                    check_action(state, action)
                except WorldError:
                    continue  # e.g. lc step crossing above hc
                out.append(Candidate(
                    action=action, family="change_params",
                    rationale=_cp_rationale(lv, param, base, round(v, 6)),
                    ordinal=(li * len(_PARAMS) + pi) * len(STEP_MULTIPLIERS) * 2 + vi,
                ))

    unscanned = [a for a in state.sub_areas if a.scanned_fraction <= 1e-9]
    unscanned.sort(key=lambda a: (-a.probability, a.id))
    for area in unscanned[: cfg.ct_top_k]:
        for lv in LEVELS:
            if lv is area.level:
                continue
            out.append(Candidate(
                action=ChangeAreaType(area.id, lv), family="change_area_type",
                rationale=f"re-grade unscanned area {area.id} (p={area.probability:.3f}) "
                          f"from {area.level.value} to {lv.value}",
                ordinal=area.id,
            ))

    for alert in state.alerts:
        if not alert.open:
            continue
        if alert.kind in DETECTION_KINDS:
            hc = state.params[state.sub_areas[alert.area_id].level].hc
            decision = Decision.APPROVE if alert.confidence >= hc else Decision.REJECT
            out.append(Candidate(
                action=HandleAlert(alert.id, decision), family="handle_detection",
                rationale=f"resolve detection alert {alert.id} "
                          f"(confidence {alert.confidence:.2f})",
                ordinal=alert.id, confidence=alert.confidence,
            ))
        elif alert.kind is AlertKind.MALFUNCTION:
            out.append(Candidate(
                action=HandleAlert(alert.id, Decision.REPAIR), family="handle_malfunction",
                rationale=f"send repairs to drone {alert.drone_id} (alert {alert.id})",
                ordinal=alert.id,
            ))
        else:
            where = ",".join(str(i) for i in alert.intel_area_ids)
            out.append(Candidate(
                action=HandleAlert(alert.id, Decision.ACKNOWLEDGE), family="handle_intel",
                rationale=f"acknowledge field report on area(s) {where}",
                ordinal=alert.id,
            ))

    mal_drones = {
        a.drone_id for a in state.alerts
        if a.kind is AlertKind.MALFUNCTION and a.open
    }
    for d in state.drones:
        if d.status in _STALL_EXEMPT or d.id in mal_drones:
            continue
        still_for = state.clock - d.last_moved_at
        if still_for < cfg.stall_window_s:
            continue
        aid = d.current_area()
        if aid is not None:
            rect = state.sub_areas[aid].rect
            row, col = rect.row0 + rect.rows // 2, rect.col0 + rect.cols // 2
        else:
            row, col = int(d.y), int(d.x)
        out.append(Candidate(
            action=ManualFly(d.id, row, col), family="manual_fly",
            rationale=f"drone {d.id} reports {d.status.value} but has not moved "
                      f"for {int(still_for)} s; redirect it",
            ordinal=d.id,
        ))

    return out


# --- expected state -----------------------------------------------------------


def _level_confidences(state: MissionState, moved: Optional[tuple[int, AreaLevel]] = None):
    """Detection confidences bucketed by each alert area's level, with one
    area optionally re-graded."""
    by_level: dict[AreaLevel, list[float]] = {lv: [] for lv in LEVELS}
    for a in state.alerts:
        if a.kind not in DETECTION_KINDS or a.area_id is None:
            continue
        lv = state.sub_areas[a.area_id].level
        if moved is not None and a.area_id == moved[0]:
            lv = moved[1]
        by_level[lv].append(a.confidence)
    return by_level


def _recount_block(vec: np.ndarray, lv: AreaLevel, confs: list[float]) -> None:
    p = lv.value
    lc, hc = vec[feature_index(f"{p}_lc")], vec[feature_index(f"{p}_hc")]
    above_hc = sum(1 for c in confs if c >= hc)
    above_lc = sum(1 for c in confs if c >= lc)
    vec[feature_index(f"{p}_det_above_hc")] = above_hc
    vec[feature_index(f"{p}_det_below_hc")] = len(confs) - above_hc
    vec[feature_index(f"{p}_det_above_lc")] = above_lc
    vec[feature_index(f"{p}_det_below_lc")] = len(confs) - above_lc


def expected_state(
    state: MissionState,
    action: OperatorAction,
    base: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Project the feature vector past `action` without stepping the world.

    Only the direct consequences move: the operator's time is spent, alert
    books and threshold recounts update, parameter slots shift. Whatever
    the drones would do meanwhile is deliberately not modeled.
    """
    vec = (featurize(state) if base is None else base).copy()
    for part in action.parts if isinstance(action, Composite) else (action,):
        cls = action_class_in(state, part)
        vec[_I_REMAINING] -= vec[feature_index(f"mean_time_{cls}")]
        vec[_I_ACTIONS] += 1

        if isinstance(part, HandleAlert):
            alert = state.alert(part.alert_id)
            vec[_I_OPEN[alert.kind]] = max(vec[_I_OPEN[alert.kind]] - 1, 0.0)
            if alert.kind in DETECTION_KINDS:
                h = state.history
                handled = h.approved + h.rejected
                frac = h.approved / handled if handled else 0.5
                vec[_I_APPROVED] += frac
        elif isinstance(part, ChangeParams):
            p = part.level.value
            for k in _PARAMS:
                new = getattr(part, k)
                if new is None:
                    continue
                i = feature_index(f"{p}_{k}")
                vec[feature_index(f"{p}_prev_{k}")] = vec[i]
                vec[i] = new
            _recount_block(vec, part.level, _level_confidences(state)[part.level])
        elif isinstance(part, ChangeAreaType):
            old = state.sub_areas[part.area_id].level
            if part.level is not old:
                moved = _level_confidences(state, moved=(part.area_id, part.level))
                _recount_block(vec, old, moved[old])
                _recount_block(vec, part.level, moved[part.level])
    return vec


# --- phase two ----------------------------------------------------------------


def compose_complex(state: MissionState, scored: Sequence[Candidate]) -> list[Candidate]:
    """Bundle phase-one winners: per parameter, the best positive step of
    each area type as one composite; likewise the best few re-grades."""
    out: list[Candidate] = []
    for pi, param in enumerate(_PARAMS):
        best: dict[AreaLevel, Candidate] = {}
        for cd in scored:
            a = cd.action
            if not (isinstance(a, ChangeParams) and getattr(a, param) is not None):
                continue
            if cd.value <= 0:
                continue
            cur = best.get(a.level)
            if cur is None or cd.value > cur.value:
                best[a.level] = cd
        if len(best) < 2:
            continue
        parts = tuple(best[lv].action for lv in LEVELS if lv in best)
        out.append(Candidate(
            action=Composite(parts), family="change_params",
            rationale=f"adjust {param} across all graded types: "
                      + "; ".join(best[lv].rationale for lv in LEVELS if lv in best),
            ordinal=100 + pi,
        ))

    best_ct: dict[int, Candidate] = {}
    for cd in scored:
        if isinstance(cd.action, ChangeAreaType) and cd.value > 0:
            cur = best_ct.get(cd.action.area_id)
            if cur is None or cd.value > cur.value:
                best_ct[cd.action.area_id] = cd
    top = sorted(best_ct.values(), key=lambda c: (-c.value, c.action.area_id))[:3]
    if len(top) >= 2:
        parts = tuple(c.action for c in top)
        ids = ",".join(str(c.action.area_id) for c in top)
        out.append(Candidate(
            action=Composite(parts), family="change_area_type",
            rationale=f"re-grade areas {ids} together", ordinal=200,
        ))
    return out


# --- ranking ------------------------------------------------------------------


def _rank_key(cd: Candidate):
    return (
        -cd.value,
        0 if cd.family == "handle_detection" else 1,
        -cd.confidence,
        FAMILY_ORDER.index(cd.family),
        cd.ordinal,
    )


def rank(candidates: Sequence[Candidate], c: int, generated_at: float) -> Advice:
    kept = sorted((cd for cd in candidates if cd.value >= 0.0), key=_rank_key)
    return Advice(
        entries=[AdviceEntry(cd.action, cd.value, cd.rationale) for cd in kept[:c]],
        generated_at=generated_at,
    )


class Advisor:
    """Scores candidates with the reward model every `cadence_s` seconds,
    and immediately when a new alert shows up."""

    def __init__(
        self,
        model: RegressionForest,
        steps: Optional[dict[str, float]] = None,
        config: Optional[AdvisorConfig] = None,
    ):
        self.model = model
        self.steps = dict(DEFAULT_STEPS if steps is None else steps)
        self.config = config or AdvisorConfig()
        self.reset()

    def reset(self) -> None:
        self._next_at = 0.0
        self._seen_alert = -1

    def maybe_advise(self, state: MissionState, now: float) -> Optional[Advice]:
        top_alert = max((a.id for a in state.alerts), default=-1)
        if now + 1e-9 < self._next_at and top_alert <= self._seen_alert:
            return None
        self._seen_alert = top_alert
        self._next_at = now + self.config.cadence_s
        return self.advise(state, now)

    def advise(self, state: MissionState, now: Optional[float] = None) -> Advice:
        base = featurize(state)
        # a candidate's value is the predicted gain over standing pat, so
        # an action must buy more utility than its own time costs
        here = self.model.predict_each(base[None, :])[:, 0]
        cands = self._score(state, generate_simple_actions(state, self.config, self.steps), base, here)
        extra = self._score(state, compose_complex(state, cands), base, here)
        return rank(cands + extra, self.config.c, state.clock if now is None else now)

    def _score(
        self, state: MissionState, cands: list[Candidate], base: np.ndarray, here: np.ndarray
    ) -> list[Candidate]:
        """Value each candidate as its mean per-tree gain.

        Configuration candidates (parameter and area-type edits) must clear
        the bagging noise by z_gate standard errors: point estimates between
        nearby feature vectors swing by whole label units, and an ungated
        advisor would retune thresholds all mission chasing that noise.
        Alert handling and drone recovery only need a nonnegative estimate;
        they are work the operator does anyway, so a noisy value costs
        nothing and the gate would mostly starve them out.
        """
        if not cands:
            return []
        for cd in cands:
            cd.features = expected_state(state, cd.action, base)
        diffs = self.model.predict_each(np.stack([cd.features for cd in cands])) - here[:, None]
        mean = diffs.mean(axis=0)
        se = diffs.std(axis=0, ddof=1) / np.sqrt(diffs.shape[0])
        kept = []
        for cd, m, s in zip(cands, mean, se):
            cd.value = float(m)
            if cd.family in _GATED_FAMILIES:
                if m > self.config.z_gate * s:
                    kept.append(cd)
            elif m >= 0.0:
                kept.append(cd)
        return kept
