"""State featurization shared by the reward model, trajectory signatures,
and the advisor's expected-state evaluation.

The vector has three blocks:

* operator (6): running mean handle time per action class, defaults until
  the class has been observed,
* environment (9): remaining time, approval count, false-decision fraction,
  open alerts per kind, lowest confidence that produced a find, actions
  performed,
* one 13-wide block per area type: unsearched fraction, counts of past
  detection confidences against the type's current thresholds, and the
  current + previous scan parameters.
"""
from __future__ import annotations

import numpy as np

from .world import (
    ACTION_CLASSES,
    AlertKind,
    DETECTION_KINDS,
    LEVELS,
    MissionState,
)

_ENV_NAMES = [
    "remaining_time",
    "approved",
    "false_decision_fraction",
    "open_low",
    "open_high",
    "open_malfunction",
    "open_intel",
    "lowest_conf_detection",
    "actions_performed",
]

_TYPE_NAMES = [
    "unsearched_fraction",
    "det_above_hc",
    "det_below_hc",
    "det_above_lc",
    "det_below_lc",
    "lc",
    "hc",
    "velocity",
    "altitude",
    "prev_lc",
    "prev_hc",
    "prev_velocity",
    "prev_altitude",
]

FEATURE_NAMES: list[str] = (
    [f"mean_time_{cls}" for cls in ACTION_CLASSES]
    + _ENV_NAMES
    + [f"{lv.value}_{n}" for lv in LEVELS for n in _TYPE_NAMES]
)

N_FEATURES = len(FEATURE_NAMES)  # 54

_INDEX = {name: i for i, name in enumerate(FEATURE_NAMES)}


def feature_index(name: str) -> int:
    return _INDEX[name]


def featurize(state: MissionState) -> np.ndarray:
    h = state.history
    vals = np.empty(N_FEATURES)
    i = 0
    for cls in ACTION_CLASSES:
        vals[i] = h.mean_action_time(cls)
        i += 1

    vals[i] = state.duration - state.clock
    vals[i + 1] = h.approved
    handled_det = h.approved + h.rejected
    vals[i + 2] = (h.false_positives + h.false_negatives) / handled_det if handled_det else 0.0
    open_counts = {k: 0 for k in AlertKind}
    for a in state.alerts:
        if a.open:
            open_counts[a.kind] += 1
    vals[i + 3] = open_counts[AlertKind.DETECTION_LOW]
    vals[i + 4] = open_counts[AlertKind.DETECTION_HIGH]
    vals[i + 5] = open_counts[AlertKind.MALFUNCTION]
    vals[i + 6] = open_counts[AlertKind.INTELLIGENCE]
    vals[i + 7] = h.lowest_conf_detection
    vals[i + 8] = h.actions_performed
    i += 9

    det_conf_by_level: dict = {lv: [] for lv in LEVELS}
    for a in state.alerts:
        if a.kind in DETECTION_KINDS and a.area_id is not None:
            det_conf_by_level[state.sub_areas[a.area_id].level].append(a.confidence)

    for lv in LEVELS:
        areas = [a for a in state.sub_areas if a.level is lv]
        cells = sum(a.rect.n_cells for a in areas)
        if cells:
            unsearched = sum((1.0 - a.scanned_fraction) * a.rect.n_cells for a in areas) / cells
        else:
            unsearched = 0.0
        p = state.params[lv]
        prev = h.prev_params.get(lv, p)
        confs = det_conf_by_level[lv]
        above_hc = sum(1 for c in confs if c >= p.hc)
        above_lc = sum(1 for c in confs if c >= p.lc)
        vals[i : i + 13] = [
            unsearched,
            above_hc,
            len(confs) - above_hc,
            above_lc,
            len(confs) - above_lc,
            p.lc,
            p.hc,
            p.velocity,
            p.altitude,
            prev.lc,
            prev.hc,
            prev.velocity,
            prev.altitude,
        ]
        i += 13
    return vals
