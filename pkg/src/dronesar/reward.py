"""Utility labels and the reward-model training loop.

A record earns reward 1 when a true target was approved at it. Finds are
far too sparse to rank candidate actions on their own, so the training
label mixes the discounted return from a state with six cheaper progress
measures (psi below), and `weight_search` picks the mix that both fits
well and ranks known-good parameter changes above known-bad ones.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .features import FEATURE_NAMES, feature_index
from .forest import ForestConfig, RegressionForest, fit_forest
from .trajlog import Trajectory
from .world import CLASS_HANDLE_DETECTION

DEFAULT_GAMMA = 0.95

PSI_NAMES = (
    "coverage_ahead",      # area fraction scanned from here to mission end
    "mean_wait",           # average alert waiting time over the whole run
    "detection_load",      # detection alerts ahead vs. what the operator can handle
    "false_decisions",     # false positives + false negatives at mission end
    "found_so_far",        # targets correctly found up to here
    "found_final",         # targets correctly found by mission end
)
N_PSI = len(PSI_NAMES)

_IDX_DET_TIME = feature_index(f"mean_time_{CLASS_HANDLE_DETECTION}")


class DimensionMismatch(ValueError):
    pass


class DatasetTooSmall(ValueError):
    pass


class NoCandidatePasses(RuntimeError):
    pass


@dataclass(frozen=True)
class UtilityWeights:
    """Label weights: U(s) = w0 * Rbar(s) + sum_i psi_w[i] * psi_i(s)."""

    w0: float
    psi: tuple[float, ...] = (0.0,) * N_PSI
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        vals = (self.w0, *self.psi, self.gamma)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("weights must be finite")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma {self.gamma} outside [0, 1]")

    def to_dict(self) -> dict:
        return {"w0": self.w0, "psi": list(self.psi), "gamma": self.gamma}

    @classmethod
    def from_dict(cls, d: dict) -> "UtilityWeights":
        return cls(w0=d["w0"], psi=tuple(d["psi"]), gamma=d["gamma"])


def _rewards(traj: Trajectory) -> np.ndarray:
    return np.array([r.metrics.get("reward", 0.0) for r in traj.records])


def _rbar_all(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """Discounted return at every record, by backward recursion."""
    out = np.empty_like(rewards)
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


def discounted_return(traj: Trajectory, j: int, gamma: float) -> float:
    if not 0 <= j < len(traj.records):
        raise IndexError(f"record index {j} out of range")
    return float(_rbar_all(_rewards(traj)[j:], gamma)[0])


def psi_values(traj: Trajectory, j: int) -> np.ndarray:
    """The six auxiliary label terms at record j.

    (a) coverage gained from j to the end, (b) mean alert waiting time
    over the whole run, (c) detection alerts from j to the end divided by
    the operator's handling capacity (remaining time over their mean
    detection-handle time), (d) false positives plus false negatives at
    the end, (e) targets found up to j, (f) targets found at the end.
    Averages and ratios over empty sets are 0.
    """
    rec = traj.records[j]
    last = traj.records[-1]
    m, me = rec.metrics, last.metrics

    handled = me["handled"]
    mean_wait = me["wait_sum"] / handled if handled else 0.0

    remaining = traj.duration - rec.t
    handle_time = rec.features[_IDX_DET_TIME]
    capacity = remaining / handle_time if handle_time > 0 else 0.0
    det_ahead = me["det_alerts"] - m["det_alerts"]
    load = det_ahead / capacity if capacity > 0 else 0.0

    return np.array([
        me["coverage"] - m["coverage"],
        mean_wait,
        load,
        float(me["fp"] + me["fn"]),
        float(m["targets_found"]),
        float(me["targets_found"]),
    ])


def utility(traj: Trajectory, j: int, weights: UtilityWeights) -> float:
    psi = psi_values(traj, j)
    if len(weights.psi) != len(psi):
        raise DimensionMismatch(f"{len(weights.psi)} psi weights for {len(psi)} terms")
    return weights.w0 * discounted_return(traj, j, weights.gamma) + float(
        np.dot(np.asarray(weights.psi), psi)
    )


def is_action_record(rec) -> bool:
    return rec.action.get("type") not in ("init", "checkpoint", "terminal")


@dataclass
class _Collected:
    X: np.ndarray
    psi: np.ndarray
    rewards: list[np.ndarray]     # per trajectory, all records
    rows: list[tuple[int, int]]   # (trajectory index, record index) per dataset row


def _collect(
    trajectories: Sequence[Trajectory], stride: int, action_states_only: bool
) -> _Collected:
    feats, psis, rows = [], [], []
    rewards = []
    for ti, tr in enumerate(trajectories):
        rewards.append(_rewards(tr))
        picked = [
            ri for ri, rec in enumerate(tr.records)
            if not action_states_only or is_action_record(rec)
        ]
        for ri in picked[::stride]:
            feats.append(tr.records[ri].features)
            psis.append(psi_values(tr, ri))
            rows.append((ti, ri))
    if not feats:
        return _Collected(np.empty((0, len(FEATURE_NAMES))), np.empty((0, N_PSI)), rewards, rows)
    return _Collected(np.asarray(feats, dtype=float), np.asarray(psis), rewards, rows)


def _labels(col: _Collected, weights: UtilityWeights) -> np.ndarray:
    rbar = [_rbar_all(r, weights.gamma) for r in col.rewards]
    w_psi = np.asarray(weights.psi)
    y = np.empty(len(col.rows))
    for k, (ti, ri) in enumerate(col.rows):
        y[k] = weights.w0 * rbar[ti][ri] + float(np.dot(w_psi, col.psi[k]))
    return y


def build_dataset(
    trajectories: Sequence[Trajectory],
    weights: UtilityWeights,
    stride: int = 1,
    action_states_only: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """(features, utility label) per sampled record, default every action record."""
    if len(weights.psi) != N_PSI:
        raise DimensionMismatch(f"{len(weights.psi)} psi weights for {N_PSI} terms")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    col = _collect(trajectories, stride, action_states_only)
    return col.X, _labels(col, weights)


def export_dataset(X: np.ndarray, y: np.ndarray, path) -> None:
    header = ",".join(list(FEATURE_NAMES) + ["label"])
    np.savetxt(path, np.column_stack([X, y]), delimiter=",", header=header,
               comments="", fmt="%.10g")


@dataclass
class TrainResult:
    model: RegressionForest
    mae: float
    n_train: int
    n_test: int
    label_range: float


def train(
    X: np.ndarray,
    y: np.ndarray,
    config: Optional[ForestConfig] = None,
    split: float = 0.8,
    seed: int = 0,
    min_rows: int = 40,
) -> TrainResult:
    """Fit the forest on a shuffled split and report held-out MAE."""
    n = len(y)
    if n < min_rows:
        raise DatasetTooSmall(f"{n} rows < minimum {min_rows}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    cut = int(round(split * n))
    if cut == 0 or cut == n:
        raise DatasetTooSmall(f"split {split} leaves an empty side at {n} rows")
    tr, te = perm[:cut], perm[cut:]
    cfg = config if config is not None else ForestConfig(seed=seed)
    model = fit_forest(X[tr], y[tr], cfg)
    mae = float(np.abs(model.predict(X[te]) - y[te]).mean())
    return TrainResult(
        model=model, mae=mae, n_train=len(tr), n_test=len(te),
        label_range=float(y.max() - y.min()),
    )


# --- weight search -----------------------------------------------------------

def default_weight_grid() -> list[UtilityWeights]:
    # small and explicit: scale the return term, toggle the psi terms together
    return [
        UtilityWeights(w0=w0, psi=(p,) * N_PSI)
        for w0 in (1.0, 5.0, 10.0)
        for p in (0.0, 0.5, 1.0)
    ]


def group_variants(variants: Sequence[Trajectory]) -> dict[str, list[Trajectory]]:
    out: dict[str, list[Trajectory]] = {}
    for tr in variants:
        if not isinstance(tr.label, str):
            raise ValueError("variant trajectories must carry a string label")
        out.setdefault(tr.label, []).append(tr)
    return out


def variant_truth_means(variants: Sequence[Trajectory]) -> dict[str, float]:
    return {
        lbl: float(np.mean([tr.records[-1].metrics["targets_found"] for tr in trs]))
        for lbl, trs in group_variants(variants).items()
    }


def variant_preference(
    model: RegressionForest, variants: Sequence[Trajectory]
) -> Optional[str]:
    """Variant label the model prefers, judged where the change landed.

    Scores each group by mean predicted utility at the mid-mission record
    (the variant decision takes effect exactly there). Returns None when
    the predictions cannot separate the groups.
    """
    groups = group_variants(variants)
    means = {
        lbl: float(np.mean(model.predict(
            np.asarray([tr.features_at_fraction(0.5) for tr in trs])
        )))
        for lbl, trs in groups.items()
    }
    vals = list(means.values())
    if max(vals) - min(vals) < 1e-9:
        return None
    return max(means, key=lambda k: means[k])


def sanity_score(model: RegressionForest, variants: Sequence[Trajectory]) -> float:
    """1.0 when the model's preferred variant group is (one of) the truly
    best by mean targets found, else 0.0."""
    pref = variant_preference(model, variants)
    if pref is None:
        return 0.0
    truth = variant_truth_means(variants)
    best = max(truth.values())
    return 1.0 if truth[pref] >= best - 1e-9 else 0.0


@dataclass
class CandidateResult:
    weights: UtilityWeights
    mae: float
    label_range: float
    sanity: float
    passed: bool

    @property
    def mae_fraction(self) -> float:
        return self.mae / self.label_range if self.label_range > 0 else 0.0

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.to_dict(),
            "mae": round(self.mae, 6),
            "label_range": round(self.label_range, 6),
            "mae_fraction": round(self.mae_fraction, 6),
            "sanity": self.sanity,
            "passed": self.passed,
        }


@dataclass
class SearchResult:
    weights: UtilityWeights
    model: RegressionForest
    mae: float
    label_range: float
    sanity: float
    candidates: list[CandidateResult] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.to_dict(),
            "mae": round(self.mae, 6),
            "label_range": round(self.label_range, 6),
            "sanity": self.sanity,
            "candidates": [c.to_dict() for c in self.candidates],
        }


def weight_search(
    trajectories: Sequence[Trajectory],
    variants: Sequence[Trajectory],
    weight_grid: Optional[Sequence[UtilityWeights]] = None,
    gamma_grid: Sequence[float] = (DEFAULT_GAMMA,),
    mae_fraction: float = 0.10,
    forest_config: Optional[ForestConfig] = None,
    seed: int = 0,
    stride: int = 1,
) -> SearchResult:
    """Try every (weights, gamma) candidate; keep the one with the best
    variant-ranking sanity among those whose held-out MAE stays under
    `mae_fraction` of that candidate's label range. Ties go to the lower
    relative MAE, then to grid order."""
    if weight_grid is None:
        weight_grid = default_weight_grid()
    if not weight_grid or not len(gamma_grid):
        raise ValueError("weight and gamma grids must be non-empty")

    # features and psi terms are label-independent, collect them once
    col = _collect(trajectories, stride, action_states_only=True)
    results: list[CandidateResult] = []
    best: Optional[tuple[CandidateResult, RegressionForest]] = None
    for gamma in gamma_grid:
        for base in weight_grid:
            cand = replace(base, gamma=gamma)
            y = _labels(col, cand)
            tr = train(col.X, y, config=forest_config, seed=seed)
            sanity = sanity_score(tr.model, variants)
            ceiling = mae_fraction * tr.label_range
            res = CandidateResult(
                weights=cand, mae=tr.mae, label_range=tr.label_range,
                sanity=sanity, passed=tr.mae <= ceiling + 1e-12,
            )
            results.append(res)
            if res.passed and (
                best is None
                or (res.sanity, -res.mae_fraction) > (best[0].sanity, -best[0].mae_fraction)
            ):
                best = (res, tr.model)

    if best is None:
        raise NoCandidatePasses(
            f"no candidate of {len(results)} kept MAE under {mae_fraction:.0%} of its label range"
        )
    chosen, model = best
    return SearchResult(
        weights=chosen.weights, model=model, mae=chosen.mae,
        label_range=chosen.label_range, sanity=chosen.sanity, candidates=results,
    )
