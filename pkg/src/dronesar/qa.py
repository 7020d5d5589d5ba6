"""Quality gate for synthetic trajectories.

Synthetic missions are only usable as training data if they stay close to
the demonstrations they were derived from. Two checks probe that, both on a
compact signature (feature snapshots near the start, middle, and end of the
mission, concatenated):

* distance ranking: each synthetic's origin demonstration should be its
  nearest or second-nearest real trajectory;
* clustering: k-means with one cluster per real trajectory should put most
  synthetics in their origin's cluster.

Feature dimensions carry mixed units (seconds, counts, fractions), so
signatures are z-scored per dimension over the pooled set before any
distance is taken. The gate passes only if both checks clear their
thresholds; the report records the clustering seed so a run is repeatable.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .trajlog import Trajectory

SAMPLE_FRACTIONS = (0.10, 0.50, 0.90)
DEFAULT_RANK_THRESHOLD = 0.8
DEFAULT_CLUSTER_THRESHOLD = 0.9
KMEANS_RESTARTS = 20
CONSTRAINT_RETRIES = 50


class TooShort(ValueError):
    """Trajectory log does not span the mission far enough to sample."""


class ClusterConstraintUnsatisfiable(RuntimeError):
    """No clustering found that separates all real trajectories."""


def origin_of(traj: Trajectory) -> str:
    return traj.meta.get("origin", traj.operator)


def signature(traj: Trajectory) -> np.ndarray:
    """Feature snapshots at 10/50/90% of the mission clock, concatenated."""
    if not traj.records:
        raise TooShort("empty trajectory")
    last_t = max(r.t for r in traj.records)
    if last_t < SAMPLE_FRACTIONS[-1] * traj.duration - 1e-9:
        raise TooShort(
            f"log ends at {last_t:.0f}s of {traj.duration:.0f}s; "
            f"need coverage to {SAMPLE_FRACTIONS[-1]:.0%}"
        )
    return np.concatenate([traj.features_at_fraction(f) for f in SAMPLE_FRACTIONS])


Z_CLIP = 3.0


def standardize(signatures: np.ndarray) -> np.ndarray:
    """Z-score per dimension over the pooled set, winsorized at +-3.

    Constant dimensions stay centered at zero. The clip keeps near-constant
    count dimensions honest: without it a single one-off alert in an
    otherwise all-zero column scores 8+ sigma and drowns every other
    dimension of the signature.
    """
    mean = signatures.mean(axis=0)
    std = signatures.std(axis=0)
    std[std == 0.0] = 1.0
    return np.clip((signatures - mean) / std, -Z_CLIP, Z_CLIP)


def _sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # (n, d) x (m, d) -> (n, m) squared Euclidean
    return ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)


# ---------------------------------------------------------------------------
# distance ranking
# ---------------------------------------------------------------------------


@dataclass
class RankResult:
    ranks: list[int]
    fraction_top2: float
    table: dict[str, dict[str, float]]  # origin -> real -> normalized mean distance
    self_distance_mean: float
    self_distance_max: float


def distance_rank_test(reals: Sequence[Trajectory], synthetics: Sequence[Trajectory]) -> RankResult:
    """Rank each synthetic's origin among the real trajectories by squared
    distance, and build the per-origin normalized mean-distance table (rows
    sum to 1; the diagonal is the self distance)."""
    if len(reals) < 2:
        raise ValueError("need at least two real trajectories to rank against")
    real_names = [origin_of(t) for t in reals]
    pooled = np.stack([signature(t) for t in reals] + [signature(t) for t in synthetics])
    z = standardize(pooled)
    zr, zs = z[: len(reals)], z[len(reals):]
    d = _sq_dist(zs, zr)  # synthetic x real

    ranks: list[int] = []
    for i, syn in enumerate(synthetics):
        origin_idx = real_names.index(origin_of(syn))
        order = np.argsort(d[i], kind="stable")
        ranks.append(int(np.where(order == origin_idx)[0][0]) + 1)
    fraction = float(np.mean([r <= 2 for r in ranks])) if ranks else 0.0

    table: dict[str, dict[str, float]] = {}
    selfs: list[float] = []
    for origin_idx, origin in enumerate(real_names):
        rows = [i for i, syn in enumerate(synthetics) if origin_of(syn) == origin]
        if not rows:
            continue
        means = d[rows].mean(axis=0)
        total = means.sum()
        norm = means / total if total > 0 else np.full_like(means, 1.0 / len(real_names))
        table[origin] = {real_names[j]: float(norm[j]) for j in range(len(real_names))}
        selfs.append(float(norm[origin_idx]))
    return RankResult(
        ranks=ranks,
        fraction_top2=fraction,
        table=table,
        self_distance_mean=float(np.mean(selfs)) if selfs else 0.0,
        self_distance_max=float(np.max(selfs)) if selfs else 0.0,
    )


# ---------------------------------------------------------------------------
# clustering
# ---------------------------------------------------------------------------


def _kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[j] = x[rng.integers(n)]
            continue
        centroids[j] = x[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((x - centroids[j]) ** 2).sum(axis=1))
    return centroids


def _lloyd(x: np.ndarray, centroids: np.ndarray, iters: int = 100) -> tuple[np.ndarray, np.ndarray, float]:
    k = centroids.shape[0]
    labels = np.zeros(x.shape[0], dtype=int)
    for _ in range(iters):
        d = _sq_dist(x, centroids)
        new_labels = d.argmin(axis=1)
        for j in range(k):
            mask = new_labels == j
            if mask.any():
                centroids[j] = x[mask].mean(axis=0)
            else:
                # revive an empty cluster at the worst-fitted point
                far = d[np.arange(len(x)), new_labels].argmax()
                centroids[j] = x[far]
                new_labels[far] = j
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    inertia = float(_sq_dist(x, centroids)[np.arange(len(x)), labels].sum())
    return labels, centroids, inertia


def _reals_separated(labels: np.ndarray, n_real: int) -> bool:
    return len(set(labels[:n_real].tolist())) == n_real


@dataclass
class ClusterResult:
    fraction_same: float
    labels: list[int]
    seeded_at_reals: bool


def cluster_test(
    reals: Sequence[Trajectory],
    synthetics: Sequence[Trajectory],
    *,
    seed: int = 0,
    restarts: int = KMEANS_RESTARTS,
    retries: int = CONSTRAINT_RETRIES,
) -> ClusterResult:
    """K-means (k = number of reals) over the pooled standardized
    signatures. Real trajectories must land in distinct clusters: the best
    of `restarts` inits satisfying that wins; failing that, up to `retries`
    further inits accept the first satisfying run; failing that, centroids
    are seeded at the real signatures directly."""
    if len(reals) < 2:
        raise ValueError("need at least two real trajectories to cluster")
    rng = np.random.default_rng(seed)
    n_real, k = len(reals), len(reals)
    pooled = np.stack([signature(t) for t in reals] + [signature(t) for t in synthetics])
    z = standardize(pooled)

    best = None
    for _ in range(restarts):
        labels, _, inertia = _lloyd(z, _kmeanspp_init(z, k, rng))
        if _reals_separated(labels, n_real) and (best is None or inertia < best[1]):
            best = (labels, inertia)
    if best is None:
        for _ in range(retries):
            labels, _, inertia = _lloyd(z, _kmeanspp_init(z, k, rng))
            if _reals_separated(labels, n_real):
                best = (labels, inertia)
                break
    seeded = False
    if best is None:
        labels, _, inertia = _lloyd(z, z[:n_real].copy())
        if not _reals_separated(labels, n_real):
            raise ClusterConstraintUnsatisfiable(
                "real trajectories collapse into shared clusters even when "
                "centroids start at their own signatures"
            )
        best = (labels, inertia)
        seeded = True

    labels = best[0]
    real_names = [origin_of(t) for t in reals]
    cluster_of_real = {name: int(labels[i]) for i, name in enumerate(real_names)}
    same = [
        int(labels[n_real + i]) == cluster_of_real[origin_of(syn)]
        for i, syn in enumerate(synthetics)
    ]
    fraction = float(np.mean(same)) if same else 0.0
    return ClusterResult(fraction_same=fraction, labels=labels.tolist(), seeded_at_reals=seeded)


# ---------------------------------------------------------------------------
# the gate
# ---------------------------------------------------------------------------


@dataclass
class QAReport:
    passed: bool
    rank_fraction: float
    cluster_fraction: float
    rank_threshold: float
    cluster_threshold: float
    n_real: int
    n_synthetic: int
    self_distance_mean: float
    self_distance_max: float
    distance_table: dict[str, dict[str, float]]
    ranks: list[int]
    cluster_seed: int
    seeded_at_reals: bool

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "rank_fraction": round(self.rank_fraction, 6),
            "cluster_fraction": round(self.cluster_fraction, 6),
            "rank_threshold": self.rank_threshold,
            "cluster_threshold": self.cluster_threshold,
            "n_real": self.n_real,
            "n_synthetic": self.n_synthetic,
            "self_distance_mean": round(self.self_distance_mean, 6),
            "self_distance_max": round(self.self_distance_max, 6),
            "distance_table": {
                o: {r: round(v, 4) for r, v in row.items()}
                for o, row in self.distance_table.items()
            },
            "ranks": self.ranks,
            "cluster_seed": self.cluster_seed,
            "seeded_at_reals": self.seeded_at_reals,
        }

    def to_text(self) -> str:
        lines = [
            f"quality gate: {'PASS' if self.passed else 'FAIL'}",
            f"  origin in top-2: {self.rank_fraction:.1%} (need >= {self.rank_threshold:.0%})",
            f"  same-cluster:    {self.cluster_fraction:.1%} (need >= {self.cluster_threshold:.0%})",
            f"  normalized self-distance: mean {self.self_distance_mean:.3f}, "
            f"max {self.self_distance_max:.3f} (uniform baseline {1.0 / max(self.n_real, 1):.3f})",
            f"  {self.n_synthetic} synthetic vs {self.n_real} real, "
            f"cluster seed {self.cluster_seed}"
            + (" (centroids seeded at reals)" if self.seeded_at_reals else ""),
            "  normalized mean distance, one row per origin (columns in real order):",
        ]
        names = list(self.distance_table)
        for origin in names:
            row = self.distance_table[origin]
            cells = " ".join(f"{row[r]:.3f}" for r in row)
            lines.append(f"    {origin:<20} {cells}")
        return "\n".join(lines)


def quality_gate(
    reals: Sequence[Trajectory],
    synthetics: Sequence[Trajectory],
    *,
    rank_threshold: float = DEFAULT_RANK_THRESHOLD,
    cluster_threshold: float = DEFAULT_CLUSTER_THRESHOLD,
    seed: int = 0,
) -> QAReport:
    if not reals or not synthetics:
        raise ValueError("quality gate needs non-empty real and synthetic sets")
    rank = distance_rank_test(reals, synthetics)
    cluster = cluster_test(reals, synthetics, seed=seed)
    passed = rank.fraction_top2 >= rank_threshold and cluster.fraction_same >= cluster_threshold
    return QAReport(
        passed=passed,
        rank_fraction=rank.fraction_top2,
        cluster_fraction=cluster.fraction_same,
        rank_threshold=rank_threshold,
        cluster_threshold=cluster_threshold,
        n_real=len(reals),
        n_synthetic=len(synthetics),
        self_distance_mean=rank.self_distance_mean,
        self_distance_max=rank.self_distance_max,
        distance_table=rank.table,
        ranks=rank.ranks,
        cluster_seed=seed,
        seeded_at_reals=cluster.seeded_at_reals,
    )
