"""Bagged regression trees on binned features.

Small, dependency-free regressor for the reward model: each tree fits a
bootstrap resample, splits greedily by variance reduction over quantile-
binned feature values, and prediction averages the ensemble. Trees store
their nodes in flat arrays so predict is a few vectorized passes, and the
whole model round-trips through one .npz file.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

MODEL_FORMAT = "sar-reward-model/1"


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 12
    min_samples_leaf: int = 5
    n_bins: int = 64
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
            "n_bins": self.n_bins,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestConfig":
        return cls(**{k: int(d[k]) for k in ("n_trees", "max_depth", "min_samples_leaf", "n_bins", "seed")})


def _bin_edges(x: np.ndarray, n_bins: int) -> list[np.ndarray]:
    """Per-feature interior edges from quantiles (dedup'd, so constant or
    low-cardinality features get few or zero edges)."""
    qs = np.linspace(0.0, 1.0, n_bins + 1)[1:-1]
    edges = []
    for f in range(x.shape[1]):
        e = np.unique(np.quantile(x[:, f], qs))
        edges.append(e.astype(np.float64))
    return edges


def _apply_bins(x: np.ndarray, edges: list[np.ndarray]) -> np.ndarray:
    binned = np.empty(x.shape, dtype=np.int16)
    for f, e in enumerate(edges):
        binned[:, f] = np.searchsorted(e, x[:, f], side="right")
    return binned


@dataclass
class _Tree:
    feature: np.ndarray  # int32, -1 for leaves
    threshold: np.ndarray  # float64, raw-value cut (go left if value <= threshold)
    left: np.ndarray  # int32
    right: np.ndarray  # int32
    value: np.ndarray  # float64 leaf means

    def predict(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(x.shape[0], dtype=np.int32)
        while True:
            feat = self.feature[node]
            live = feat >= 0
            if not live.any():
                return self.value[node]
            rows = np.nonzero(live)[0]
            go_left = x[rows, feat[rows]] <= self.threshold[node[rows]]
            node[rows[go_left]] = self.left[node[rows[go_left]]]
            node[rows[~go_left]] = self.right[node[rows[~go_left]]]


def _grow_tree(
    xb: np.ndarray,
    y: np.ndarray,
    edges: list[np.ndarray],
    idx: np.ndarray,
    cfg: ForestConfig,
) -> _Tree:
    n_feat = xb.shape[1]
    # one shared bin axis: histograms of every feature come from a single
    # flat bincount per node, which is what makes growth affordable
    maxb = max((len(e) + 1 for e in edges), default=1)
    f_off = (np.arange(n_feat, dtype=np.int32) * maxb)[None, :]
    # a split at bin b sends rows with bin <= b left; bins at or past a
    # feature's edge count never separate anything, mask them out
    cut_ok = np.zeros((n_feat, maxb - 1), dtype=bool)
    for f, e in enumerate(edges):
        cut_ok[f, : len(e)] = True

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, idx, 0)]
    min_leaf = cfg.min_samples_leaf
    while stack:
        node, rows, depth = stack.pop()
        ys = y[rows]
        value[node] = float(ys.mean())
        if depth >= cfg.max_depth or rows.size < 2 * min_leaf or ys.min() == ys.max():
            continue

        n = rows.size
        total_sum = ys.sum()
        sub = xb[rows]
        flat = (sub.astype(np.int32) + f_off).ravel()
        size = n_feat * maxb
        cnt = np.bincount(flat, minlength=size).reshape(n_feat, maxb).astype(np.float64)
        wsum = np.bincount(flat, weights=np.repeat(ys, n_feat), minlength=size).reshape(n_feat, maxb)
        c_cnt = cnt.cumsum(axis=1)[:, :-1]
        c_sum = wsum.cumsum(axis=1)[:, :-1]
        ok = cut_ok & (c_cnt >= min_leaf) & (n - c_cnt >= min_leaf)
        if not ok.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = np.where(
                ok,
                c_sum**2 / np.maximum(c_cnt, 1.0)
                + (total_sum - c_sum) ** 2 / np.maximum(n - c_cnt, 1.0),
                -np.inf,
            )
        j = int(np.argmax(gain))
        f, b = divmod(j, maxb - 1)
        if gain[f, b] <= total_sum * total_sum / n + 1e-12:
            continue
        go_left = sub[:, f] <= b
        l_rows, r_rows = rows[go_left], rows[~go_left]
        feature[node] = f
        threshold[node] = float(edges[f][b])
        l_id, r_id = new_node(), new_node()
        left[node], right[node] = l_id, r_id
        stack.append((r_id, r_rows, depth + 1))
        stack.append((l_id, l_rows, depth + 1))

    return _Tree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        value=np.asarray(value, dtype=np.float64),
    )


@dataclass
class RegressionForest:
    config: ForestConfig
    trees: list[_Tree] = field(default_factory=list)
    n_features: int = 0

    def predict(self, x) -> np.ndarray:
        return self.predict_each(x).mean(axis=0)

    def predict_each(self, x) -> np.ndarray:
        """Per-tree predictions, shape (n_trees, n_rows). The spread across
        trees is the bagging noise floor, which callers comparing nearby
        inputs need to know."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {x.shape[1]}")
        return np.stack([t.predict(x) for t in self.trees])

    def save(self, path) -> None:
        blob: dict = {
            "format": np.array(MODEL_FORMAT),
            "config": np.array([self.config.n_trees, self.config.max_depth,
                                self.config.min_samples_leaf, self.config.n_bins,
                                self.config.seed], dtype=np.int64),
            "n_features": np.array(self.n_features, dtype=np.int64),
            "n_trees": np.array(len(self.trees), dtype=np.int64),
        }
        for i, t in enumerate(self.trees):
            blob[f"t{i}_feature"] = t.feature
            blob[f"t{i}_threshold"] = t.threshold
            blob[f"t{i}_left"] = t.left
            blob[f"t{i}_right"] = t.right
            blob[f"t{i}_value"] = t.value
        np.savez_compressed(path, **blob)

    @classmethod
    def load(cls, path) -> "RegressionForest":
        with np.load(path, allow_pickle=False) as z:
            fmt = str(z["format"])
            if fmt != MODEL_FORMAT:
                raise ValueError(f"unsupported model format {fmt!r}")
            c = z["config"]
            cfg = ForestConfig(n_trees=int(c[0]), max_depth=int(c[1]),
                               min_samples_leaf=int(c[2]), n_bins=int(c[3]), seed=int(c[4]))
            trees = [
                _Tree(
                    feature=z[f"t{i}_feature"],
                    threshold=z[f"t{i}_threshold"],
                    left=z[f"t{i}_left"],
                    right=z[f"t{i}_right"],
                    value=z[f"t{i}_value"],
                )
                for i in range(int(z["n_trees"]))
            ]
            return cls(config=cfg, trees=trees, n_features=int(z["n_features"]))


def fit_forest(x, y, config: Optional[ForestConfig] = None) -> RegressionForest:
    """Fit the bagged ensemble; deterministic for a given config.seed."""
    cfg = config or ForestConfig()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError(f"bad dataset shapes x{x.shape} y{y.shape}")
    edges = _bin_edges(x, cfg.n_bins)
    xb = _apply_bins(x, edges)
    n = x.shape[0]
    seqs = np.random.SeedSequence(cfg.seed).spawn(cfg.n_trees)
    trees = []
    for seq in seqs:
        rng = np.random.default_rng(seq)
        idx = rng.integers(0, n, size=n)
        trees.append(_grow_tree(xb, y, edges, idx, cfg))
    return RegressionForest(config=cfg, trees=trees, n_features=x.shape[1])
