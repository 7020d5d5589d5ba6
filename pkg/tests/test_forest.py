"""Bagged regression trees: fit quality, determinism, persistence."""
import numpy as np
import pytest

from dronesar.forest import ForestConfig, RegressionForest, fit_forest


def make_data(n=500, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 4))
    y = 3.0 * X[:, 0] - 2.0 * X[:, 2] + 0.5
    return X, y


def test_fits_a_linear_target_closely():
    X, y = make_data()
    model = fit_forest(X, y, ForestConfig(n_trees=30, seed=0))
    pred = model.predict(X)
    assert np.abs(pred - y).mean() < 0.25  # piecewise-constant approximation
    assert pred.shape == (500,)


def test_constant_labels_reproduced_exactly():
    X, _ = make_data(n=80)
    model = fit_forest(X, np.full(80, 3.25), ForestConfig(n_trees=10, seed=2))
    assert np.all(model.predict(X) == 3.25)


def test_deterministic_per_seed():
    X, y = make_data(n=200)
    a = fit_forest(X, y, ForestConfig(n_trees=15, seed=7))
    b = fit_forest(X, y, ForestConfig(n_trees=15, seed=7))
    assert np.array_equal(a.predict(X), b.predict(X))


def test_predict_each_exposes_tree_spread():
    X, y = make_data(n=200)
    model = fit_forest(X, y, ForestConfig(n_trees=15, seed=1))
    each = model.predict_each(X[:10])
    assert each.shape == (15, 10)
    assert np.allclose(each.mean(axis=0), model.predict(X[:10]))
    # bootstrap resamples disagree somewhere, otherwise the spread is useless
    assert each.std(axis=0).max() > 0.0


def test_predict_accepts_single_row():
    X, y = make_data(n=100)
    model = fit_forest(X, y, ForestConfig(n_trees=5, seed=0))
    assert model.predict(X[0]).shape == (1,)


def test_input_validation():
    X, y = make_data(n=100)
    with pytest.raises(ValueError):
        fit_forest(X, y[:-1])
    with pytest.raises(ValueError):
        fit_forest(y, y)  # 1-d features
    model = fit_forest(X, y, ForestConfig(n_trees=5, seed=0))
    with pytest.raises(ValueError):
        model.predict(np.zeros((3, 7)))


def test_min_samples_leaf_respected():
    X, y = make_data(n=60)
    model = fit_forest(X, y, ForestConfig(n_trees=5, min_samples_leaf=30, seed=0))
    # 60 bootstrap rows cannot split into two 30-row leaves twice over
    for tree in model.trees:
        assert (tree.feature >= 0).sum() <= 1


def test_save_load_round_trip(tmp_path):
    X, y = make_data(n=150)
    model = fit_forest(X, y, ForestConfig(n_trees=8, seed=4))
    path = tmp_path / "model.npz"
    model.save(path)
    loaded = RegressionForest.load(path)
    assert loaded.config == model.config
    assert loaded.n_features == 4
    assert np.array_equal(loaded.predict(X), model.predict(X))


def test_load_rejects_unknown_format(tmp_path):
    path = tmp_path / "bad.npz"
    np.savez(path, format=np.array("something-else/9"))
    with pytest.raises(ValueError):
        RegressionForest.load(path)


def test_config_round_trip():
    cfg = ForestConfig(n_trees=12, max_depth=6, min_samples_leaf=3, n_bins=32, seed=9)
    assert ForestConfig.from_dict(cfg.to_dict()) == cfg
