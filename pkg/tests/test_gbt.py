import numpy as np
import pytest

from oracles import best_stump, replay_residuals, walk_predict
from pue_forecast.gbt import GbtModel, Tree, gbt_fit, gbt_importance, gbt_predict


class TestFit:
    def test_constant_target_predicts_mean_exactly(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(20, 3))
        y = np.full(20, 7.25)
        m = gbt_fit(X, y, n_estimators=5, learning_rate=0.5, max_depth=3)
        assert np.all(gbt_predict(m, rng.normal(size=(50, 3))) == 7.25)

    def test_perfect_stump(self):
        X = np.array([[0.0], [1.0], [10.0], [11.0]])
        y = np.array([0.0, 0.0, 1.0, 1.0])
        m = gbt_fit(X, y, n_estimators=1, learning_rate=1.0, max_depth=1,
                    reg_lambda=0.0)
        _, c, thr = best_stump(X, y)
        assert m.trees[0].feature[0] == c
        assert m.trees[0].threshold[0] == thr
        assert np.mean((gbt_predict(m, X) - y) ** 2) < 1e-12

    def test_training_loss_monotone(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(50, 4))
        y = np.sin(X[:, 0]) + 0.3 * X[:, 1] ** 2 + 0.1 * rng.normal(size=50)
        m = gbt_fit(X, y, n_estimators=40, learning_rate=0.2, max_depth=3)
        losses = np.asarray(m.train_losses)
        assert len(losses) == 40
        assert np.all(np.diff(losses) <= 1e-15)

    def test_leaf_values_match_closed_form(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(60, 3))
        y = X[:, 0] * 2.0 + rng.normal(size=60)
        lam = 1.0
        m = gbt_fit(X, y, n_estimators=10, learning_rate=0.3, max_depth=3,
                    reg_lambda=lam)
        for tree, resid in replay_residuals(m, X, y):
            # route rows independently, then check v = sum(residuals)/(count + lam)
            leaves = {}
            for r in range(len(y)):
                i = 0
                while tree.feature[i] >= 0:
                    i = (
                        int(tree.left[i])
                        if X[r, tree.feature[i]] < tree.threshold[i]
                        else int(tree.right[i])
                    )
                leaves.setdefault(i, []).append(resid[r])
            for i, rs in leaves.items():
                expected = np.sum(rs) / (len(rs) + lam)
                assert abs(tree.value[i] - expected) < 1e-9

    def test_depth_bound(self):
        rng = np.random.default_rng(11)
        X = rng.normal(size=(80, 5))
        y = rng.normal(size=80)
        for depth in (1, 2, 4):
            m = gbt_fit(X, y, n_estimators=8, learning_rate=0.3, max_depth=depth)
            assert all(t.depth() <= depth for t in m.trees)

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(40, 3))
        y = rng.normal(size=40)
        a = gbt_fit(X, y, 10, 0.3, 3)
        b = gbt_fit(X, y, 10, 0.3, 3)
        assert a.dump() == b.dump()
        Xt = rng.normal(size=(20, 3))
        assert np.array_equal(gbt_predict(a, Xt), gbt_predict(b, Xt))

    def test_identical_rows_become_leaf(self):
        X = np.ones((6, 2))
        y = np.arange(6.0)
        m = gbt_fit(X, y, n_estimators=3, learning_rate=1.0, max_depth=4)
        assert all(t.n_nodes == 1 for t in m.trees)
        assert m.base_score == y.mean()

    def test_input_validation(self):
        X = np.ones((5, 2))
        y = np.ones(5)
        with pytest.raises(ValueError, match="two samples"):
            gbt_fit(np.ones((1, 2)), np.ones(1), 1, 0.1, 1)
        with pytest.raises(ValueError, match="rows"):
            gbt_fit(X, np.ones(4), 1, 0.1, 1)
        with pytest.raises(ValueError, match="finite"):
            gbt_fit(X * np.nan, y, 1, 0.1, 1)
        with pytest.raises(ValueError, match="n_estimators"):
            gbt_fit(X, y, 0, 0.1, 1)
        with pytest.raises(ValueError, match="learning_rate"):
            gbt_fit(X, y, 1, 0.0, 1)
        with pytest.raises(ValueError, match="max_depth"):
            gbt_fit(X, y, 1, 0.1, 0)
        with pytest.raises(ValueError, match="reg_lambda"):
            gbt_fit(X, y, 1, 0.1, 1, reg_lambda=-1.0)


class TestPredict:
    def test_no_trees_returns_base_score(self):
        m = GbtModel(trees=[], learning_rate=0.1, base_score=3.5, reg_lambda=1.0,
                     n_features=2)
        assert np.all(gbt_predict(m, np.random.default_rng(0).normal(size=(10, 2))) == 3.5)

    def test_single_stump_by_construction(self):
        stump = Tree(
            feature=np.array([0, -1, -1]),
            threshold=np.array([2.0, 0.0, 0.0]),
            left=np.array([1, -1, -1]),
            right=np.array([2, -1, -1]),
            value=np.array([0.0, -1.0, 4.0]),
        )
        m = GbtModel(trees=[stump], learning_rate=0.5, base_score=1.0,
                     reg_lambda=1.0, n_features=1)
        assert gbt_predict(m, np.array([[1.5]]))[0] == 1.0 + 0.5 * -1.0
        assert gbt_predict(m, np.array([[2.5]]))[0] == 1.0 + 0.5 * 4.0

    def test_matches_tree_walk_oracle(self):
        rng = np.random.default_rng(13)
        X = rng.normal(size=(70, 4))
        y = X[:, 0] - 2.0 * X[:, 3] + rng.normal(size=70) * 0.2
        m = gbt_fit(X, y, n_estimators=12, learning_rate=0.25, max_depth=4)
        Xt = rng.normal(size=(100, 4))
        assert np.max(np.abs(gbt_predict(m, Xt) - walk_predict(m, Xt))) < 1e-12

    def test_dimension_mismatch(self):
        m = gbt_fit(np.ones((4, 2)) * np.arange(4)[:, None], np.arange(4.0), 1, 0.1, 1)
        with pytest.raises(ValueError, match="columns"):
            gbt_predict(m, np.ones((3, 3)))

    def test_permutation_invariance(self):
        rng = np.random.default_rng(21)
        X = rng.normal(size=(60, 4))
        y = np.where(X[:, 2] > 0, 1.0, -1.0) + 0.1 * rng.normal(size=60)
        m = gbt_fit(X, y, n_estimators=6, learning_rate=0.4, max_depth=3)
        perm = np.array([2, 0, 3, 1])  # new column order; old index c -> position
        inv = np.argsort(perm)
        remapped = GbtModel(
            trees=[
                Tree(
                    feature=np.where(t.feature >= 0, inv[np.maximum(t.feature, 0)], -1),
                    threshold=t.threshold.copy(),
                    left=t.left.copy(),
                    right=t.right.copy(),
                    value=t.value.copy(),
                )
                for t in m.trees
            ],
            learning_rate=m.learning_rate,
            base_score=m.base_score,
            reg_lambda=m.reg_lambda,
            n_features=4,
        )
        Xt = rng.normal(size=(30, 4))
        assert np.array_equal(gbt_predict(m, Xt), gbt_predict(remapped, Xt[:, perm]))


class TestImportance:
    def test_single_driver_feature(self):
        rng = np.random.default_rng(2)
        n = 50
        X = np.column_stack([np.ones(n), np.ones(n) * 2.0, rng.normal(size=n)])
        y = np.where(X[:, 2] > 0.0, 2.0, -2.0)
        m = gbt_fit(X, y, n_estimators=5, learning_rate=0.5, max_depth=2)
        imp = gbt_importance(m)
        assert imp[2] > 0.0
        assert imp[0] == 0.0 and imp[1] == 0.0

    def test_no_trees_all_zero(self):
        m = GbtModel(trees=[], learning_rate=0.1, base_score=0.0, reg_lambda=1.0,
                     n_features=3)
        assert np.array_equal(gbt_importance(m), np.zeros(3))

    def test_sum_matches_accumulated_gain(self):
        rng = np.random.default_rng(17)
        X = rng.normal(size=(80, 5))
        y = X @ np.array([1.0, 0.0, -2.0, 0.5, 0.0]) + 0.1 * rng.normal(size=80)
        m = gbt_fit(X, y, n_estimators=15, learning_rate=0.2, max_depth=3)
        assert abs(gbt_importance(m).sum() - m.total_gain) < 1e-9

    def test_importance_is_a_copy(self):
        m = gbt_fit(np.arange(8.0).reshape(4, 2), np.array([0.0, 0, 1, 1]), 2, 0.5, 1)
        imp = gbt_importance(m)
        imp[:] = -1
        assert np.all(gbt_importance(m) >= 0)
