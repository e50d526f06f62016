"""Gradient-boosted regression trees with squared-error loss.

Trees grow level by level: every node of the current depth is scanned for its
best split before any node of the next depth, and residuals are refreshed
between trees, not between levels. Split search is exact greedy over all
(feature, midpoint-between-adjacent-sorted-values) candidates; leaf values use
the closed form sum(residuals) / (count + lambda). There is no row or column
subsampling and no early stopping, so fitting is fully deterministic; split
ties break toward the lowest feature index, then the lowest threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class TreeNode:
    """One node; split_feature is -1 for leaves, child indices -1 likewise."""

    split_feature: int
    threshold: float
    left: int
    right: int
    leaf_value: float


@dataclass
class Tree:
    """A single regression tree stored as parallel node arrays (root = node 0)."""

    feature: np.ndarray  # int, -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def nodes(self) -> list[TreeNode]:
        return [
            TreeNode(
                int(self.feature[i]),
                float(self.threshold[i]),
                int(self.left[i]),
                int(self.right[i]),
                float(self.value[i]),
            )
            for i in range(self.n_nodes)
        ]

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        out = 0
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depths[self.left[i]] = depths[i] + 1
                depths[self.right[i]] = depths[i] + 1
                out = max(out, int(depths[i]) + 1)
        return out

    def predict(self, X: np.ndarray) -> np.ndarray:
        n = X.shape[0]
        node = np.zeros(n, dtype=np.int64)
        rows = np.arange(n)
        while True:
            feat = self.feature[node]
            internal = feat >= 0
            if not internal.any():
                break
            x = X[rows, np.maximum(feat, 0)]
            go_left = x < self.threshold[node]
            node = np.where(
                internal & go_left,
                self.left[node],
                np.where(internal, self.right[node], node),
            )
        return self.value[node]

    def dump(self, indent: str = "  ") -> str:
        lines: list[str] = []

        def walk(i: int, level: int) -> None:
            pad = indent * level
            if self.feature[i] < 0:
                lines.append(f"{pad}leaf value={self.value[i]:.6g}")
            else:
                lines.append(
                    f"{pad}if x[{int(self.feature[i])}] < {self.threshold[i]:.6g}:"
                )
                walk(int(self.left[i]), level + 1)
                lines.append(f"{pad}else:")
                walk(int(self.right[i]), level + 1)

        walk(0, 0)
        return "\n".join(lines)


@dataclass
class GbtModel:
    """Additive tree ensemble: prediction = base_score + lr * sum(tree outputs)."""

    trees: list[Tree]
    learning_rate: float
    base_score: float
    reg_lambda: float
    n_features: int
    feature_importance: np.ndarray = field(default=None)  # type: ignore[assignment]
    train_losses: list[float] = field(default_factory=list)
    total_gain: float = 0.0

    def __post_init__(self):
        if self.feature_importance is None:
            self.feature_importance = np.zeros(self.n_features)

    def dump(self) -> str:
        parts = [f"base_score={self.base_score!r} lr={self.learning_rate!r}"]
        for k, tree in enumerate(self.trees):
            parts.append(f"tree {k}:")
            parts.append(tree.dump())
        return "\n".join(parts)


class _TreeBuilder:
    """Grows one tree level-wise against fixed presorted feature columns.

    Hot-path arrays are transposed ([n_features, n_samples], one contiguous
    row per feature) and kept in a grouped layout: grouped by current leaf,
    ordered by feature value within each group. Only the flat-offset row-id
    layout is maintained across levels, by a stable counting partition when
    nodes split (cheaper than re-sorting); residuals and dense value ranks are
    regathered from it into reused buffers. Group geometry (run starts, sizes,
    row-to-group map) is identical across features and computed once per
    level. Adjacent-value ties are detected via precomputed dense ranks, so
    raw feature values are only touched when a chosen split needs its
    midpoint threshold.
    """

    def __init__(self, X: np.ndarray, sort_idx: np.ndarray, x_sorted: np.ndarray,
                 max_depth: int, reg_lambda: float):
        n, f = X.shape
        self.X = X
        self.max_depth = max_depth
        self.lam = reg_lambda
        self.n, self.f = n, f
        sort_t = np.ascontiguousarray(sort_idx.T, dtype=np.int32)
        xs_t = np.ascontiguousarray(x_sorted.T)
        self.sort_t = sort_t
        self.xt_flat = np.ascontiguousarray(X.T).ravel()
        self.rowoff = (n * np.arange(f, dtype=np.int32))[:, None]
        self.sort_off = sort_t + self.rowoff  # flat-offset presorted layout
        # dense per-feature value ranks: equal ranks mark equal adjacent values
        dense = np.zeros((f, n), dtype=np.int32)
        if n > 1:
            np.cumsum(xs_t[:, 1:] != xs_t[:, :-1], axis=1, dtype=np.int32,
                      out=dense[:, 1:])
        self.dense0 = dense
        self.rank_flat = np.empty(n * f, dtype=np.int32)
        self.rank_flat[self.sort_off.ravel()] = dense.ravel()
        self.rows = np.arange(n)
        self.rows_f = np.arange(n, dtype=np.float64)
        self.rows_i32 = np.arange(n, dtype=np.int32)
        # reusable level scratch
        self._rv = np.empty((f, n))
        self._cums = np.empty((f, n))
        self._dr = np.empty((f, n), dtype=np.int32)
        self._b = np.empty((f, n), dtype=bool)
        self._s1 = np.empty((f, n))
        self._s2 = np.empty((f, n))
        self._invalid = np.empty((f, n), dtype=bool)
        self._po_a = np.empty((f, n), dtype=np.int32)
        self._po_b = np.empty((f, n), dtype=np.int32)
        # capacity: a full binary tree of max_depth, clamped by sample count
        self.capacity = min(2 ** (max_depth + 1) - 1, max(2 * n - 1, 1))

    def build(self, residual: np.ndarray) -> tuple[Tree, np.ndarray, float, np.ndarray]:
        """Returns (tree, final leaf assignment, gain total, per-feature gain)."""
        n, f, lam = self.n, self.f, self.lam
        cap = self.capacity
        feature = np.full(cap, -1, dtype=np.int64)
        threshold = np.zeros(cap)
        left = np.full(cap, -1, dtype=np.int64)
        right = np.full(cap, -1, dtype=np.int64)
        value = np.zeros(cap)
        counts = np.zeros(cap, dtype=np.int64)
        value[0] = residual.sum() / (n + lam)
        counts[0] = n
        n_nodes = 1
        leaf = np.zeros(n, dtype=np.int32)
        splittable = np.zeros(cap, dtype=bool)
        splittable[0] = n >= 2
        gain_by_feature = np.zeros(f)
        gain_total = 0.0

        res_tiled = np.tile(residual, f)
        permoff = self.sort_off  # flat-offset row ids; partitions never mutate it
        spare = self._po_a
        layout = np.array([0], dtype=np.int64)  # node ids in layout order
        fgrid = np.arange(f)

        for depth in range(self.max_depth):
            g_counts = counts[layout]
            active = splittable[layout]
            if not active.any():
                break
            m = len(layout)
            starts = np.concatenate(([0], np.cumsum(g_counts[:-1])))
            ends = starts + g_counts - 1
            gor = np.repeat(np.arange(m), g_counts)  # group of each grouped position

            rv = np.take(res_tiled, permoff, out=self._rv, mode="clip")
            if depth == 0:
                dr = self.dense0
            else:
                dr = np.take(self.rank_flat, permoff, out=self._dr, mode="clip")
            cums = np.cumsum(rv, axis=1, out=self._cums)
            base = np.where(
                (starts == 0)[None, :], 0.0, cums[:, np.maximum(starts - 1, 0)]
            )
            tot = cums[:, ends] - base  # [f, m] exact per-feature segment sums
            left_g = cums
            left_g -= np.repeat(base, g_counts, axis=1)

            # geometry shared by every feature row; the last position of each
            # group (and of the whole row) is not a split and stays masked
            left_n = self.rows_f - np.repeat(starts.astype(np.float64), g_counts)
            left_n += 1.0
            tot_n = np.repeat(g_counts.astype(np.float64), g_counts)
            not_same = np.ones(n, dtype=bool)
            not_same[: n - 1] = (gor[:-1] != gor[1:]) | ~active[gor[:-1]]
            rn_den = tot_n - left_n + lam
            inv_ln = 1.0 / (left_n + lam)  # left_n >= 1, lam >= 0
            inv_rn = np.where(rn_den > 0.0, 1.0 / np.where(rn_den > 0.0, rn_den, 1.0), 0.0)
            inv_tn = 1.0 / (tot_n + lam)

            tg_exp = np.repeat(tot, g_counts, axis=1)
            rg = np.subtract(tg_exp, left_g, out=self._s1)
            gain = np.multiply(left_g, left_g, out=self._s2)
            gain *= inv_ln[None, :]
            rg *= rg
            rg *= inv_rn[None, :]
            gain += rg
            tg_exp *= tg_exp
            tg_exp *= inv_tn[None, :]
            gain -= tg_exp
            invalid = self._invalid
            np.equal(dr[:, 1:], dr[:, :-1], out=invalid[:, : n - 1])
            invalid[:, n - 1] = True
            invalid |= not_same[None, :]
            gain[invalid] = -np.inf

            # one reduceat over the whole [f, n] gain block: feature row c
            # occupies positions [c*n, (c+1)*n)
            bounds = (starts[None, :] + n * fgrid[:, None]).ravel()
            col_max = np.maximum.reduceat(gain.ravel(), bounds).reshape(f, m)
            best_col = np.argmax(col_max, axis=0)  # first max: lowest feature wins ties
            best_gain = col_max[best_col, np.arange(m)]

            no_gain = active & ~(best_gain > 0.0)
            splittable[layout[no_gain]] = False
            sel = np.flatnonzero(active & (best_gain > 0.0))
            if sel.size == 0:
                break

            # first position attaining each winner's max: the lowest threshold
            pos_arr = np.empty(sel.size, dtype=np.int64)
            for j, g in enumerate(sel):
                c = best_col[g]
                lo = starts[g]
                pos_arr[j] = lo + np.argmax(gain[c, lo : ends[g]] == best_gain[g])

            node_ids = layout[sel]
            cs = best_col[sel]
            k = sel.size
            left_ids = n_nodes + 2 * np.arange(k)
            right_ids = left_ids + 1
            n_nodes += 2 * k
            lnn = pos_arr - starts[sel] + 1
            rnn = g_counts[sel] - lnn
            lg_v = left_g[cs, pos_arr]
            rg_v = tot[cs, sel] - lg_v
            feature[node_ids] = cs
            threshold[node_ids] = 0.5 * (
                self.xt_flat[permoff[cs, pos_arr]] + self.xt_flat[permoff[cs, pos_arr + 1]]
            )
            left[node_ids] = left_ids
            right[node_ids] = right_ids
            value[left_ids] = lg_v / (lnn + lam)
            value[right_ids] = rg_v / (rnn + lam)
            counts[left_ids] = lnn
            counts[right_ids] = rnn
            deeper = depth + 1 < self.max_depth
            splittable[left_ids] = (lnn >= 2) & deeper
            splittable[right_ids] = (rnn >= 2) & deeper
            np.add.at(gain_by_feature, cs, best_gain[sel])
            gain_total += float(best_gain[sel].sum())

            node_feat = feature[leaf]
            is_split = node_feat >= 0
            xv = self.X[self.rows, np.maximum(node_feat, 0)]
            go_left = xv < threshold[leaf]
            leaf = np.where(
                is_split & go_left, left[leaf], np.where(is_split, right[leaf], leaf)
            ).astype(np.int32)

            if depth + 1 == self.max_depth:
                break

            # stable counting partition: within every split group's run, rows
            # going left keep relative order and move to the front
            b_row = is_split & go_left
            b_row |= ~is_split
            b = np.take(np.tile(b_row, f), permoff, out=self._b, mode="clip")
            cb = np.cumsum(b, axis=1, dtype=np.int32)
            base_b = np.where(
                (starts == 0)[None, :], np.int32(0), cb[:, np.maximum(starts - 1, 0)]
            )
            tot_b = cb[:, ends] - base_b
            starts_rep = np.repeat(starts.astype(np.int32), g_counts)
            lefts_excl = cb
            lefts_excl -= np.repeat(base_b, g_counts, axis=1)
            lefts_excl -= b
            pos_in_run = self.rows_i32 - starts_rep
            # dest = lefts_excl where b else run_lefts + rights_excl, branch-free
            alt = np.repeat(tot_b, g_counts, axis=1)
            alt += pos_in_run[None, :]
            alt -= lefts_excl
            alt -= lefts_excl
            alt *= ~b
            dest = lefts_excl
            dest += alt
            dest += starts_rep[None, :]
            dest += self.rowoff
            spare.ravel()[dest.ravel()] = permoff.ravel()
            permoff, spare = spare, (
                self._po_b if spare is self._po_a else self._po_a
            )

            new_layout = []
            for node in layout:
                if feature[node] >= 0:
                    new_layout.append(left[node])
                    new_layout.append(right[node])
                else:
                    new_layout.append(node)
            layout = np.asarray(new_layout, dtype=np.int64)

        tree = Tree(
            feature=feature[:n_nodes].copy(),
            threshold=threshold[:n_nodes].copy(),
            left=left[:n_nodes].copy(),
            right=right[:n_nodes].copy(),
            value=value[:n_nodes].copy(),
        )
        return tree, leaf.astype(np.int64), gain_total, gain_by_feature


def gbt_fit(
    X: np.ndarray,
    y: np.ndarray,
    n_estimators: int,
    learning_rate: float,
    max_depth: int,
    reg_lambda: float = 1.0,
    seed: int = 0,
) -> GbtModel:
    """Fit an ensemble of `n_estimators` trees to residuals of the running model.

    base_score is mean(y); each tree is fit to the current residuals by exact
    greedy split search with L2 leaf shrinkage `reg_lambda`. Training MSE per
    boosting round is recorded in the returned model and never increases.
    `seed` is accepted for interface stability; the procedure is deterministic.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if X.shape[0] < 2:
        raise ValueError("need at least two samples")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("X and y must be finite")
    if n_estimators < 1:
        raise ValueError("n_estimators must be positive")
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    if max_depth < 1:
        raise ValueError("max_depth must be positive")
    if reg_lambda < 0:
        raise ValueError("reg_lambda must be non-negative")

    sort_idx = np.argsort(X, axis=0, kind="stable")
    x_sorted = np.take_along_axis(X, sort_idx, axis=0)
    return _fit_core(
        X, y, n_estimators, learning_rate, max_depth, reg_lambda, sort_idx, x_sorted
    )


def _fit_core(
    X: np.ndarray,
    y: np.ndarray,
    n_estimators: int,
    learning_rate: float,
    max_depth: int,
    reg_lambda: float,
    sort_idx: np.ndarray,
    x_sorted: np.ndarray,
) -> GbtModel:
    """Boosting loop against caller-supplied presorted columns (inputs trusted)."""
    base = float(y.mean())
    pred = np.full(y.shape, base)
    builder = _TreeBuilder(X, sort_idx, x_sorted, max_depth, reg_lambda)

    model = GbtModel(
        trees=[],
        learning_rate=learning_rate,
        base_score=base,
        reg_lambda=reg_lambda,
        n_features=X.shape[1],
    )
    for _ in range(n_estimators):
        residual = y - pred
        tree, leaf, gain_total, gain_by_feature = builder.build(residual)
        pred = pred + learning_rate * tree.value[leaf]
        model.trees.append(tree)
        model.feature_importance += gain_by_feature
        model.total_gain += gain_total
        model.train_losses.append(float(np.mean((y - pred) ** 2)))
    return model


def gbt_predict(m: GbtModel, X: np.ndarray) -> np.ndarray:
    """Evaluate the ensemble on the rows of X."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != m.n_features:
        raise ValueError(
            f"expected a 2-D matrix with {m.n_features} columns, got shape {X.shape}"
        )
    out = np.full(X.shape[0], m.base_score)
    for tree in m.trees:
        out += m.learning_rate * tree.predict(X)
    return out


def gbt_importance(m: GbtModel) -> np.ndarray:
    """Per-feature split gain accumulated over all trees; never-split features are 0."""
    return m.feature_importance.copy()
