"""Independent reference implementations shared by the unit and acceptance tests.

Everything here recomputes results through a deliberately different code path
than the library (scalar loops, per-row traversals, finite differences) so the
tests compare two independent routes to the same numbers.
"""

import math

import numpy as np

from pue_forecast.rnn import GruParams, forward_batch, model_backward, model_forward


# ---------------------------------------------------------------- gradients

def finite_diff_worst_rel_err(model, X_seq, eps=1e-5):
    """Perturb every parameter of `model` and compare against analytic BPTT.

    Returns the worst relative error max|num - ana| / max(1e-8, |num| + |ana|)
    over all parameters for the scalar prediction on one window.
    """
    _pred, cache = model_forward(model, X_seq)
    grads = model_backward(model, cache, 1.0)
    worst = 0.0
    for p, g in zip(model.param_arrays(), grads.param_arrays()):
        flat_p = p.ravel()
        flat_g = g.ravel()
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + eps
            up, _ = forward_batch(model, X_seq[None], exact=False)
            flat_p[i] = orig - eps
            dn, _ = forward_batch(model, X_seq[None], exact=False)
            flat_p[i] = orig
            num = (up[0] - dn[0]) / (2.0 * eps)
            rel = abs(num - flat_g[i]) / max(1e-8, abs(num) + abs(flat_g[i]))
            worst = max(worst, rel)
    return worst


def random_config_check(seed, max_features=4, max_hidden=4, max_layers=2,
                        max_window=5, mode="bigru", eps=1e-5):
    """Draw a random small model + window and gradient-check it."""
    from pue_forecast.rnn import init_params

    rng = np.random.default_rng(seed)
    f = int(rng.integers(1, max_features + 1))
    h = int(rng.integers(1, max_hidden + 1))
    layers = int(rng.integers(1, max_layers + 1))
    w = int(rng.integers(1, max_window + 1))
    model = init_params(f, h, layers, mode, seed=seed)
    X = rng.standard_normal((w, f))
    return finite_diff_worst_rel_err(model, X, eps=eps)


# ------------------------------------------------------------- GRU hand math

def hand_cell():
    """Fixed 2-unit, 1-input cell used by the scalar-arithmetic trace."""
    return GruParams(
        W_r=np.array([[0.10, -0.20], [0.30, 0.05]]),
        W_z=np.array([[-0.15, 0.25], [0.10, -0.30]]),
        W_h=np.array([[0.20, 0.10], [-0.25, 0.15]]),
        U_r=np.array([[0.50], [-0.40]]),
        U_z=np.array([[0.30], [0.20]]),
        U_h=np.array([[-0.60], [0.35]]),
        b_r=np.array([0.01, -0.02]),
        b_z=np.array([0.03, 0.04]),
        b_h=np.array([-0.05, 0.06]),
    )


def scalar_trace(p, h_prev, x):
    """One recurrence step written out as plain scalar arithmetic."""
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    r, z, c, h = [0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]
    for i in range(2):
        a_r = p.W_r[i][0] * h_prev[0] + p.W_r[i][1] * h_prev[1] + p.U_r[i][0] * x + p.b_r[i]
        a_z = p.W_z[i][0] * h_prev[0] + p.W_z[i][1] * h_prev[1] + p.U_z[i][0] * x + p.b_z[i]
        r[i] = sig(a_r)
        z[i] = sig(a_z)
    for i in range(2):
        a_h = (
            p.W_h[i][0] * (r[0] * h_prev[0])
            + p.W_h[i][1] * (r[1] * h_prev[1])
            + p.U_h[i][0] * x
            + p.b_h[i]
        )
        c[i] = math.tanh(a_h)
        h[i] = (1.0 - z[i]) * h_prev[i] + z[i] * c[i]
    return r, z, c, h


# ----------------------------------------------------------------- metrics

def loop_metrics(y_true, y_pred):
    """Naive sequential recomputation, independent of the vectorized path."""
    n = len(y_true)
    se = 0.0
    ae = 0.0
    for i in range(n):
        d = y_pred[i] - y_true[i]
        se += d * d
        ae += abs(d)
    mean = sum(y_true) / n
    ss_tot = sum((x - mean) ** 2 for x in y_true)
    r2 = None if ss_tot == 0.0 else 1.0 - se / ss_tot
    return se / n, ae / n, r2


# --------------------------------------------------------------------- GBT

def walk_predict(model, X):
    """Independent per-row traversal of the stored node arrays."""
    out = np.empty(X.shape[0])
    for r, row in enumerate(X):
        total = model.base_score
        for tree in model.trees:
            i = 0
            while tree.feature[i] >= 0:
                if row[tree.feature[i]] < tree.threshold[i]:
                    i = int(tree.left[i])
                else:
                    i = int(tree.right[i])
            total += model.learning_rate * tree.value[i]
        out[r] = total
    return out


def best_stump(X, y):
    """Exhaustive (feature, midpoint) stump search minimizing SSE."""
    best = (np.inf, None, None)
    for c in range(X.shape[1]):
        vals = np.unique(X[:, c])
        for a, b in zip(vals, vals[1:]):
            thr = 0.5 * (a + b)
            m = X[:, c] < thr
            sse = np.sum((y[m] - y[m].mean()) ** 2) + np.sum(
                (y[~m] - y[~m].mean()) ** 2
            )
            if sse < best[0]:
                best = (sse, c, thr)
    return best


def replay_residuals(model, X, y):
    """Yield (tree, residuals-before-tree) pairs by replaying the boosting path."""
    pred = np.full(len(y), model.base_score)
    for tree in model.trees:
        yield tree, y - pred
        pred = pred + model.learning_rate * tree.predict(X)


def leaf_closed_form_worst_err(model, X, y):
    """Route rows through each tree independently and compare every leaf value
    against sum(residuals) / (count + lambda)."""
    worst = 0.0
    for tree, resid in replay_residuals(model, X, y):
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
            expected = np.sum(rs) / (len(rs) + model.reg_lambda)
            worst = max(worst, abs(tree.value[i] - expected))
    return worst
