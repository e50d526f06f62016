"""GRU and bidirectional GRU sequence regressors with analytic backprop through time.

Cell recurrence per step:

    r_t    = sigmoid(W_r h_prev + U_r x_t + b_r)
    z_t    = sigmoid(W_z h_prev + U_z x_t + b_z)
    cand_t = tanh(W_h (r_t * h_prev) + U_h x_t + b_h)
    h_t    = (1 - z_t) * h_prev + z_t * cand_t

A bidirectional layer runs one cell left-to-right and one right-to-left over
the window and SUMS the two per-step hidden states (elementwise, not
concatenation). Stacked layers consume the previous layer's full output
sequence; the readout is an affine map of the final layer's last-step state.

Two linear-algebra strategies back the same scan code. The exact strategy
accumulates matmuls column by column so every window's outputs are bitwise
independent of how windows are batched together; all prediction/evaluation
entry points use it. The fast strategy uses BLAS matmuls and backs the
training loop, where only run-to-run determinism matters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

MatMul = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _matmul_exact(a: np.ndarray, m: np.ndarray) -> np.ndarray:
    """a @ m accumulated column by column.

    Each output element is a fixed-order fold of elementwise products, so row
    k of the result is bitwise identical no matter how many rows a has.
    """
    out = np.zeros((a.shape[0], m.shape[1]))
    tmp = np.empty_like(out)
    for j in range(a.shape[1]):
        np.multiply(a[:, j, None], m[j][None, :], out=tmp)
        out += tmp
    return out


def _matmul_fast(a: np.ndarray, m: np.ndarray) -> np.ndarray:
    return a @ m


def _sigmoid(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        pos = 1.0 / (1.0 + np.exp(-x))
        ex = np.exp(x)
        neg = ex / (1.0 + ex)
    return np.where(x >= 0, pos, neg)


@dataclass
class GruParams:
    """Weights of one GRU cell; W_* act on the hidden state, U_* on the input."""

    W_r: np.ndarray
    W_z: np.ndarray
    W_h: np.ndarray
    U_r: np.ndarray
    U_z: np.ndarray
    U_h: np.ndarray
    b_r: np.ndarray
    b_z: np.ndarray
    b_h: np.ndarray

    def __post_init__(self):
        h, i = self.U_r.shape
        for name, arr in self.param_items():
            expect = (h, h) if name.startswith("W") else (h, i) if name.startswith("U") else (h,)
            if arr.shape != expect:
                raise ValueError(f"{name} has shape {arr.shape}, expected {expect}")

    @property
    def hidden_dim(self) -> int:
        return self.W_r.shape[0]

    @property
    def input_dim(self) -> int:
        return self.U_r.shape[1]

    def param_items(self) -> list[tuple[str, np.ndarray]]:
        return [
            ("W_r", self.W_r),
            ("W_z", self.W_z),
            ("W_h", self.W_h),
            ("U_r", self.U_r),
            ("U_z", self.U_z),
            ("U_h", self.U_h),
            ("b_r", self.b_r),
            ("b_z", self.b_z),
            ("b_h", self.b_h),
        ]

    @staticmethod
    def zeros(input_dim: int, hidden_dim: int) -> "GruParams":
        h, i = hidden_dim, input_dim
        return GruParams(
            W_r=np.zeros((h, h)), W_z=np.zeros((h, h)), W_h=np.zeros((h, h)),
            U_r=np.zeros((h, i)), U_z=np.zeros((h, i)), U_h=np.zeros((h, i)),
            b_r=np.zeros(h), b_z=np.zeros(h), b_h=np.zeros(h),
        )


@dataclass
class BiGruLayer:
    """Forward and backward cells of one bidirectional layer (same dimensions)."""

    forward: GruParams
    backward: GruParams

    def __post_init__(self):
        same = (
            self.forward.hidden_dim == self.backward.hidden_dim
            and self.forward.input_dim == self.backward.input_dim
        )
        if not same:
            raise ValueError("forward/backward cell dimensions differ")

    @property
    def hidden_dim(self) -> int:
        return self.forward.hidden_dim

    @property
    def input_dim(self) -> int:
        return self.forward.input_dim


@dataclass
class Model:
    """A stack of GRU or BiGRU layers with a scalar affine readout."""

    layers: list
    w_o: np.ndarray
    b_o: np.ndarray  # shape (1,)
    mode: str

    def __post_init__(self):
        if self.mode not in ("gru", "bigru"):
            raise ValueError(f"unknown mode {self.mode!r}")
        want = BiGruLayer if self.mode == "bigru" else GruParams
        if not self.layers or any(not isinstance(l, want) for l in self.layers):
            raise ValueError(f"{self.mode} model requires a non-empty stack of {want.__name__}")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.input_dim != prev.hidden_dim:
                raise ValueError("layer input_dim must equal previous hidden_dim")
        if self.w_o.shape != (self.layers[-1].hidden_dim,) or self.b_o.shape != (1,):
            raise ValueError("readout shapes inconsistent with final layer")

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def hidden_dim(self) -> int:
        return self.layers[0].hidden_dim

    def param_items(self) -> list[tuple[str, np.ndarray]]:
        items: list[tuple[str, np.ndarray]] = []
        for k, layer in enumerate(self.layers):
            if self.mode == "bigru":
                items += [(f"layer{k}.fwd.{n}", a) for n, a in layer.forward.param_items()]
                items += [(f"layer{k}.bwd.{n}", a) for n, a in layer.backward.param_items()]
            else:
                items += [(f"layer{k}.{n}", a) for n, a in layer.param_items()]
        items.append(("head.w_o", self.w_o))
        items.append(("head.b_o", self.b_o))
        return items

    def param_arrays(self) -> list[np.ndarray]:
        return [a for _, a in self.param_items()]

    def n_params(self) -> int:
        return sum(a.size for a in self.param_arrays())


def init_params(
    n_features: int, hidden_dim: int, n_layers: int, mode: str, seed: int
) -> Model:
    """Deterministically initialise a model: weights uniform(-k, k) with
    k = 1/sqrt(hidden_dim), biases zero."""
    if n_features < 1 or hidden_dim < 1 or n_layers < 1:
        raise ValueError("dimensions must be positive")
    rng = np.random.default_rng(int(seed))
    k = 1.0 / np.sqrt(hidden_dim)

    def cell(input_dim: int) -> GruParams:
        h = hidden_dim
        mats = [rng.uniform(-k, k, size=s) for s in
                [(h, h)] * 3 + [(h, input_dim)] * 3]
        return GruParams(*mats, b_r=np.zeros(h), b_z=np.zeros(h), b_h=np.zeros(h))

    layers = []
    in_dim = n_features
    for _ in range(n_layers):
        if mode == "bigru":
            layers.append(BiGruLayer(forward=cell(in_dim), backward=cell(in_dim)))
        else:
            layers.append(cell(in_dim))
        in_dim = hidden_dim
    w_o = rng.uniform(-k, k, size=hidden_dim)
    return Model(layers=layers, w_o=w_o, b_o=np.zeros(1), mode=mode)


@dataclass
class CellCache:
    r: np.ndarray
    z: np.ndarray
    cand: np.ndarray
    h_prev: np.ndarray
    x: np.ndarray


def gru_cell(
    p: GruParams, h_prev: np.ndarray, x_t: np.ndarray
) -> tuple[np.ndarray, CellCache]:
    """One recurrence step on plain vectors; returns (h_t, cache)."""
    h_prev = np.asarray(h_prev, dtype=np.float64).reshape(-1)
    x_t = np.asarray(x_t, dtype=np.float64).reshape(-1)
    if h_prev.shape[0] != p.hidden_dim or x_t.shape[0] != p.input_dim:
        raise ValueError(
            f"expected h_prev[{p.hidden_dim}], x_t[{p.input_dim}]; "
            f"got {h_prev.shape[0]}, {x_t.shape[0]}"
        )
    hp = h_prev[None, :]
    x = x_t[None, :]
    # additions ordered exactly as in the batched scan so a one-step cell is
    # bitwise identical to a W=1 window
    r = _sigmoid(_matmul_exact(x, p.U_r.T) + p.b_r + _matmul_exact(hp, p.W_r.T))
    z = _sigmoid(_matmul_exact(x, p.U_z.T) + p.b_z + _matmul_exact(hp, p.W_z.T))
    cand = np.tanh(_matmul_exact(x, p.U_h.T) + p.b_h + _matmul_exact(r * hp, p.W_h.T))
    h = (1.0 - z) * hp + z * cand
    return h[0], CellCache(r=r[0], z=z[0], cand=cand[0], h_prev=h_prev, x=x_t)


@dataclass
class ScanCache:
    seq: np.ndarray      # [B, W, I] input to the scan
    r: np.ndarray        # [B, W, H]
    z: np.ndarray
    cand: np.ndarray
    h_prev: np.ndarray


@dataclass
class LayerCache:
    fwd: ScanCache
    bwd: ScanCache | None


@dataclass
class ModelCache:
    layers: list[LayerCache]
    last_hidden: np.ndarray  # [B, H] final layer, last step


def _gru_scan(p: GruParams, seq: np.ndarray, mm: MatMul) -> tuple[np.ndarray, ScanCache]:
    B, W, _ = seq.shape
    H = p.hidden_dim
    flat = np.ascontiguousarray(seq).reshape(B * W, p.input_dim)
    proj_r = (mm(flat, p.U_r.T) + p.b_r).reshape(B, W, H)
    proj_z = (mm(flat, p.U_z.T) + p.b_z).reshape(B, W, H)
    proj_h = (mm(flat, p.U_h.T) + p.b_h).reshape(B, W, H)

    h = np.zeros((B, H))
    out = np.empty((B, W, H))
    rs = np.empty((B, W, H))
    zs = np.empty((B, W, H))
    cs = np.empty((B, W, H))
    hp = np.empty((B, W, H))
    for t in range(W):
        r = _sigmoid(proj_r[:, t] + mm(h, p.W_r.T))
        z = _sigmoid(proj_z[:, t] + mm(h, p.W_z.T))
        cand = np.tanh(proj_h[:, t] + mm(r * h, p.W_h.T))
        hp[:, t] = h
        h = (1.0 - z) * h + z * cand
        rs[:, t] = r
        zs[:, t] = z
        cs[:, t] = cand
        out[:, t] = h
    return out, ScanCache(seq=seq, r=rs, z=zs, cand=cs, h_prev=hp)


def _gru_scan_backward(
    p: GruParams, cache: ScanCache, d_out: np.ndarray, mm: MatMul
) -> tuple[GruParams, np.ndarray]:
    """Backprop one scan; returns (parameter grads as a GruParams, d_input_seq)."""
    B, W, H = d_out.shape
    g = GruParams.zeros(p.input_dim, p.hidden_dim)
    d_seq = np.empty((B, W, p.input_dim))
    dh = np.zeros((B, H))
    for t in reversed(range(W)):
        dh_total = d_out[:, t] + dh
        r = cache.r[:, t]
        z = cache.z[:, t]
        cand = cache.cand[:, t]
        h_prev = cache.h_prev[:, t]
        x = cache.seq[:, t]

        da_z = dh_total * (cand - h_prev) * z * (1.0 - z)
        da_c = dh_total * z * (1.0 - cand * cand)
        d_rh = mm(da_c, p.W_h)
        da_r = d_rh * h_prev * r * (1.0 - r)

        g.W_h += da_c.T @ (r * h_prev)
        g.U_h += da_c.T @ x
        g.b_h += da_c.sum(axis=0)
        g.W_z += da_z.T @ h_prev
        g.U_z += da_z.T @ x
        g.b_z += da_z.sum(axis=0)
        g.W_r += da_r.T @ h_prev
        g.U_r += da_r.T @ x
        g.b_r += da_r.sum(axis=0)

        d_seq[:, t] = da_r @ p.U_r + da_z @ p.U_z + da_c @ p.U_h
        dh = dh_total * (1.0 - z) + d_rh * r + da_z @ p.W_z + da_r @ p.W_r
    return g, d_seq


def _bigru_layer_forward(
    layer: BiGruLayer, seq: np.ndarray, mm: MatMul
) -> tuple[np.ndarray, LayerCache]:
    out_f, cache_f = _gru_scan(layer.forward, seq, mm)
    rev = np.ascontiguousarray(seq[:, ::-1])
    out_b_rev, cache_b = _gru_scan(layer.backward, rev, mm)
    out = out_f + out_b_rev[:, ::-1]
    return out, LayerCache(fwd=cache_f, bwd=cache_b)


def _bigru_layer_backward(
    layer: BiGruLayer, cache: LayerCache, d_out: np.ndarray, mm: MatMul
) -> tuple[GruParams, GruParams, np.ndarray]:
    g_f, d_seq_f = _gru_scan_backward(layer.forward, cache.fwd, d_out, mm)
    d_out_rev = np.ascontiguousarray(d_out[:, ::-1])
    g_b, d_seq_b = _gru_scan_backward(layer.backward, cache.bwd, d_out_rev, mm)
    return g_f, g_b, d_seq_f + d_seq_b[:, ::-1]


def bigru_forward(layer: BiGruLayer, X_seq: np.ndarray) -> np.ndarray:
    """Run one bidirectional layer over a single window [W, input_dim].

    Row t of the result is the sum of the forward scan's state at t and the
    backward scan's state at t, both started from zero.
    """
    X_seq = np.asarray(X_seq, dtype=np.float64)
    if X_seq.ndim != 2 or X_seq.shape[1] != layer.input_dim:
        raise ValueError(f"expected [W, {layer.input_dim}] input, got {X_seq.shape}")
    out, _ = _bigru_layer_forward(layer, X_seq[None], _matmul_exact)
    return out[0]


def gru_forward(p: GruParams, X_seq: np.ndarray) -> np.ndarray:
    """Run one unidirectional scan over a single window [W, input_dim]."""
    X_seq = np.asarray(X_seq, dtype=np.float64)
    if X_seq.ndim != 2 or X_seq.shape[1] != p.input_dim:
        raise ValueError(f"expected [W, {p.input_dim}] input, got {X_seq.shape}")
    out, _ = _gru_scan(p, X_seq[None], _matmul_exact)
    return out[0]


def forward_batch(
    model: Model, X: np.ndarray, exact: bool = True
) -> tuple[np.ndarray, ModelCache]:
    """Forward a batch of windows [B, W, n_features] to scalar predictions [B]."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[2] != model.input_dim:
        raise ValueError(
            f"expected windows [B, W, {model.input_dim}], got shape {X.shape}"
        )
    mm = _matmul_exact if exact else _matmul_fast
    seq = X
    layer_caches: list[LayerCache] = []
    for layer in model.layers:
        if model.mode == "bigru":
            seq, cache = _bigru_layer_forward(layer, seq, mm)
        else:
            seq, scan = _gru_scan(layer, seq, mm)
            cache = LayerCache(fwd=scan, bwd=None)
        layer_caches.append(cache)
    last = seq[:, -1, :]
    if exact:
        pred = np.full(X.shape[0], model.b_o[0])
        for j in range(last.shape[1]):
            pred += last[:, j] * model.w_o[j]
    else:
        pred = last @ model.w_o + model.b_o[0]
    return pred, ModelCache(layers=layer_caches, last_hidden=last)


def backward_batch(
    model: Model, cache: ModelCache, d_pred: np.ndarray
) -> Model:
    """Backprop scalar-prediction grads [B] to a Model-shaped gradient container."""
    if len(cache.layers) != len(model.layers):
        raise ValueError("cache does not match model layer stack")
    d_pred = np.asarray(d_pred, dtype=np.float64).reshape(-1)
    if cache.last_hidden.shape[0] != d_pred.shape[0]:
        raise ValueError("cache batch size does not match gradient batch size")
    mm = _matmul_fast
    B = d_pred.shape[0]

    dw_o = cache.last_hidden.T @ d_pred
    db_o = np.array([d_pred.sum()])
    d_last = d_pred[:, None] * model.w_o[None, :]

    grad_layers: list = []
    W = cache.layers[-1].fwd.seq.shape[1]
    d_seq = np.zeros((B, W, model.layers[-1].hidden_dim))
    d_seq[:, -1] = d_last
    for layer, lcache in zip(reversed(model.layers), reversed(cache.layers)):
        if model.mode == "bigru":
            g_f, g_b, d_seq = _bigru_layer_backward(layer, lcache, d_seq, mm)
            grad_layers.append(BiGruLayer(forward=g_f, backward=g_b))
        else:
            g, d_seq = _gru_scan_backward(layer, lcache.fwd, d_seq, mm)
            grad_layers.append(g)
    grad_layers.reverse()
    return Model(layers=grad_layers, w_o=dw_o, b_o=db_o, mode=model.mode)


def model_forward(model: Model, X_seq: np.ndarray) -> tuple[float, ModelCache]:
    """Predict a single window [W, n_features]; bitwise equal to batched prediction."""
    X_seq = np.asarray(X_seq, dtype=np.float64)
    if X_seq.ndim != 2:
        raise ValueError("X_seq must be a [W, n_features] matrix")
    pred, cache = forward_batch(model, X_seq[None], exact=True)
    return float(pred[0]), cache


def model_backward(model: Model, caches: ModelCache, dLoss_dPred: float) -> Model:
    """Gradients of a scalar loss through a single-window forward pass."""
    return backward_batch(model, caches, np.array([float(dLoss_dPred)]))


def predict_batch(model: Model, X: np.ndarray) -> np.ndarray:
    """Predictions for a batch of windows via the grouping-invariant exact path."""
    return forward_batch(model, X, exact=True)[0]
