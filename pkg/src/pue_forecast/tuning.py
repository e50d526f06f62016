"""Hyperparameter grid search: Adam-trained GRU/BiGRU runs with best-model checkpoints.

Training is full-batch: every epoch computes the mean squared error over all
training windows, backpropagates once and applies one Adam step. Held-out
metrics are computed on a fixed cadence and the checkpoint keeps the
parameters of the best evaluation seen, never the final epoch's weights.
"""

from __future__ import annotations

import base64
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from .dataset import (
    Dataset,
    NormalizationParams,
    WindowedSet,
    fit_normalizer,
    normalize,
    split_chronological,
    window,
)
from .metrics import MetricsReport, evaluate
from .rnn import Model, backward_batch, forward_batch, init_params, predict_batch

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1

DEFAULT_LAYERS_GRID = (1, 2, 3)
DEFAULT_HIDDEN_GRID = (10, 25, 50, 75, 100)
DEFAULT_LR_GRID = (0.001, 0.005, 0.01, 0.05, 0.1)


class TrainingDiverged(RuntimeError):
    """Raised when the training loss leaves the finite range."""

    def __init__(self, epoch: int, last_finite_loss: float):
        super().__init__(
            f"training loss became non-finite at epoch {epoch}; "
            f"last finite loss {last_finite_loss!r}"
        )
        self.epoch = epoch
        self.last_finite_loss = last_finite_loss


@dataclass(frozen=True)
class TrainConfig:
    """One grid point plus the loop constants."""

    layers: int
    hidden_dim: int
    learning_rate: float
    max_epochs: int = 4000
    eval_every: int = 500
    mode: str = "bigru"
    seed: int = 0
    window: int = 6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float | None = None
    checkpoint_on_train_loss: bool = False

    def __post_init__(self):
        if self.layers < 1 or self.hidden_dim < 1 or self.window < 1:
            raise ValueError("layers, hidden_dim and window must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.max_epochs < 1 or self.eval_every < 1:
            raise ValueError("max_epochs and eval_every must be positive")
        if self.eval_every > self.max_epochs:
            raise ValueError("eval_every must not exceed max_epochs")
        if self.mode not in ("gru", "bigru"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class EvalRecord:
    epoch: int
    mse: float
    mae: float
    r2: float | None


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    evals: list[EvalRecord] = field(default_factory=list)


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    moments: tuple[list[np.ndarray], list[np.ndarray]],
    t: int,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[list[np.ndarray], tuple[list[np.ndarray], list[np.ndarray]]]:
    """One bias-corrected Adam update, applied elementwise in place.

    `moments` is the pair (first, second) of running-moment arrays matching
    `params`; `t` is the 1-based step count.
    """
    if t < 1:
        raise ValueError("step count t must be >= 1")
    m, v = moments
    if not (len(params) == len(grads) == len(m) == len(v)):
        raise ValueError("params, grads and moments must have matching lengths")
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for p, g, mi, vi in zip(params, grads, m, v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        mi *= beta1
        mi += (1.0 - beta1) * g
        vi *= beta2
        vi += (1.0 - beta2) * (g * g)
        p -= lr * (mi / bc1) / (np.sqrt(vi / bc2) + eps)
    return params, (m, v)


@dataclass
class Checkpoint:
    """Serialized best model plus everything needed to reproduce its predictions."""

    config: TrainConfig
    n_features: int
    shapes: list[tuple[str, tuple[int, ...]]]
    params: np.ndarray  # flat float64, row-major per shape manifest
    best_epoch: int
    best_loss: float
    metrics: dict
    feature_names: list[str] | None = None
    normalization: NormalizationParams | None = None
    format_version: int = CHECKPOINT_FORMAT_VERSION

    def to_model(self) -> Model:
        model = init_params(
            self.n_features, self.config.hidden_dim, self.config.layers,
            self.config.mode, seed=0,
        )
        items = model.param_items()
        if [(n, a.shape) for n, a in items] != [
            (n, tuple(s)) for n, s in self.shapes
        ]:
            raise ValueError("checkpoint shape manifest does not match its config")
        offset = 0
        for _, arr in items:
            arr[...] = self.params[offset : offset + arr.size].reshape(arr.shape)
            offset += arr.size
        if offset != self.params.size:
            raise ValueError(
                f"parameter payload has {self.params.size} values, expected {offset}"
            )
        return model

    def predict(self, windows: np.ndarray) -> np.ndarray:
        return predict_batch(self.to_model(), windows)

    def save(self, path: str | Path) -> None:
        payload = np.ascontiguousarray(self.params, dtype="<f8").tobytes()
        doc = {
            "format_version": self.format_version,
            "config": {
                "layers": self.config.layers,
                "hidden_dim": self.config.hidden_dim,
                "learning_rate": self.config.learning_rate,
                "max_epochs": self.config.max_epochs,
                "eval_every": self.config.eval_every,
                "mode": self.config.mode,
                "seed": self.config.seed,
                "window": self.config.window,
                "beta1": self.config.beta1,
                "beta2": self.config.beta2,
                "eps": self.config.eps,
                "grad_clip": self.config.grad_clip,
                "checkpoint_on_train_loss": self.config.checkpoint_on_train_loss,
            },
            "n_features": self.n_features,
            "shapes": [[n, list(s)] for n, s in self.shapes],
            "params_b64": base64.b64encode(payload).decode("ascii"),
            "best_epoch": self.best_epoch,
            "best_loss": self.best_loss,
            "metrics": self.metrics,
            "feature_names": self.feature_names,
            "normalization": None
            if self.normalization is None
            else {
                "feature_names": list(self.normalization.feature_names),
                "feature_min": self.normalization.feature_min.tolist(),
                "feature_max": self.normalization.feature_max.tolist(),
                "target_min": self.normalization.target_min,
                "target_max": self.normalization.target_max,
            },
        }
        Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")

    @staticmethod
    def load(path: str | Path) -> "Checkpoint":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(
                f"unsupported checkpoint format version {doc.get('format_version')!r}"
            )
        params = np.frombuffer(
            base64.b64decode(doc["params_b64"]), dtype="<f8"
        ).astype(np.float64)
        if not np.isfinite(params).all():
            raise ValueError("checkpoint parameters contain non-finite values")
        norm = doc["normalization"]
        return Checkpoint(
            config=TrainConfig(**doc["config"]),
            n_features=doc["n_features"],
            shapes=[(n, tuple(s)) for n, s in doc["shapes"]],
            params=params,
            best_epoch=doc["best_epoch"],
            best_loss=doc["best_loss"],
            metrics=doc["metrics"],
            feature_names=doc["feature_names"],
            normalization=None
            if norm is None
            else NormalizationParams(
                feature_names=list(norm["feature_names"]),
                feature_min=np.asarray(norm["feature_min"]),
                feature_max=np.asarray(norm["feature_max"]),
                target_min=norm["target_min"],
                target_max=norm["target_max"],
            ),
        )


def _flat_params(model: Model) -> np.ndarray:
    return np.concatenate([a.ravel() for a in model.param_arrays()])


def train(
    ws_train: WindowedSet,
    ws_eval: WindowedSet,
    cfg: TrainConfig,
    feature_names: list[str] | None = None,
    normalization: NormalizationParams | None = None,
) -> tuple[Checkpoint, TrainHistory]:
    """Run one full-batch Adam training loop and return the best checkpoint.

    Held-out metrics are computed whenever the epoch is a multiple of
    cfg.eval_every; the checkpoint updates when the held-out MSE improves
    (or, with cfg.checkpoint_on_train_loss, whenever the training loss does).
    A non-finite loss raises TrainingDiverged.
    """
    if ws_train.n_windows < 1:
        raise ValueError("training set is empty")
    if ws_eval.n_windows < 2:
        raise ValueError("evaluation set needs at least two windows")
    if ws_train.window_length != cfg.window or ws_eval.window_length != cfg.window:
        raise ValueError(
            f"window length mismatch: config {cfg.window}, "
            f"train {ws_train.window_length}, eval {ws_eval.window_length}"
        )
    n_features = ws_train.windows.shape[2]
    model = init_params(n_features, cfg.hidden_dim, cfg.layers, cfg.mode, cfg.seed)
    params = model.param_arrays()
    m1 = [np.zeros_like(a) for a in params]
    m2 = [np.zeros_like(a) for a in params]

    X = ws_train.windows
    y = ws_train.targets
    B = ws_train.n_windows

    history = TrainHistory()
    best_loss = np.inf
    best_epoch = -1
    best_params: np.ndarray | None = None
    best_metrics: MetricsReport | None = None
    last_finite = np.nan

    for epoch in range(1, cfg.max_epochs + 1):
        pred, cache = forward_batch(model, X, exact=False)
        err = pred - y
        loss = float(np.mean(err * err))
        if not np.isfinite(loss):
            raise TrainingDiverged(epoch, last_finite)
        last_finite = loss
        history.train_loss.append(loss)

        if cfg.learning_rate > 0.0:
            grads = backward_batch(model, cache, 2.0 * err / B)
            garrs = grads.param_arrays()
            if cfg.grad_clip is not None:
                norm = float(np.sqrt(sum(float((g * g).sum()) for g in garrs)))
                if norm > cfg.grad_clip:
                    scale = cfg.grad_clip / norm
                    for g in garrs:
                        g *= scale
            adam_step(
                params, garrs, (m1, m2), t=epoch, lr=cfg.learning_rate,
                beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps,
            )

        if cfg.checkpoint_on_train_loss and loss < best_loss:
            best_loss = loss
            best_epoch = epoch
            best_params = _flat_params(model)

        if epoch % cfg.eval_every == 0:
            ev_pred = predict_batch(model, ws_eval.windows)
            rep = evaluate(ws_eval.targets, ev_pred)
            history.evals.append(EvalRecord(epoch, rep.mse, rep.mae, rep.r2))
            log.debug(
                "epoch %d train_loss=%.6g eval_mse=%.6g", epoch, loss, rep.mse
            )
            if not cfg.checkpoint_on_train_loss and rep.mse < best_loss:
                best_loss = rep.mse
                best_epoch = epoch
                best_params = _flat_params(model)
                best_metrics = rep

    assert best_params is not None  # eval_every <= max_epochs guarantees one eval
    if best_metrics is None:
        snapshot = Checkpoint(
            config=cfg,
            n_features=n_features,
            shapes=[(n, a.shape) for n, a in model.param_items()],
            params=best_params,
            best_epoch=best_epoch,
            best_loss=best_loss,
            metrics={},
        )
        rep = evaluate(ws_eval.targets, snapshot.predict(ws_eval.windows))
        best_metrics = rep

    checkpoint = Checkpoint(
        config=cfg,
        n_features=n_features,
        shapes=[(n, a.shape) for n, a in model.param_items()],
        params=best_params,
        best_epoch=best_epoch,
        best_loss=best_loss,
        metrics={"mse": best_metrics.mse, "mae": best_metrics.mae, "r2": best_metrics.r2},
        feature_names=feature_names,
        normalization=normalization,
    )
    return checkpoint, history


@dataclass
class TuneRecord:
    """Outcome of one (feature set, grid point) training run."""

    feature_set_index: int
    feature_set_label: str
    feature_names: list[str]
    n_features: int
    mode: str
    layers: int
    hidden_dim: int
    learning_rate: float
    window: int
    seed: int
    n_params: int
    best_epoch: int | None
    mse: float | None
    mae: float | None
    r2: float | None
    failed: bool = False
    error: str | None = None


@dataclass
class TuneReport:
    """All grid records plus the winner checkpoint per feature set."""

    records: list[TuneRecord]
    checkpoints: dict[int, Checkpoint]
    mode: str
    pue_units: bool

    def winners(self) -> list[TuneRecord]:
        """Best non-failed record per feature set (lowest MSE, ties to fewer params)."""
        out: list[TuneRecord] = []
        for si in sorted({r.feature_set_index for r in self.records}):
            ok = [r for r in self.records if r.feature_set_index == si and not r.failed]
            if ok:
                out.append(min(ok, key=lambda r: (r.mse, r.n_params)))
        return out

    @property
    def best(self) -> TuneRecord | None:
        ok = [r for r in self.records if not r.failed]
        if not ok:
            return None
        return min(ok, key=lambda r: (r.mse, r.n_params))

    def to_csv(self, path: str | Path, winners_only: bool = True) -> None:
        rows = self.winners() if winners_only else self.records
        lines = ["selected_features,layers,hidden,lr,epochs,mse,mae,r2"]
        for r in rows:
            lines.append(
                ",".join(
                    [
                        str(r.n_features),
                        str(r.layers),
                        str(r.hidden_dim),
                        repr(r.learning_rate),
                        "" if r.best_epoch is None else str(r.best_epoch),
                        "" if r.mse is None else repr(r.mse),
                        "" if r.mae is None else repr(r.mae),
                        "nan" if r.r2 is None else repr(r.r2),
                    ]
                )
            )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def to_records_csv(self, path: str | Path) -> None:
        lines = [
            "feature_set,selected_features,layers,hidden,lr,epochs,mse,mae,r2,n_params,failed,error"
        ]
        for r in self.records:
            lines.append(
                ",".join(
                    [
                        r.feature_set_label,
                        str(r.n_features),
                        str(r.layers),
                        str(r.hidden_dim),
                        repr(r.learning_rate),
                        "" if r.best_epoch is None else str(r.best_epoch),
                        "" if r.mse is None else repr(r.mse),
                        "" if r.mae is None else repr(r.mae),
                        "nan" if r.r2 is None else repr(r.r2),
                        str(r.n_params),
                        str(int(r.failed)),
                        '"' + (r.error or "").replace('"', "'") + '"',
                    ]
                )
            )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class _Job:
    si: int
    ci: int
    label: str
    feature_names: list[str]
    ws_train: WindowedSet
    ws_eval: WindowedSet
    cfg: TrainConfig
    normalization: NormalizationParams
    target_span: float
    pue_units: bool


def _run_job(job: _Job) -> tuple[int, int, TuneRecord, Checkpoint | None]:
    n_feat = len(job.feature_names)
    base = dict(
        feature_set_index=job.si,
        feature_set_label=job.label,
        feature_names=job.feature_names,
        n_features=n_feat,
        mode=job.cfg.mode,
        layers=job.cfg.layers,
        hidden_dim=job.cfg.hidden_dim,
        learning_rate=job.cfg.learning_rate,
        window=job.cfg.window,
        seed=job.cfg.seed,
    )
    model_shape = init_params(
        n_feat, job.cfg.hidden_dim, job.cfg.layers, job.cfg.mode, seed=0
    )
    n_params = model_shape.n_params()
    try:
        ckpt, _history = train(
            job.ws_train,
            job.ws_eval,
            job.cfg,
            feature_names=job.feature_names,
            normalization=job.normalization,
        )
    except TrainingDiverged as exc:
        rec = TuneRecord(
            **base,
            n_params=n_params,
            best_epoch=None,
            mse=None if not np.isfinite(exc.last_finite_loss) else exc.last_finite_loss,
            mae=None,
            r2=None,
            failed=True,
            error=str(exc),
        )
        return job.si, job.ci, rec, None
    except Exception as exc:  # propagated failures are recorded, not fatal
        rec = TuneRecord(
            **base,
            n_params=n_params,
            best_epoch=None,
            mse=None,
            mae=None,
            r2=None,
            failed=True,
            error=f"{type(exc).__name__}: {exc}",
        )
        return job.si, job.ci, rec, None

    scale = job.target_span if job.pue_units else 1.0
    rec = TuneRecord(
        **base,
        n_params=n_params,
        best_epoch=ckpt.best_epoch,
        mse=ckpt.metrics["mse"] * scale * scale,
        mae=ckpt.metrics["mae"] * scale,
        r2=ckpt.metrics["r2"],
    )
    return job.si, job.ci, rec, ckpt


def grid_search(
    ds: Dataset,
    feature_sets: list[list[str]],
    *,
    mode: str = "bigru",
    layers_grid: tuple[int, ...] = DEFAULT_LAYERS_GRID,
    hidden_grid: tuple[int, ...] = DEFAULT_HIDDEN_GRID,
    lr_grid: tuple[float, ...] = DEFAULT_LR_GRID,
    window_length: int = 6,
    train_fraction: float = 0.8,
    max_epochs: int = 4000,
    eval_every: int = 500,
    seed: int = 0,
    workers: int = 1,
    fit_on_all: bool = False,
    pue_units: bool = False,
    checkpoint_on_train_loss: bool = False,
    grad_clip: float | None = None,
) -> TuneReport:
    """Train every feature set x grid point and report the winners.

    Per feature set: project the dataset onto the set, split chronologically,
    fit the normalizer (training rows unless fit_on_all), normalize, window,
    then train one model per (layers, hidden, lr) grid point. Failed runs are
    recorded, not fatal. Results are assembled in grid order, so the report is
    identical for any worker count.
    """
    if not feature_sets:
        raise ValueError("need at least one feature set")
    if not (layers_grid and hidden_grid and lr_grid):
        raise ValueError("grids must be non-empty")

    jobs: list[_Job] = []
    for si, names in enumerate(feature_sets):
        sub = ds.select(list(names))
        train_ds, test_ds = split_chronological(sub, train_fraction)
        norm = fit_normalizer(sub if fit_on_all else train_ds)
        ws_tr = window(normalize(train_ds, norm), window_length)
        ws_te = window(normalize(test_ds, norm), window_length)
        span = norm.target_max - norm.target_min
        label = f"set{si:02d}_n{len(names)}"
        ci = 0
        for layers in layers_grid:
            for hidden in hidden_grid:
                for lr in lr_grid:
                    cfg = TrainConfig(
                        layers=layers,
                        hidden_dim=hidden,
                        learning_rate=lr,
                        max_epochs=max_epochs,
                        eval_every=eval_every,
                        mode=mode,
                        seed=seed + 1000 * si + ci,
                        window=window_length,
                        grad_clip=grad_clip,
                        checkpoint_on_train_loss=checkpoint_on_train_loss,
                    )
                    jobs.append(
                        _Job(si, ci, label, list(names), ws_tr, ws_te, cfg,
                             norm, span, pue_units)
                    )
                    ci += 1

    results: dict[tuple[int, int], tuple[TuneRecord, Checkpoint | None]] = {}
    if workers <= 1:
        for job in jobs:
            si, ci, rec, ckpt = _run_job(job)
            results[(si, ci)] = (rec, ckpt)
    else:
        with ProcessPoolExecutor(
            max_workers=workers, mp_context=get_context("spawn")
        ) as pool:
            for si, ci, rec, ckpt in pool.map(_run_job, jobs):
                results[(si, ci)] = (rec, ckpt)

    records: list[TuneRecord] = []
    winner_ckpt: dict[int, Checkpoint] = {}
    winner_key: dict[int, tuple] = {}
    for job in jobs:
        rec, ckpt = results[(job.si, job.ci)]
        records.append(rec)
        if not rec.failed and ckpt is not None:
            key = (rec.mse, rec.n_params, job.ci)
            if job.si not in winner_key or key < winner_key[job.si]:
                winner_key[job.si] = key
                winner_ckpt[job.si] = ckpt
    return TuneReport(
        records=records, checkpoints=winner_ckpt, mode=mode, pue_units=pue_units
    )
