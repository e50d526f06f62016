"""Recursive feature elimination with cross-validation, scored by the GBT estimator.

Each iteration scores the surviving feature set with k-fold CV (mean held-out
MSE), refits the estimator on all rows to rank features by accumulated split
gain, and drops the `step` least important ones until a single feature
remains. Folds are contiguous chronological blocks, suiting time-series rows.
Sweeping the estimator grid yields candidate feature sets ranked by their
best-count CV MSE.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .gbt import _fit_core, gbt_importance, gbt_predict

log = logging.getLogger(__name__)

DEFAULT_LR_GRID = (0.5, 0.75, 0.1, 0.075, 0.05)
DEFAULT_N_ESTIMATORS_GRID = (50, 100, 150, 200, 250)
DEFAULT_MAX_DEPTH_GRID = (3, 6, 9, 12)


@dataclass(frozen=True)
class GbtConfig:
    """Estimator hyperparameters varied by the selection sweep."""

    learning_rate: float
    n_estimators: int
    max_depth: int
    reg_lambda: float = 1.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.n_estimators < 1 or self.max_depth < 1:
            raise ValueError("n_estimators and max_depth must be positive")


@dataclass
class RfecvResult:
    """Elimination trace and the CV-optimal feature subset for one estimator config."""

    elimination_order: list[int]
    cv_mse_by_count: dict[int, float]
    best_count: int
    selected_features: list[str]
    estimator_config: GbtConfig

    @property
    def best_mse(self) -> float:
        return self.cv_mse_by_count[self.best_count]


def make_folds(n: int, folds: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Contiguous chronological blocks: disjoint, exhaustive, sizes within 1."""
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if folds > n:
        raise ValueError(f"cannot build {folds} folds from {n} samples")
    base, rem = divmod(n, folds)
    out = []
    idx = np.arange(n)
    start = 0
    for i in range(folds):
        size = base + (1 if i < rem else 0)
        val = idx[start : start + size]
        tr = np.concatenate([idx[:start], idx[start + size :]])
        out.append((tr, val))
        start += size
    return out


def rfecv_run(
    ds: Dataset,
    estimator_config: GbtConfig,
    step: int = 1,
    folds: int = 5,
    seed: int = 0,
) -> RfecvResult:
    """Eliminate features one batch at a time, CV-scoring every visited count.

    Importances for elimination come from a fit on all rows of `ds` with the
    surviving features; ties eliminate the lowest feature index first. The
    best count is the CV-MSE argmin, ties resolved toward fewer features.
    """
    if ds.n_features < 2:
        raise ValueError("need at least 2 features")
    if step < 1:
        raise ValueError("step must be positive")
    cfg = estimator_config
    fold_list = make_folds(ds.n_samples, folds)

    X, y = ds.X, ds.y
    # presort each fold's columns once; per-count fits reuse column slices
    fold_cache = []
    for tr, va in fold_list:
        Xtr = X[tr]
        sort_tr = np.argsort(Xtr, axis=0, kind="stable")
        fold_cache.append(
            (Xtr, y[tr], X[va], y[va], sort_tr, np.take_along_axis(Xtr, sort_tr, axis=0))
        )
    sort_full = np.argsort(X, axis=0, kind="stable")
    xs_full = np.take_along_axis(X, sort_full, axis=0)

    active = list(range(ds.n_features))
    elimination_order: list[int] = []
    cv_mse_by_count: dict[int, float] = {}

    while True:
        count = len(active)
        fold_mses = []
        for j, (Xtr, ytr, Xva, yva, sort_tr, xs_tr) in enumerate(fold_cache):
            try:
                model = _fit_core(
                    Xtr[:, active], ytr, cfg.n_estimators, cfg.learning_rate,
                    cfg.max_depth, cfg.reg_lambda,
                    sort_tr[:, active], xs_tr[:, active],
                )
            except Exception as exc:
                raise RuntimeError(
                    f"estimator failed at feature count {count}, fold {j}: {exc}"
                ) from exc
            pred = gbt_predict(model, Xva[:, active])
            fold_mses.append(float(np.mean((pred - yva) ** 2)))
        cv_mse_by_count[count] = float(np.mean(fold_mses))
        log.debug(
            "count=%d cv_mse=%.6g config=%s", count, cv_mse_by_count[count], cfg
        )
        if count == 1:
            break
        try:
            full = _fit_core(
                X[:, active], y, cfg.n_estimators, cfg.learning_rate, cfg.max_depth,
                cfg.reg_lambda, sort_full[:, active], xs_full[:, active],
            )
        except Exception as exc:
            raise RuntimeError(
                f"estimator failed at feature count {count} (importance fit): {exc}"
            ) from exc
        imp = gbt_importance(full)
        k = min(step, count - 1)
        drop_local = np.argsort(imp, kind="stable")[:k]
        for li in sorted(drop_local.tolist()):
            elimination_order.append(active[li])
        for li in sorted(drop_local.tolist(), reverse=True):
            del active[li]

    best_count = min(cv_mse_by_count, key=lambda c: (cv_mse_by_count[c], c))
    eliminated = set(elimination_order[: ds.n_features - best_count])
    selected = [
        ds.feature_names[i] for i in range(ds.n_features) if i not in eliminated
    ]
    return RfecvResult(
        elimination_order=elimination_order,
        cv_mse_by_count=cv_mse_by_count,
        best_count=best_count,
        selected_features=selected,
        estimator_config=cfg,
    )


def expand_grid(
    lr_grid=DEFAULT_LR_GRID,
    n_estimators_grid=DEFAULT_N_ESTIMATORS_GRID,
    max_depth_grid=DEFAULT_MAX_DEPTH_GRID,
) -> list[GbtConfig]:
    """Enumerate estimator configs, learning rate outermost."""
    return [
        GbtConfig(learning_rate=lr, n_estimators=n, max_depth=d)
        for lr in lr_grid
        for n in n_estimators_grid
        for d in max_depth_grid
    ]


def _run_config(args: tuple) -> RfecvResult:
    ds, cfg, step, folds, seed = args
    return rfecv_run(ds, cfg, step=step, folds=folds, seed=seed)


def rfecv_grid(
    ds: Dataset,
    lr_grid=DEFAULT_LR_GRID,
    n_estimators_grid=DEFAULT_N_ESTIMATORS_GRID,
    max_depth_grid=DEFAULT_MAX_DEPTH_GRID,
    top_k: int = 6,
    step: int = 1,
    folds: int = 5,
    seed: int = 0,
    workers: int = 1,
) -> list[RfecvResult]:
    """Run rfecv_run for every grid combination and keep the top_k feature sets.

    Results are ordered by ascending best-count CV MSE (grid order breaks
    ties); duplicate selected sets keep only their lowest-MSE config. top_k
    larger than the number of distinct sets returns everything.
    """
    if top_k < 1:
        raise ValueError("top_k must be positive")
    configs = expand_grid(lr_grid, n_estimators_grid, max_depth_grid)
    if not configs:
        raise ValueError("estimator grid is empty")

    args = [(ds, cfg, step, folds, seed) for cfg in configs]
    if workers <= 1:
        results = [_run_config(a) for a in args]
    else:
        with ProcessPoolExecutor(
            max_workers=workers, mp_context=get_context("spawn")
        ) as pool:
            results = list(pool.map(_run_config, args))

    order = sorted(range(len(results)), key=lambda i: (results[i].best_mse, i))
    seen: set[tuple[str, ...]] = set()
    out: list[RfecvResult] = []
    for i in order:
        key = tuple(results[i].selected_features)
        if key in seen:
            continue
        seen.add(key)
        out.append(results[i])
        if len(out) == top_k:
            break
    return out


def results_to_json(results: list[RfecvResult]) -> list[dict]:
    return [
        {
            "config": {
                "learning_rate": r.estimator_config.learning_rate,
                "n_estimators": r.estimator_config.n_estimators,
                "max_depth": r.estimator_config.max_depth,
                "reg_lambda": r.estimator_config.reg_lambda,
            },
            "best_count": r.best_count,
            "cv_mse": r.best_mse,
            "selected_features": list(r.selected_features),
            "cv_mse_by_count": {str(k): v for k, v in sorted(r.cv_mse_by_count.items())},
        }
        for r in results
    ]


def write_results_json(results: list[RfecvResult], path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(results_to_json(results), indent=1), encoding="utf-8"
    )


def load_feature_sets(path: str | Path) -> list[list[str]]:
    """Read the selected feature-name lists back from a results JSON file."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    sets = [list(entry["selected_features"]) for entry in doc]
    if not sets:
        raise ValueError(f"{path}: no feature sets")
    return sets


def write_mse_curve_csv(results: list[RfecvResult], path: str | Path) -> None:
    """Long-format (config, count, mse) rows for plotting MSE vs feature count."""
    lines = ["learning_rate,n_estimators,max_depth,count,mse"]
    for r in results:
        c = r.estimator_config
        for count in sorted(r.cv_mse_by_count, reverse=True):
            lines.append(
                f"{c.learning_rate!r},{c.n_estimators},{c.max_depth},"
                f"{count},{r.cv_mse_by_count[count]!r}"
            )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
