"""Regression evaluation: MSE, MAE and the coefficient of determination."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MetricsReport:
    """Evaluation summary; r2 is None when the truth has zero variance."""

    mse: float
    mae: float
    r2: float | None
    n: int


def evaluate(y_true: np.ndarray, y_pred: np.ndarray) -> MetricsReport:
    """Compute mse = mean((p-t)^2), mae = mean(|p-t|) and r2 = 1 - SSres/SStot.

    Inputs must be equal-length finite vectors with at least two entries.
    A constant y_true leaves r2 undefined; it is reported as None rather
    than silently 0 or 1, while mse/mae stay valid.
    """
    t = np.asarray(y_true, dtype=np.float64).reshape(-1)
    p = np.asarray(y_pred, dtype=np.float64).reshape(-1)
    if t.shape != p.shape:
        raise ValueError(f"length mismatch: {t.shape[0]} vs {p.shape[0]}")
    if t.shape[0] < 2:
        raise ValueError("need at least two samples")
    if not (np.isfinite(t).all() and np.isfinite(p).all()):
        raise ValueError("inputs must be finite")

    err = p - t
    mse = float(np.mean(err * err))
    mae = float(np.mean(np.abs(err)))
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if ss_tot == 0.0:
        r2 = None
    else:
        r2 = 1.0 - float(np.sum(err * err)) / ss_tot
    return MetricsReport(mse=mse, mae=mae, r2=r2, n=t.shape[0])
