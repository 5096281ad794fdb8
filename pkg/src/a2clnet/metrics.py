"""Regression metrics, all evaluated on denormalized (kW·h) values."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, ShapeError


def _pair(y, yhat):
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    yhat = np.asarray(yhat, dtype=np.float64).reshape(-1)
    if y.shape != yhat.shape:
        raise ShapeError(f"length mismatch: {y.size} targets vs {yhat.size} predictions")
    if y.size == 0:
        raise DomainError("metrics need at least one point")
    return y, yhat


def r_squared(y, yhat) -> float:
    """Coefficient of determination 1 - SS_res / SS_tot."""
    y, yhat = _pair(y, yhat)
    if y.size < 2:
        raise DomainError("R² needs at least two points")
    ss_tot = np.sum((y - y.mean()) ** 2)
    if ss_tot == 0:
        raise DomainError("R² is undefined for a constant target")
    return float(1.0 - np.sum((y - yhat) ** 2) / ss_tot)


def mape_fraction(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    zero = np.flatnonzero(y == 0)
    if zero.size:
        raise DomainError(f"MAPE undefined for zero targets at indices {zero[:10].tolist()}")
    return float(np.mean(np.abs(y - yhat) / np.abs(y)))


def mape(y, yhat) -> float:
    """Mean absolute percentage error in percent."""
    return 100.0 * mape_fraction(y, yhat)


def mae(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.mean(np.abs(y - yhat)))


@dataclass
class EvalReport:
    r2: float
    mape_percent: float
    mae: float
    n: int
    residuals: Optional[np.ndarray] = None

    @classmethod
    def compute(cls, y, yhat, keep_residuals: bool = False) -> "EvalReport":
        y, yhat = _pair(y, yhat)
        return cls(r_squared(y, yhat), mape(y, yhat), mae(y, yhat), int(y.size),
                   (yhat - y) if keep_residuals else None)

    def to_dict(self) -> dict:
        return {"r2": self.r2, "mape_percent": self.mape_percent, "mae": self.mae, "n": self.n}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def to_csv(self, label: Optional[str] = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = ["R2", "MAPE", "MAE"]
        row = [repr(self.r2), repr(self.mape_percent), repr(self.mae)]
        if label is not None:
            head, row = ["model", *head], [label, *row]
        w.writerow(head)
        w.writerow(row)
        return buf.getvalue()
