"""Estimators and log-log exponent fits."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import NonPositiveData, TooFewPoints, TooFewSamples

Z99 = 2.576


@dataclass(frozen=True)
class Estimate:
    mean: float
    variance: float
    count: int
    stderr: float

    @property
    def ci99(self) -> float:
        return Z99 * self.stderr

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.mean - target) <= k * self.stderr


def estimate(samples: Iterable[float]) -> Estimate:
    """Sample mean, unbiased variance and standard error of the mean."""
    x = np.asarray(list(samples) if not isinstance(samples, np.ndarray) else samples, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise TooFewSamples("need at least 2 samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    mean = float(x.mean())
    var = float(x.var(ddof=1))
    return Estimate(mean, var, int(x.size), math.sqrt(var / x.size))


def variance_estimate(samples: np.ndarray) -> Estimate:
    """Estimate of E[x^2] for centered samples, with its standard error."""
    return estimate(np.asarray(samples, dtype=float) ** 2)


@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    stderr: float
    intercept: float
    points: int


def fit_power_law(points: Sequence[tuple[float, float]], s_min: float = 0.0) -> PowerLawFit:
    """Least-squares slope of log y on log s over points with s >= s_min."""
    pts = [(float(s), float(y)) for s, y in points if s >= s_min]
    if len(pts) < 4:
        raise TooFewPoints(f"need at least 4 points with s >= {s_min}, got {len(pts)}")
    s = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    if np.any(s <= 0) or np.any(y <= 0):
        raise NonPositiveData("power-law fit needs positive s and y")
    x, ly = np.log(s), np.log(y)
    X = np.stack([np.ones_like(x), x], axis=1)
    coef, _, _, _ = np.linalg.lstsq(X, ly, rcond=None)
    resid = ly - X @ coef
    dof = len(pts) - 2
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.inv(X.T @ X)
    return PowerLawFit(float(coef[1]), math.sqrt(max(cov[1, 1], 0.0)), float(coef[0]), len(pts))
