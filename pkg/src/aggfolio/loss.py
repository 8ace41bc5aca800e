"""Per-observation loss kernels and forecast-accuracy scores.

All functions work on scalars or numpy arrays elementwise. Averaging over
time or over assets is left to callers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DomainError, ParameterError

DEFAULT_HUBER_THRESHOLD = 0.999


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DomainError("loss inputs must be finite")


def _check_threshold(xi):
    if not xi > 0:
        raise ParameterError(f"Huber threshold must be positive, got {xi!r}")


def squared_loss(y, yhat):
    """(y - yhat)**2, elementwise."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    _check_finite(y, yhat)
    out = (y - yhat) ** 2
    return float(out) if out.ndim == 0 else out


def huber_loss(y, yhat, xi=DEFAULT_HUBER_THRESHOLD):
    """Huber loss of the residual ``y - yhat``.

    Quadratic inside ``[-xi, xi]`` and linear with slope ``2 * xi`` outside,
    so the two branches meet at ``|x| = xi``.
    """
    _check_threshold(xi)
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    _check_finite(y, yhat)
    x = y - yhat
    ax = np.abs(x)
    out = np.where(ax <= xi, x * x, 2.0 * xi * ax - xi * xi)
    return float(out) if out.ndim == 0 else out


def huber_gradient(residual, xi=DEFAULT_HUBER_THRESHOLD):
    """Derivative of :func:`huber_loss` with respect to the residual."""
    _check_threshold(xi)
    r = np.asarray(residual, dtype=float)
    _check_finite(r)
    out = np.where(np.abs(r) <= xi, 2.0 * r, 2.0 * xi * np.sign(r))
    return float(out) if out.ndim == 0 else out


def predictive_r2(y, yhat):
    """Out-of-sample R2 against a zero forecast: ``1 - SSE / sum(y**2)``."""
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    if y.shape != yhat.shape or y.size == 0:
        raise DataError("y and yhat must be non-empty and of equal length")
    _check_finite(y, yhat)
    denom = float(np.sum(y * y))
    if denom == 0.0:
        raise DataError("sum of squared targets is zero; R2 undefined")
    return 1.0 - float(np.sum((y - yhat) ** 2)) / denom


@dataclass(frozen=True)
class LossKind:
    """Which per-observation loss to use: ``squared`` or ``huber``."""

    kind: str = "squared"
    threshold: float = DEFAULT_HUBER_THRESHOLD

    def __post_init__(self):
        if self.kind not in ("squared", "huber"):
            raise ParameterError(f"unknown loss kind {self.kind!r}")
        if self.kind == "huber":
            _check_threshold(self.threshold)

    @classmethod
    def squared(cls) -> "LossKind":
        return cls("squared")

    @classmethod
    def huber(cls, threshold: float = DEFAULT_HUBER_THRESHOLD) -> "LossKind":
        return cls("huber", threshold)

    def __call__(self, y, yhat):
        if self.kind == "squared":
            return squared_loss(y, yhat)
        return huber_loss(y, yhat, self.threshold)

    def prediction_gradient(self, y, yhat):
        """d loss / d yhat."""
        residual = np.asarray(y, dtype=float) - np.asarray(yhat, dtype=float)
        if self.kind == "squared":
            out = -2.0 * residual
        else:
            out = -np.asarray(huber_gradient(residual, self.threshold))
        return float(out) if np.ndim(out) == 0 else out
