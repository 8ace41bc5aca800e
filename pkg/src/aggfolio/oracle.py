"""Brute-force comparators for regret checks.

The oracle is the best fixed convex combination of experts in hindsight.
It is found by exhaustive search over a regular grid on the simplex, which
is exact up to the grid resolution and only practical for a handful of
experts.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, ParameterError, ShapeError
from .loss import LossKind

MAX_GRID_POINTS = 10**7
_CHUNK = 4096


@dataclass(frozen=True)
class OracleResult:
    weights: np.ndarray
    average_loss: float
    step: float
    best_expert: int
    best_expert_loss: float


def grid_size(n_experts: int, step: float) -> int:
    n = _divisions(step)
    return math.comb(n + n_experts - 1, n_experts - 1)


def _divisions(step: float) -> int:
    if not 0 < step <= 1:
        raise ParameterError(f"grid step must lie in (0, 1], got {step!r}")
    n = round(1.0 / step)
    if abs(n * step - 1.0) > 1e-12:
        raise ParameterError(f"grid step {step!r} does not divide 1")
    return n


def default_step(n_experts: int) -> float:
    if n_experts <= 4:
        return 0.01
    if n_experts <= 7:
        return 0.1
    raise CapacityError(
        f"{n_experts} experts is too many for the grid oracle; use at most 7 or pass a coarser step"
    )


def simplex_grid(n_experts: int, step: float) -> np.ndarray:
    """All simplex points whose coordinates are multiples of ``step``.

    Rows are in ascending lexicographic order.
    """
    if n_experts < 1:
        raise ParameterError("expert set is empty")
    n = _divisions(step)
    count = grid_size(n_experts, step)
    if count > MAX_GRID_POINTS:
        raise CapacityError(
            f"grid of {count} points exceeds the {MAX_GRID_POINTS} limit; "
            "use fewer experts or a coarser step"
        )
    # Stars and bars: each choice of K-1 bar positions among n+K-1 slots is
    # one composition of n into K parts.
    rows = []
    for bars in itertools.combinations(range(n + n_experts - 1), n_experts - 1):
        parts = []
        prev = -1
        for b in bars:
            parts.append(b - prev - 1)
            prev = b
        parts.append(n + n_experts - 2 - prev)
        rows.append(parts)
    rows.sort()
    return np.asarray(rows, dtype=float).reshape(count, n_experts) / n


def _average_losses(grid, streams, target, loss):
    avg = np.empty(grid.shape[0])
    for start in range(0, grid.shape[0], _CHUNK):
        preds = grid[start : start + _CHUNK] @ streams
        avg[start : start + _CHUNK] = np.mean(loss(target[None, :], preds), axis=1)
    return avg


def best_fixed_expert(loss_matrix) -> tuple[int, float]:
    """Index and average loss of the best single expert.

    ``loss_matrix`` has shape (K, T). Ties go to the lowest index.
    """
    losses = np.asarray(loss_matrix, dtype=float)
    if losses.ndim != 2 or losses.shape[1] == 0:
        raise ShapeError("loss matrix must have shape (K, T) with T >= 1")
    avg = losses.mean(axis=1)
    k = int(np.argmin(avg))
    return k, float(avg[k])


def best_fixed_mixture(expert_streams, target_stream, loss: LossKind | None = None, step=None):
    """Grid-search the best constant weight vector for predicting the target.

    Ties are resolved towards the lexicographically smallest weight vector.
    """
    loss = loss or LossKind.squared()
    streams = np.asarray(expert_streams, dtype=float)
    target = np.asarray(target_stream, dtype=float)
    if streams.ndim != 2 or target.ndim != 1 or streams.shape[1] != target.shape[0]:
        raise ShapeError(f"expert streams {streams.shape} do not match target {target.shape}")
    if target.shape[0] == 0:
        raise ShapeError("streams are empty")
    k = streams.shape[0]
    step = default_step(k) if step is None else step
    grid = simplex_grid(k, step)
    avg = _average_losses(grid, streams, target, loss)
    i = int(np.argmin(avg))
    expert, expert_loss = best_fixed_expert(loss(target[None, :], streams))
    return OracleResult(
        weights=grid[i],
        average_loss=float(avg[i]),
        step=step,
        best_expert=expert,
        best_expert_loss=expert_loss,
    )


def regret(mixture_average_loss: float, oracle_average_loss: float) -> float:
    """Average mixture loss minus the oracle's.

    Slightly negative values only arise from grid discretisation; see
    :func:`regret_is_discretisation_artifact`.
    """
    return float(mixture_average_loss) - float(oracle_average_loss)


def regret_is_discretisation_artifact(value: float) -> bool:
    return value < 0
