"""Coordinate-descent LASSO along a decreasing regularization path.

Solves min_w (1/2n) ||y - Xw||^2 + lam * ||w||_1 on a geometric grid from
lam_max (the all-zero solution) downward, recording when each feature
first becomes active.  Selection returns the first k features in path
entry order; lam_max = max_j |x_j' y| / n, the smallest lam at which the
zero vector is optimal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

LAMBDA_MIN_RATIO = 1e-4

# below this magnitude a coefficient is float noise (e.g. an exact duplicate
# column sitting exactly on the soft-threshold boundary), not a path entry
ACTIVATION_TOL = 1e-10


@dataclass
class LassoPathReport:
    """Diagnostics from a path-based selection run."""

    lam: float
    lam_max: float
    n_active: int
    kkt_residual: float
    incomplete: bool
    entry_order: list[int]


def lambda_max(x: np.ndarray, y: np.ndarray) -> float:
    """Smallest penalty at which the all-zero solution is optimal."""
    n = x.shape[0]
    return float(np.abs(x.T @ y).max() / n)


def coordinate_descent(
    x: np.ndarray,
    y: np.ndarray,
    lam: float,
    w: np.ndarray,
    max_sweeps: int = 20000,
    tol: float = 1e-12,
) -> np.ndarray:
    """Cyclic coordinate descent to convergence at a single penalty.

    Convergence is declared when no coordinate moves more than ``tol``
    during a sweep, which puts the KKT residual at numerical noise level.
    """
    n = x.shape[0]
    col_scale = (x * x).sum(axis=0) / n
    residual = y - x @ w
    for _ in range(max_sweeps):
        max_delta = 0.0
        for j in range(x.shape[1]):
            if col_scale[j] == 0.0:
                continue
            w_old = w[j]
            rho = x[:, j] @ residual / n + col_scale[j] * w_old
            w_new = np.sign(rho) * max(abs(rho) - lam, 0.0) / col_scale[j]
            if w_new != w_old:
                residual += x[:, j] * (w_old - w_new)
                w[j] = w_new
                max_delta = max(max_delta, abs(w_new - w_old))
        if max_delta <= tol:
            break
    return w


def kkt_residual(x: np.ndarray, y: np.ndarray, w: np.ndarray, lam: float) -> float:
    """Largest violation of the LASSO stationarity conditions.

    For inactive coordinates the gradient magnitude must not exceed lam;
    for active ones it must equal lam with the sign of the coefficient.
    """
    n = x.shape[0]
    grad = x.T @ (y - x @ w) / n
    active = w != 0.0
    violation = 0.0
    if (~active).any():
        violation = max(violation, float((np.abs(grad[~active]) - lam).max()))
    if active.any():
        violation = max(
            violation, float(np.abs(grad[active] - lam * np.sign(w[active])).max())
        )
    return max(violation, 0.0)


def lasso_select(
    x: np.ndarray,
    y: np.ndarray,
    k: int,
    n_grid: int = 100,
    lambda_min_ratio: float = LAMBDA_MIN_RATIO,
) -> tuple[list[int], LassoPathReport]:
    """Select k features by order of entry along the LASSO path.

    ``x`` must hold standardized columns (zero mean, unit variance;
    all-zero columns are tolerated and can never activate).  Features
    entering at the same grid point are ordered by |coefficient| at that
    penalty, then column index.  If fewer than k features ever activate
    before lam_min = lambda_min_ratio * lam_max, the active set is
    returned with the report flagged incomplete.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = x.shape
    if y.shape != (n,):
        raise ValidationError("y must be one label per row of x")
    if k < 1:
        raise ValidationError("k must be positive")
    _check_standardized(x)

    lam_hi = lambda_max(x, y)
    if lam_hi == 0.0:
        raise ValidationError("all features are orthogonal to the response")
    grid = lam_hi * (lambda_min_ratio ** (np.arange(n_grid) / (n_grid - 1)))
    w = np.zeros(p)
    entry_order: list[int] = []
    seen = set()
    lam_stop = grid[-1]
    for lam in grid:
        w = coordinate_descent(x, y, lam, w)
        newly = [j for j in range(p) if abs(w[j]) > ACTIVATION_TOL and j not in seen]
        newly.sort(key=lambda j: (-abs(w[j]), j))
        for j in newly:
            seen.add(j)
            entry_order.append(j)
        if len(entry_order) >= k:
            lam_stop = lam
            break
    incomplete = len(entry_order) < k
    selected = entry_order[:k]
    report = LassoPathReport(
        lam=float(lam_stop),
        lam_max=float(lam_hi),
        n_active=int((np.abs(w) > ACTIVATION_TOL).sum()),
        kkt_residual=kkt_residual(x, y, w, float(lam_stop)),
        incomplete=incomplete,
        entry_order=entry_order,
    )
    return selected, report


def _check_standardized(x: np.ndarray, atol: float = 1e-6) -> None:
    if x.size == 0:
        return
    means = x.mean(axis=0)
    if np.abs(means).max() > atol:
        raise ValidationError("design columns must be centered to zero mean")
    sd = x.std(axis=0)
    nonzero = sd > 0
    if nonzero.any() and np.abs(sd[nonzero] - 1.0).max() > 1e-4:
        raise ValidationError("design columns must have unit variance")
