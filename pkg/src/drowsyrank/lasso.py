"""Cyclic coordinate descent for the Lasso.

Solves

    min_w  (1/2n) ||y - X w||^2 + alpha ||w||_1

with soft-thresholding coordinate updates.  The updates run on the Gram
matrix ``X^T X / n`` so each sweep costs O(p^2) regardless of n, which is what
the neighbourhood regressions in :mod:`drowsyrank.features` need (n is the
number of normal-driving samples, p is six).  No intercept is fitted: centre
``X`` and ``y`` beforehand.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from drowsyrank.errors import NotConverged


def soft_threshold(z, gamma):
    return np.sign(z) * np.maximum(np.abs(z) - gamma, 0.0)


@dataclass
class LassoProblem:
    X: np.ndarray
    y: np.ndarray
    alpha: float

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"design {self.X.shape} and response {self.y.shape} disagree")
        if self.X.shape[0] < 1:
            raise ValueError("need at least one observation")
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")


@dataclass
class LassoResult:
    weights: np.ndarray
    converged: bool
    sweeps: int
    kkt_residual: float
    objective_history: list[float] = field(default_factory=list)


def lasso_objective(X, y, w, alpha) -> float:
    r = y - X @ w
    return 0.5 * float(r @ r) / len(y) + alpha * float(np.abs(w).sum())


def kkt_residual(gram: np.ndarray, xty: np.ndarray, w: np.ndarray, alpha: float) -> float:
    """Largest violation of the Lasso optimality conditions.

    With ``g = gram @ w - xty`` (the gradient of the smooth part) the
    conditions are ``|g_j| <= alpha`` where ``w_j == 0`` and
    ``g_j + alpha * sign(w_j) == 0`` elsewhere.
    """
    g = gram @ w - xty
    active = w != 0
    viol = np.where(active, np.abs(g + alpha * np.sign(w)), np.maximum(np.abs(g) - alpha, 0.0))
    return float(viol.max()) if viol.size else 0.0


def lasso_fit(problem: LassoProblem, tol: float = 1e-10, max_sweeps: int = 10_000,
              warm_start: np.ndarray | None = None, track_objective: bool = False) -> LassoResult:
    """Cyclic coordinate descent.

    Stops once a full sweep moves no coordinate by more than ``tol``.  When
    ``max_sweeps`` runs out first a :class:`NotConverged` warning is issued
    and the last iterate is returned with ``converged=False``.
    """
    X, y, alpha = problem.X, problem.y, float(problem.alpha)
    n, p = X.shape
    gram = X.T @ X / n
    xty = X.T @ y / n
    yty = float(y @ y) / n
    diag = np.diag(gram).copy()
    w = np.zeros(p) if warm_start is None else np.array(warm_start, dtype=float)
    # gw tracks gram @ w so a coordinate update is O(p)
    gw = gram @ w

    def objective() -> float:
        return 0.5 * float(w @ gw) - float(xty @ w) + 0.5 * yty + alpha * float(np.abs(w).sum())

    history = [objective()] if track_objective else []
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        max_change = 0.0
        for j in range(p):
            if diag[j] <= 0.0:
                continue
            old = w[j]
            rho = xty[j] - gw[j] + diag[j] * old
            new = soft_threshold(rho, alpha) / diag[j]
            delta = new - old
            if delta != 0.0:
                w[j] = new
                gw += gram[:, j] * delta
                max_change = max(max_change, abs(delta))
        if track_objective:
            history.append(objective())
        if max_change < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"lasso_fit: no convergence after {max_sweeps} sweeps", NotConverged, stacklevel=2)
    return LassoResult(w, converged, sweeps, kkt_residual(gram, xty, w, alpha), history)
