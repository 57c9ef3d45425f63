"""Non-Bayesian comparison solvers: OMP, CoSaMP and ISTA for the lasso."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import solve_spd

__all__ = ["GreedyConfig", "IstaConfig", "omp", "cosamp", "ista", "soft_threshold", "lasso_objective"]


@dataclass(frozen=True)
class GreedyConfig:
    max_nonzeros: int
    residual_tol: float = 1e-10


@dataclass(frozen=True)
class IstaConfig:
    lam: float
    iterations: int = 500
    step_size: float | None = None  # defaults to 1 / ||A||_2^2

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be > 0")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be > 0")


def _lstsq(a_sub, y):
    """Least squares on selected columns; falls back to a jittered normal-equation solve."""
    sol, _, rank, _ = np.linalg.lstsq(a_sub, y, rcond=None)
    if rank < a_sub.shape[1]:
        g = a_sub.T @ a_sub
        g += 1e-10 * max(np.trace(g) / g.shape[0], 1.0) * np.eye(g.shape[0])
        sol = solve_spd(g, a_sub.T @ y)
    return sol


def omp(a, y, cfg: GreedyConfig) -> np.ndarray:
    """Orthogonal matching pursuit.

    Atoms are selected by normalised correlation with the residual; the
    coefficients on the selected set are refitted by least squares after every
    selection.  Stops after ``cfg.max_nonzeros`` atoms or when the residual norm
    drops below ``cfg.residual_tol``.
    """
    a = np.asarray(a, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    m, n = a.shape
    if cfg.max_nonzeros > m:
        raise ValueError("max_nonzeros must not exceed the number of rows")
    norms = np.linalg.norm(a, axis=0)
    if np.any(norms == 0):
        raise ValueError("measurement matrix has a zero column")
    x = np.zeros(n)
    support: list[int] = []
    r = y.copy()
    coef = np.zeros(0)
    while len(support) < cfg.max_nonzeros and np.linalg.norm(r) > cfg.residual_tol:
        corr = np.abs(a.T @ r) / norms
        corr[support] = -np.inf
        support.append(int(np.argmax(corr)))
        coef = _lstsq(a[:, support], y)
        r = y - a[:, support] @ coef
    x[support] = coef
    return x


def cosamp(a, y, k: int, iterations: int = 50, tol: float = 1e-10) -> np.ndarray:
    """Compressive sampling matching pursuit for a ``k``-sparse signal."""
    a = np.asarray(a, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = a.shape[1]
    x = np.zeros(n)
    if k <= 0:
        return x
    ynorm = np.linalg.norm(y)
    r = y.copy()
    for _ in range(iterations):
        if np.linalg.norm(r) <= tol * max(ynorm, 1.0):
            break
        proxy = np.abs(a.T @ r)
        omega = np.argsort(-proxy, kind="stable")[: 2 * k]
        merged = np.union1d(omega, np.flatnonzero(x))
        b = np.zeros(n)
        b[merged] = _lstsq(a[:, merged], y)
        keep = np.argsort(-np.abs(b), kind="stable")[:k]
        stalled = np.array_equal(np.sort(keep), np.flatnonzero(x))
        x = np.zeros(n)
        x[keep] = b[keep]
        r = y - a @ x
        if stalled:
            break
    return x


def soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def lasso_objective(a, y, x, lam):
    r = y - a @ x
    return 0.5 * float(np.sum(r**2)) + lam * float(np.sum(np.abs(x)))


def ista(a, y, cfg: IstaConfig, return_objective: bool = False):
    """Iterative shrinkage-thresholding for ``0.5||y - Ax||^2 + lam ||x||_1``.

    ``y`` may hold several columns, which are solved independently.  With
    ``return_objective`` the per-iteration objective values are returned as
    well (single-column input only).
    """
    a = np.asarray(a, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    vec = y.ndim == 1
    if vec:
        y = y[:, None]
    lip = np.linalg.norm(a, 2) ** 2
    step = 1.0 / lip if cfg.step_size is None else cfg.step_size
    if step * lip > 1.0 + 1e-12:
        raise ValueError("step_size must satisfy step * ||A||_2^2 <= 1")
    x = np.zeros((a.shape[1], y.shape[1]))
    aty = a.T @ y
    ata = a.T @ a
    history = []
    for _ in range(cfg.iterations):
        x = soft_threshold(x + step * (aty - ata @ x), step * cfg.lam)
        if return_objective:
            history.append(lasso_objective(a, y, x, cfg.lam))
    x = x[:, 0] if vec else x
    return (x, np.array(history)) if return_objective else x
