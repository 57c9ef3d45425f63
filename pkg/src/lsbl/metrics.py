"""Recovery metrics: relative MSE, support-recovery probability and failure rate.

Multi-column estimates are treated as one stacked signal: the relative error
uses Frobenius norms and the support is taken over all ``N x L`` entries.
Sums are correctly rounded (``math.fsum``) so the results do not depend on
summation order.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = ["EvalReport", "rmse", "support_prob", "failure_rate", "estimated_support"]


@dataclass(frozen=True)
class EvalReport:
    sweep: float
    solver: str
    rmse: float
    failure_rate: float
    p: int

    def __post_init__(self):
        if self.rmse < 0 or not 0 <= self.failure_rate <= 1:
            raise ValueError("invalid metric values")


def rmse(true_x, est_x) -> float:
    """Mean over samples of ``||x - xhat||^2 / ||x||^2``.

    Samples whose true signal is zero are skipped with a warning.
    """
    true_x = [np.asarray(t, dtype=np.float64).ravel() for t in true_x]
    est_x = [np.asarray(e, dtype=np.float64).ravel() for e in est_x]
    if len(true_x) != len(est_x):
        raise ValueError("true and estimated batches differ in length")
    ratios = []
    skipped = 0
    for t, e in zip(true_x, est_x):
        if t.shape != e.shape:
            raise ValueError(f"shape mismatch {t.shape} vs {e.shape}")
        den = math.fsum(t * t)
        if den == 0:
            skipped += 1
            continue
        d = t - e
        ratios.append(math.fsum(d * d) / den)
    if skipped:
        warnings.warn(f"rmse: skipped {skipped} zero-norm sample(s)", RuntimeWarning, stacklevel=2)
    if not ratios:
        raise ValueError("no sample with a nonzero true signal")
    return math.fsum(ratios) / len(ratios)


def estimated_support(est_x, k: int, mode: str = "topk", rel_threshold: float = 0.1) -> np.ndarray:
    """Indices of the recovered support.

    ``topk`` keeps the ``k`` largest magnitudes (ties broken by index);
    ``threshold`` keeps entries above ``rel_threshold * max|est_x|``.
    """
    mag = np.abs(np.asarray(est_x, dtype=np.float64).ravel())
    if mode == "topk":
        return np.argsort(-mag, kind="stable")[:k]
    if mode == "threshold":
        peak = mag.max(initial=0.0)
        return np.flatnonzero(mag > rel_threshold * peak) if peak > 0 else np.zeros(0, dtype=int)
    raise ValueError(f"unknown support mode {mode!r}")


def support_prob(true_x, est_x, mode: str = "topk") -> float:
    """Fraction of the true support found in the estimated support."""
    t = np.asarray(true_x, dtype=np.float64).ravel()
    true_support = np.flatnonzero(t)
    k = true_support.size
    if k == 0:
        raise ValueError("support probability undefined for an all-zero signal")
    found = np.intersect1d(estimated_support(est_x, k, mode), true_support).size
    return found / k


def failure_rate(probs) -> float:
    """Fraction of samples whose support was not recovered exactly."""
    probs = list(probs)
    if not probs:
        raise ValueError("failure_rate needs at least one sample")
    return sum(1 for p in probs if p != 1) / len(probs)
