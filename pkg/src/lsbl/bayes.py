"""Gaussian MAP stage and the SBL / M-SBL / PC-SBL expectation-maximisation solvers.

Hyperparameters are carried as prior *variances* ``gamma`` (the reciprocal of
the precisions ``alpha``).  All routines broadcast over leading batch axes:
``a`` may be ``(M, N)`` or ``(B, M, N)``, ``y`` is ``(..., M, L)`` and
``gamma`` is ``(..., N)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PosteriorEstimate, apply_spd_inverse, spd_inverse_factor

__all__ = [
    "SblConfig",
    "PcSblConfig",
    "map_estimate",
    "sbl_update",
    "msbl_update",
    "pcsbl_update",
    "run_sbl",
    "run_msbl",
    "run_pcsbl",
]


@dataclass(frozen=True)
class SblConfig:
    iterations: int = 100
    gamma_floor: float = 1e-12
    prune_threshold: float = 0.0
    tol: float | None = None  # early stop on max |delta gamma|

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.gamma_floor > 0 or self.prune_threshold < 0:
            raise ValueError("gamma_floor must be > 0 and prune_threshold >= 0")


@dataclass(frozen=True)
class PcSblConfig:
    beta: float = 1.0
    a: float = 0.5
    b: float = 1e-4
    iterations: int = 100
    gamma_floor: float = 1e-12
    tol: float | None = None

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not (self.a > 0 and self.b > 0):
            raise ValueError("a and b must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


def _noise_diag(noise_var, m, batch_shape):
    nv = np.asarray(noise_var, dtype=np.float64)
    nv = np.broadcast_to(nv, batch_shape) if nv.ndim else np.full(batch_shape, float(nv))
    return nv[..., None, None] * np.eye(m)


def map_estimate(a, y, gamma, noise_var) -> PosteriorEstimate:
    """Posterior mean and covariance diagonal under the prior ``N(0, diag(gamma))``.

    ``xhat = R A^T (A R A^T + s I)^{-1} Y`` and
    ``phi = gamma - diag(R A^T (A R A^T + s I)^{-1} A R)`` with ``R = diag(gamma)``
    and ``s = noise_var``.  Negative round-off in ``phi`` is clipped to zero.
    """
    a = np.asarray(a, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    m, n = a.shape[-2:]
    if y.shape[-2] != m or gamma.shape[-1] != n:
        raise ValueError(f"shape mismatch a={a.shape} y={y.shape} gamma={gamma.shape}")
    ar = a * gamma[..., None, :]
    batch = np.broadcast_shapes(ar.shape[:-2], y.shape[:-2])
    s = ar @ np.swapaxes(a, -1, -2) + _noise_diag(noise_var, m, batch)
    rhs = np.concatenate([np.broadcast_to(y, batch + y.shape[-2:]),
                          np.broadcast_to(ar, batch + ar.shape[-2:])], axis=-1)
    z = apply_spd_inverse(spd_inverse_factor(s), rhs)
    nl = y.shape[-1]
    xhat = np.swapaxes(ar, -1, -2) @ z[..., :nl]
    phi = np.maximum(gamma - np.sum(ar * z[..., nl:], axis=-2), 0.0)
    return PosteriorEstimate(xhat, phi)


def sbl_update(prev: PosteriorEstimate, gamma_floor=1e-12) -> np.ndarray:
    """EM step of SBL: ``gamma_i = x_i^2 + phi_ii`` (single measurement vector)."""
    x = prev.xhat
    if x.shape[-1] != 1:
        raise ValueError("sbl_update expects a single measurement vector")
    return np.maximum(x[..., 0] ** 2 + prev.phi_diag, gamma_floor)


def msbl_update(prev: PosteriorEstimate, l: int | None = None, gamma_floor=1e-12) -> np.ndarray:
    """EM step of M-SBL: ``gamma_i = ||X_i.||^2 / L + phi_ii``."""
    x = prev.xhat
    l = x.shape[-1] if l is None else l
    return np.maximum(np.sum(x**2, axis=-1) / l + prev.phi_diag, gamma_floor)


def _neighbour_sum(v):
    """``v[i-1] + v[i+1]`` with zero padding at both ends."""
    out = np.zeros_like(v)
    out[..., 1:] += v[..., :-1]
    out[..., :-1] += v[..., 1:]
    return out


def pcsbl_update(prev: PosteriorEstimate, cfg: PcSblConfig = PcSblConfig()) -> np.ndarray:
    """Pattern-coupled update.

    ``omega_i = e_i + beta (e_{i-1} + e_{i+1})`` with ``e_i = x_i^2 + phi_ii``
    (row energy averaged over columns when several vectors are present),
    ``alpha_i = a / (omega_i / 2 + b)`` and the returned prior variance is
    ``1 / (alpha_i + beta (alpha_{i-1} + alpha_{i+1}))``; out-of-range
    neighbours count as zero.
    """
    e = np.mean(prev.xhat**2, axis=-1) + prev.phi_diag
    omega = e + cfg.beta * _neighbour_sum(e)
    alpha = cfg.a / (0.5 * omega + cfg.b)
    prec = alpha + cfg.beta * _neighbour_sum(alpha)
    return np.maximum(1.0 / prec, cfg.gamma_floor)


def _em(a, y, noise_var, update, iterations, tol, prune=0.0):
    a = np.asarray(a, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    batch = np.broadcast_shapes(a.shape[:-2], y.shape[:-2])
    gamma = np.ones(batch + (a.shape[-1],))
    est = None
    for _ in range(iterations):
        est = map_estimate(a, y, gamma, noise_var)
        new = update(est)
        if prune > 0:
            new = np.where(new < prune, 0.0, new)
        done = tol is not None and np.max(np.abs(new - gamma)) < tol
        gamma = new
        if done:
            break
    return est


def run_sbl(a, y, noise_var, cfg: SblConfig = SblConfig()) -> PosteriorEstimate:
    """SBL from ``gamma = 1``: ``cfg.iterations`` MAP evaluations interleaved with EM updates."""
    return _em(a, y, noise_var, lambda e: sbl_update(e, cfg.gamma_floor),
               cfg.iterations, cfg.tol, cfg.prune_threshold)


def run_msbl(a, y, noise_var, cfg: SblConfig = SblConfig()) -> PosteriorEstimate:
    """M-SBL: one variance profile shared by all columns of ``y``."""
    return _em(a, y, noise_var, lambda e: msbl_update(e, None, cfg.gamma_floor),
               cfg.iterations, cfg.tol, cfg.prune_threshold)


def run_pcsbl(a, y, noise_var, cfg: PcSblConfig = PcSblConfig()) -> PosteriorEstimate:
    """PC-SBL with the lower-end precision update."""
    return _em(a, y, noise_var, lambda e: pcsbl_update(e, cfg), cfg.iterations, cfg.tol)
