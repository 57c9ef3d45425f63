"""Shared value types, seeded randomness and dense linear-algebra kernels.

Matrices are plain ``float64`` numpy arrays.  Most kernels accept a stack of
matrices (leading batch axes) so that a whole mini-batch or test set can be
processed with a handful of vectorised calls.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack

__all__ = [
    "FactorizationFailed",
    "ParseError",
    "Rng",
    "Sample",
    "Dataset",
    "PosteriorEstimate",
    "as_mat",
    "matmul",
    "cholesky",
    "spd_inverse_factor",
    "solve_spd",
    "gaussian",
]

JITTER_SCALE = 1e-10


class FactorizationFailed(np.linalg.LinAlgError):
    """Raised when a matrix is not numerically positive definite."""


class ParseError(ValueError):
    """Malformed binary file; ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def as_mat(a, name="matrix"):
    """Return ``a`` as a finite 2-D float64 array."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def matmul(a, b):
    """Checked dense product ``a @ b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
    return a @ b


# --------------------------------------------------------------------------
# Randomness
# --------------------------------------------------------------------------


def _key(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


@dataclass(frozen=True)
class Rng:
    """Splittable, counter-based random stream (Philox).

    A stream is identified by the root ``seed`` plus a key ``path``; children
    are derived with :meth:`child` so that independent consumers (data,
    training, evaluation, sample ``i``) never share state.  The same seed and
    path always produce the same draws, whatever the order of evaluation.
    """

    seed: int
    path: tuple = ()

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def child(self, *keys) -> "Rng":
        return Rng(self.seed, self.path + tuple(_key(k) for k in keys))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=self.path)
        return np.random.Generator(np.random.Philox(ss))


def gaussian(rng: Rng, rows: int, cols: int) -> np.ndarray:
    """``rows x cols`` matrix of i.i.d. standard normal draws."""
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    return rng.generator().standard_normal((rows, cols))


# --------------------------------------------------------------------------
# Domain containers
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Sample:
    """One problem instance ``y = a @ x + noise``.

    ``x`` is ``(N, L)`` and ``y`` is ``(M, L)``; ``noise_var`` is the variance
    of the additive noise that was actually used to synthesise ``y``.
    """

    a: np.ndarray
    x: np.ndarray
    y: np.ndarray
    noise_var: float = 0.0

    def __post_init__(self):
        m, n = self.a.shape
        if self.x.shape[0] != n or self.y.shape[0] != m or self.x.shape[1] != self.y.shape[1]:
            raise ValueError(
                f"inconsistent sample shapes a={self.a.shape} x={self.x.shape} y={self.y.shape}"
            )
        if self.noise_var < 0:
            raise ValueError("noise_var must be >= 0")


@dataclass
class Dataset:
    """Stacked samples sharing ``(M, N, L)``.

    ``a`` is ``(M, N)`` when every sample uses the same matrix and
    ``(count, M, N)`` otherwise; ``x`` is ``(count, N, L)``, ``y`` is
    ``(count, M, L)`` and ``noise_var`` is ``(count,)``.
    """

    a: np.ndarray
    x: np.ndarray
    y: np.ndarray
    noise_var: np.ndarray = field(default=None)

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        count = self.x.shape[0]
        if count == 0:
            raise ValueError("dataset must be non-empty")
        if self.noise_var is None:
            self.noise_var = np.zeros(count)
        self.noise_var = np.broadcast_to(np.asarray(self.noise_var, dtype=np.float64), (count,)).copy()
        if self.a.ndim not in (2, 3) or (self.a.ndim == 3 and self.a.shape[0] != count):
            raise ValueError(f"bad matrix stack shape {self.a.shape}")
        m, n = self.a.shape[-2:]
        if self.x.shape[1] != n or self.y.shape[:2] != (count, m) or self.y.shape[2] != self.x.shape[2]:
            raise ValueError("inconsistent dataset shapes")

    @property
    def shared_matrix(self) -> bool:
        return self.a.ndim == 2

    @property
    def count(self) -> int:
        return self.x.shape[0]

    @property
    def dims(self) -> tuple:
        m, n = self.a.shape[-2:]
        return m, n, self.x.shape[2]

    def __len__(self):
        return self.count

    def __getitem__(self, i) -> Sample:
        a = self.a if self.shared_matrix else self.a[i]
        return Sample(a, self.x[i], self.y[i], float(self.noise_var[i]))

    def batch(self, idx):
        """Return ``(a, x, y, noise_var)`` arrays for the given indices."""
        idx = np.asarray(idx)
        a = self.a if self.shared_matrix else self.a[idx]
        return a, self.x[idx], self.y[idx], self.noise_var[idx]

    @classmethod
    def from_samples(cls, samples) -> "Dataset":
        samples = list(samples)
        if not samples:
            raise ValueError("dataset must be non-empty")
        first = samples[0].a
        shared = all(s.a is first or np.array_equal(s.a, first) for s in samples)
        a = first if shared else np.stack([s.a for s in samples])
        return cls(
            a,
            np.stack([s.x for s in samples]),
            np.stack([s.y for s in samples]),
            np.array([s.noise_var for s in samples]),
        )


@dataclass(frozen=True)
class PosteriorEstimate:
    """Posterior mean and the diagonal of the posterior covariance."""

    xhat: np.ndarray
    phi_diag: np.ndarray


# --------------------------------------------------------------------------
# SPD kernels
# --------------------------------------------------------------------------


def _cholesky_one(s):
    try:
        return np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_SCALE * np.trace(s) / s.shape[-1]
    try:
        if not jitter > 0:
            raise np.linalg.LinAlgError
        return np.linalg.cholesky(s + jitter * np.eye(s.shape[-1]))
    except np.linalg.LinAlgError:
        raise FactorizationFailed("matrix is not positive definite even after jitter") from None


def cholesky(s):
    """Lower Cholesky factor of one SPD matrix or a stack of them.

    A matrix whose factorization breaks down is retried once with
    ``1e-10 * trace/dim`` added to its diagonal; only the failing members of a
    stack are perturbed.
    """
    s = np.asarray(s, dtype=np.float64)
    try:
        return np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        if s.ndim == 2:
            return _cholesky_one(s)
    flat = s.reshape((-1,) + s.shape[-2:])
    out = np.empty_like(flat)
    for i, si in enumerate(flat):
        out[i] = _cholesky_one(si)
    return out.reshape(s.shape)


def spd_inverse_factor(s):
    """Return ``Linv`` with ``s^{-1} = Linv.T @ Linv`` (``L`` the Cholesky factor)."""
    chol = cholesky(s)
    flat = chol.reshape((-1,) + chol.shape[-2:])
    out = np.empty_like(flat)
    for i, li in enumerate(flat):
        inv, info = lapack.dtrtri(li, lower=1)
        if info != 0:
            raise FactorizationFailed(f"triangular inverse failed (info={info})")
        out[i] = inv
    return out.reshape(chol.shape)


def apply_spd_inverse(linv, b):
    """``s^{-1} @ b`` given the inverse factor from :func:`spd_inverse_factor`."""
    return np.swapaxes(linv, -1, -2) @ (linv @ b)


def solve_spd(s, b):
    """Solve ``s @ z = b`` for symmetric positive definite ``s``.

    Works on single matrices and on stacks (broadcasting over leading axes).
    Raises :class:`FactorizationFailed` if ``s`` is not positive definite after
    one jittered retry.
    """
    s = np.asarray(s, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if s.shape[-1] != s.shape[-2] or s.shape[-1] != b.shape[-2]:
        raise ValueError(f"dimension mismatch: {s.shape} vs {b.shape}")
    return apply_spd_inverse(spd_inverse_factor(s), b)
