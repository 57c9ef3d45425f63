"""Synthetic sparse-recovery data: supports, amplitudes and whole datasets.

Every sample ``i`` is drawn from its own random stream ``rng.child("sample", i)``
so a dataset can be materialised in full, or lazily one mini-batch at a time,
and both routes produce identical numbers.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .core import Dataset, ParseError, Rng, gaussian

__all__ = [
    "AmplitudeSpec",
    "StructureSpec",
    "GenConfig",
    "SupportError",
    "draw_support_unstructured",
    "draw_support_block",
    "block_sizes",
    "fill_amplitudes",
    "draw_sample",
    "generate",
    "LazyDataset",
    "shared_matrix",
    "save_dataset",
    "load_dataset",
    "DATASET_MAGIC",
]

UNSTRUCTURED = "unstructured"
BLOCK = "block_sparse"
JOINT = "joint_sparse"
PATTERN = "arbitrary_pattern"
KINDS = (UNSTRUCTURED, BLOCK, JOINT, PATTERN)

MAX_BLOCK_RETRIES = 1000


class SupportError(ValueError):
    """A support cannot be drawn with the requested geometry."""


@dataclass(frozen=True)
class AmplitudeSpec:
    """Distribution of the nonzero entries.

    ``uniform_shell`` draws a magnitude from ``U[lo, hi]`` and a random sign;
    ``unit_gaussian`` draws a standard normal.
    """

    mode: str = "uniform_shell"
    lo: float = 0.75
    hi: float = 1.0

    def __post_init__(self):
        if self.mode not in ("uniform_shell", "unit_gaussian"):
            raise ValueError(f"unknown amplitude mode {self.mode!r}")
        if not 0 < self.lo <= self.hi:
            raise ValueError("need 0 < lo <= hi")


@dataclass(frozen=True)
class StructureSpec:
    kind: str = UNSTRUCTURED
    k_min: int = 0
    k_max: int = 15
    blocks: int = 3
    moves: int = 1  # arbitrary_pattern: support indices resampled per extra column

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown structure kind {self.kind!r}")
        if not 0 <= self.k_min <= self.k_max:
            raise ValueError("need 0 <= k_min <= k_max")
        if self.blocks < 1 or self.moves < 0:
            raise ValueError("blocks must be >= 1 and moves >= 0")
        if self.kind == BLOCK and self.k_min < self.blocks and self.k_max > 0:
            raise ValueError("block_sparse needs k_min >= blocks")


@dataclass(frozen=True)
class GenConfig:
    m: int
    n: int
    l: int = 1
    structure: StructureSpec = field(default_factory=StructureSpec)
    amplitude: AmplitudeSpec = field(default_factory=AmplitudeSpec)
    noise_var: float = 0.0
    per_sample_matrix: bool = False
    count: int = 1
    matrix: str = "gaussian"  # or "identity" (square problems only)

    def __post_init__(self):
        if self.m < 1 or self.n < 1 or self.l < 1:
            raise ValueError("dimensions must be >= 1")
        if self.m > self.n:
            raise ValueError("expected an under-determined problem (m <= n)")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.structure.k_max > self.n:
            raise ValueError("k_max exceeds n")
        if self.noise_var < 0:
            raise ValueError("noise_var must be >= 0")
        if self.matrix not in ("gaussian", "identity"):
            raise ValueError(f"unknown matrix kind {self.matrix!r}")
        if self.matrix == "identity" and self.m != self.n:
            raise ValueError("identity matrix requires m == n")

    def with_sparsity(self, k: int, count: int | None = None) -> "GenConfig":
        """Copy with a fixed sparsity level (and optionally a new count)."""
        s = replace(self.structure, k_min=k, k_max=k)
        return replace(self, structure=s, count=self.count if count is None else count)


# --------------------------------------------------------------------------
# Supports
# --------------------------------------------------------------------------


def draw_support_unstructured(gen: np.random.Generator, n: int, k: int) -> np.ndarray:
    """Uniformly random ``k``-subset of ``range(n)`` (sorted)."""
    if not 0 <= k <= n:
        raise SupportError(f"cannot draw {k} indices out of {n}")
    return np.sort(gen.choice(n, size=k, replace=False))


def block_sizes(k: int, r: np.ndarray) -> np.ndarray:
    """Block lengths ``ceil(k r_j)`` for all but the last block, which takes the rest."""
    sizes = np.ceil(k * r[:-1]).astype(int)
    return np.append(sizes, k - sizes.sum())


def _partition_sizes(n: int, r: np.ndarray) -> np.ndarray:
    sizes = np.ceil(n * r[:-1]).astype(int)
    return np.append(sizes, n - sizes.sum())


def draw_support_block(gen: np.random.Generator, n: int, k: int, j: int) -> np.ndarray:
    """Support made of ``j`` contiguous runs with total length ``k``.

    Random proportions ``r`` (i.i.d. uniform, normalised) set both the block
    lengths and the sizes of ``j`` consecutive partitions of ``range(n)``;
    block ``j`` starts at a uniformly random offset inside partition ``j``.
    Proportions that do not fit are redrawn.
    """
    if k > n:
        raise SupportError(f"cannot place {k} nonzeros in {n} entries")
    if k == 0:
        return np.zeros(0, dtype=int)
    if j < 1 or j > k:
        raise SupportError(f"need 1 <= blocks <= k, got blocks={j}, k={k}")
    for _ in range(MAX_BLOCK_RETRIES):
        r = gen.uniform(size=j)
        if r.sum() <= 0:
            continue
        r = r / r.sum()
        sizes = block_sizes(k, r)
        parts = _partition_sizes(n, r)
        if np.any(sizes < 1) or np.any(parts < sizes):
            continue
        offsets = np.concatenate([[0], np.cumsum(parts)[:-1]])
        runs = []
        for off, part, size in zip(offsets, parts, sizes):
            start = off + gen.integers(0, part - size + 1)
            runs.append(np.arange(start, start + size))
        return np.concatenate(runs)
    raise SupportError(f"no feasible block layout for n={n}, k={k}, blocks={j}")


def fill_amplitudes(gen: np.random.Generator, n: int, support, spec: AmplitudeSpec) -> np.ndarray:
    """Length-``n`` vector, zero off ``support``."""
    support = np.asarray(support, dtype=int)
    x = np.zeros(n)
    k = support.size
    if k == 0:
        return x
    if spec.mode == "uniform_shell":
        mag = gen.uniform(spec.lo, spec.hi, size=k)
        sign = np.where(gen.uniform(size=k) < 0.5, -1.0, 1.0)
        x[support] = sign * mag
    else:
        x[support] = gen.standard_normal(k)
    return x


def _column_supports(gen, cfg: GenConfig, k: int):
    s = cfg.structure
    n, l = cfg.n, cfg.l
    if s.kind == UNSTRUCTURED:
        return [draw_support_unstructured(gen, n, k) for _ in range(l)]
    if s.kind == BLOCK:
        base = draw_support_block(gen, n, k, min(s.blocks, k) if k else 1)
        return [base] * l
    base = draw_support_unstructured(gen, n, k)
    if s.kind == JOINT:
        return [base] * l
    # arbitrary pattern: a persistent part plus a few indices that move per column
    cols = [base]
    moves = min(s.moves, k, n - k)
    for _ in range(1, l):
        if moves == 0:
            cols.append(base)
            continue
        keep = gen.choice(k, size=k - moves, replace=False)
        outside = np.setdiff1d(np.arange(n), base)
        fresh = gen.choice(outside, size=moves, replace=False)
        cols.append(np.sort(np.concatenate([base[keep], fresh])))
    return cols


def shared_matrix(cfg: GenConfig, rng: Rng) -> np.ndarray:
    """The measurement matrix shared by every sample of ``cfg``."""
    if cfg.matrix == "identity":
        return np.eye(cfg.n)
    return gaussian(rng.child("matrix"), cfg.m, cfg.n)


def draw_sample(cfg: GenConfig, rng: Rng, index: int, a=None):
    """Draw sample ``index``; returns ``(a, x, y)``.

    ``a`` must be supplied for shared-matrix configurations and is drawn
    from the sample stream otherwise.
    """
    gen = rng.child("sample", index).generator()
    if cfg.per_sample_matrix:
        a = np.eye(cfg.n) if cfg.matrix == "identity" else gen.standard_normal((cfg.m, cfg.n))
    s = cfg.structure
    k = int(gen.integers(s.k_min, s.k_max + 1))
    supports = _column_supports(gen, cfg, k)
    x = np.stack([fill_amplitudes(gen, cfg.n, sup, cfg.amplitude) for sup in supports], axis=1)
    y = a @ x
    if cfg.noise_var > 0:
        y = y + math.sqrt(cfg.noise_var) * gen.standard_normal(y.shape)
    return a, x, y


def generate(cfg: GenConfig, rng: Rng, a=None) -> Dataset:
    """Materialise ``cfg.count`` samples.

    For shared-matrix configurations ``a`` defaults to :func:`shared_matrix`;
    pass it explicitly to draw fresh test data for a matrix used in training.
    """
    return LazyDataset(cfg, rng, a).materialize()


class LazyDataset:
    """Dataset view that synthesises samples on demand.

    Exposes the same ``count``/``dims``/``batch`` surface as
    :class:`~lsbl.core.Dataset`; useful when per-sample matrices would not fit
    in memory.
    """

    def __init__(self, cfg: GenConfig, rng: Rng, a=None):
        self.cfg = cfg
        self.rng = rng
        if cfg.per_sample_matrix:
            self.a = None
        else:
            self.a = shared_matrix(cfg, rng) if a is None else np.asarray(a, dtype=np.float64)
            if self.a.shape != (cfg.m, cfg.n):
                raise ValueError("shared matrix has the wrong shape")

    @property
    def count(self):
        return self.cfg.count

    @property
    def dims(self):
        return self.cfg.m, self.cfg.n, self.cfg.l

    @property
    def shared_matrix(self):
        return self.a is not None

    def __len__(self):
        return self.count

    def batch(self, idx):
        idx = np.asarray(idx, dtype=int)
        parts = [draw_sample(self.cfg, self.rng, int(i), self.a) for i in idx]
        x = np.stack([p[1] for p in parts])
        y = np.stack([p[2] for p in parts])
        a = self.a if self.shared_matrix else np.stack([p[0] for p in parts])
        return a, x, y, np.full(len(idx), float(self.cfg.noise_var))

    def materialize(self) -> Dataset:
        a, x, y, nv = self.batch(np.arange(self.count))
        return Dataset(a, x, y, nv)


# --------------------------------------------------------------------------
# Binary container
# --------------------------------------------------------------------------

DATASET_MAGIC = b"LSBLDS1\x00"
_HEADER = struct.Struct("<8sIIIQBd")


def save_dataset(ds: Dataset, path) -> None:
    """Write ``ds`` in the little-endian ``LSBLDS1`` layout (see docs/formats.md)."""
    m, n, l = ds.dims
    nv = ds.noise_var
    uniform = bool(np.all(nv == nv[0]))
    header = _HEADER.pack(DATASET_MAGIC, m, n, l, ds.count, int(ds.shared_matrix),
                          float(nv[0]) if uniform else -1.0)
    with open(path, "wb") as fh:
        fh.write(header)
        if not uniform:
            fh.write(nv.astype("<f8").tobytes())
        fh.write(np.ascontiguousarray(ds.a, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ds.x, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ds.y, dtype="<f8").tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ParseError("truncated header", len(raw))
    magic, m, n, l, count, shared, noise = _HEADER.unpack_from(raw, 0)
    if magic != DATASET_MAGIC:
        raise ParseError(f"bad magic {magic!r}, expected {DATASET_MAGIC!r}", 0)
    off = _HEADER.size

    def take(shape):
        nonlocal off
        size = int(np.prod(shape)) * 8
        if off + size > len(raw):
            raise ParseError(f"truncated data block of shape {shape}", off)
        arr = np.frombuffer(raw, dtype="<f8", count=size // 8, offset=off).reshape(shape)
        off += size
        return arr.astype(np.float64)

    nv = take((count,)) if noise < 0 else np.full(count, noise)
    a = take((m, n)) if shared else take((count, m, n))
    x = take((count, n, l))
    y = take((count, m, l))
    if off != len(raw):
        raise ParseError("trailing bytes after dataset", off)
    return Dataset(a, x, y, nv)
