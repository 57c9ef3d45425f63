"""Extended-target MIMO radar: dictionary, real-valued lifting and sweep synthesis.

A target occupies a contiguous run of (doppler, range, angle) bins.  Each bin
contributes the rank-one return ``b(theta) a(theta)^T S_d J_r`` where ``S_d``
is the doppler-shifted transmit code padded with ``N_r - 1`` zero samples and
``J_r`` delays it by ``r - 1`` samples.  Vectorising these returns gives the
complex dictionary; stacking real and imaginary parts gives an equivalent real
model that every solver in the package can consume.

Complex matrices are numpy ``complex128`` arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import hadamard

from .core import Dataset, Rng, Sample, solve_spd

__all__ = [
    "RadarConfig",
    "RadarScene",
    "TargetSpec",
    "doppler_vector",
    "steering_vector",
    "shift_matrix",
    "doppler_grid",
    "transmit_code",
    "build_dictionary",
    "real_lift_matrix",
    "real_lift",
    "complex_from_real",
    "draw_target",
    "signal_power",
    "noise_var_for_snr",
    "synthesize_sweeps",
    "radar_dataset",
    "mmse_known_support",
]


def doppler_vector(q: int, omega: float) -> np.ndarray:
    """``exp(j k omega)`` for ``k = 0..q-1``."""
    if q < 1:
        raise ValueError("q must be >= 1")
    return np.exp(1j * omega * np.arange(q))


def steering_vector(count: int, spacing: float, theta_deg: float) -> np.ndarray:
    """Uniform linear array response, phase referenced to element 0."""
    if count < 1:
        raise ValueError("count must be >= 1")
    phase = 2 * np.pi * spacing * math.sin(math.radians(theta_deg))
    return np.exp(1j * phase * np.arange(count))


def shift_matrix(dim: int, r: int) -> np.ndarray:
    """Delay by ``r - 1`` samples acting on row vectors: ``(v @ J)[c] = v[c - r + 1]``.

    ``J[i, i + r - 1] = 1``; ``J_1`` is the identity.
    """
    if not 1 <= r <= dim:
        raise ValueError(f"shift r={r} outside 1..{dim}")
    return np.eye(dim, k=r - 1)


def doppler_grid(n_d: int) -> np.ndarray:
    """``0`` for a single bin, otherwise ``n_d`` uniform points on ``[-pi, pi)``."""
    if n_d == 1:
        return np.zeros(1)
    return -np.pi + 2 * np.pi * np.arange(n_d) / n_d


@dataclass(frozen=True)
class RadarConfig:
    mt: int = 2
    mr: int = 10
    q: int = 2
    n_a: int = 10
    n_r: int = 5
    n_d: int = 1
    angles: tuple = None  # degrees; default: n_a points evenly over [-45, 45]
    spacing: float = 0.5
    sweeps: int = 2
    waveform: np.ndarray | None = field(default=None, compare=False)  # complex (q, mt); None: Hadamard

    def __post_init__(self):
        for name in ("mt", "mr", "q", "n_a", "n_r", "n_d", "sweeps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.angles is None:
            object.__setattr__(self, "angles", tuple(np.linspace(-45.0, 45.0, self.n_a)))
        else:
            object.__setattr__(self, "angles", tuple(float(t) for t in self.angles))
        if len(self.angles) != self.n_a:
            raise ValueError(f"expected {self.n_a} angles, got {len(self.angles)}")
        if np.any(np.diff(self.angles) <= 0):
            raise ValueError("angles must be strictly increasing")
        if self.waveform is not None and np.shape(self.waveform) != (self.q, self.mt):
            raise ValueError(f"waveform must be ({self.q}, {self.mt})")

    @property
    def m_c(self) -> int:
        return self.mr * (self.q + self.n_r - 1)

    @property
    def n_c(self) -> int:
        return self.n_a * self.n_d * self.n_r


def transmit_code(cfg: RadarConfig) -> np.ndarray:
    """``(q, mt)`` code; column ``i`` is antenna ``i``'s waveform."""
    if cfg.waveform is not None:
        return np.asarray(cfg.waveform, dtype=np.complex128)
    if cfg.q < cfg.mt:
        raise ValueError(f"Hadamard code of length {cfg.q} cannot serve {cfg.mt} antennas")
    try:
        h = hadamard(cfg.q)
    except ValueError:
        raise ValueError(f"no Hadamard matrix of order {cfg.q} (needs a power of 2)") from None
    return h[:, : cfg.mt].astype(np.complex128)


@dataclass(frozen=True)
class RadarScene:
    config: RadarConfig
    a_complex: np.ndarray  # (M_c, N_c)
    a_real: np.ndarray  # (2 M_c, 2 N_c)


def real_lift_matrix(ac) -> np.ndarray:
    """``[[Re, -Im], [Im, Re]]``."""
    ac = np.asarray(ac)
    return np.block([[ac.real, -ac.imag], [ac.imag, ac.real]])


def real_lift(vc) -> np.ndarray:
    """Stack real parts over imaginary parts along the first (row) axis."""
    vc = np.asarray(vc)
    return np.concatenate([vc.real, vc.imag], axis=-2 if vc.ndim > 1 else 0)


def complex_from_real(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    axis = -2 if v.ndim > 1 else 0
    half = v.shape[axis] // 2
    re, im = np.split(v, [half], axis=axis)
    return re + 1j * im


def build_dictionary(cfg: RadarConfig) -> RadarScene:
    """Assemble the complex dictionary and its real lifting.

    Column ``(d * n_r + r) * n_a + a`` holds bin ``(d, r, a)``: angle varies
    fastest, then range, then doppler.
    """
    code = transmit_code(cfg)  # (q, mt)
    p = cfg.q + cfg.n_r - 1
    cols = []
    for omega in doppler_grid(cfg.n_d):
        s_d = (code * doppler_vector(cfg.q, omega)[:, None]).T  # (mt, q)
        s_pad = np.hstack([s_d, np.zeros((cfg.mt, cfg.n_r - 1))])
        for r in range(1, cfg.n_r + 1):
            delayed = s_pad @ shift_matrix(p, r)
            for theta in cfg.angles:
                b = steering_vector(cfg.mr, cfg.spacing, theta)
                a = steering_vector(cfg.mt, cfg.spacing, theta)
                cols.append(np.outer(b, a @ delayed).reshape(-1, order="F"))
    ac = np.stack(cols, axis=1)
    return RadarScene(cfg, ac, real_lift_matrix(ac))


@dataclass(frozen=True)
class TargetSpec:
    """An extended target: one contiguous run of ``k_min..k_max`` complex bins."""

    k_min: int = 3
    k_max: int = 8

    def __post_init__(self):
        if not 1 <= self.k_min <= self.k_max:
            raise ValueError("need 1 <= k_min <= k_max")


def draw_target(scene: RadarScene, target: TargetSpec, gen: np.random.Generator):
    """Return ``(support, x_complex)``; ``x_complex`` is ``(N_c, L)`` with CN(0, 1) entries on the run."""
    n_c, sweeps = scene.config.n_c, scene.config.sweeps
    if target.k_max > n_c:
        raise ValueError(f"target of up to {target.k_max} bins does not fit {n_c} bins")
    k = int(gen.integers(target.k_min, target.k_max + 1))
    start = int(gen.integers(0, n_c - k + 1))
    support = np.arange(start, start + k)
    xc = np.zeros((n_c, sweeps), dtype=np.complex128)
    g = gen.standard_normal((2, k, sweeps))
    xc[support] = (g[0] + 1j * g[1]) / np.sqrt(2.0)
    return support, xc


def signal_power(scene: RadarScene, target: TargetSpec, rng: Rng, draws: int = 512) -> float:
    """Monte-Carlo estimate of ``E Tr(X^T A^T A X)`` over target draws."""
    total = 0.0
    for i in range(draws):
        _, xc = draw_target(scene, target, rng.child(i).generator())
        s = scene.a_complex @ xc
        total += float(np.sum(s.real**2 + s.imag**2))
    return total / draws


def noise_var_for_snr(power: float, m: int, sweeps: int, snr_db: float) -> float:
    """Per-real-component variance giving ``power / E Tr(N^T N) = 10^(snr/10)``."""
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    return power / (m * sweeps * 10 ** (snr_db / 10))


def synthesize_sweeps(scene: RadarScene, target: TargetSpec, snr_db: float, rng: Rng,
                      power: float | None = None) -> Sample:
    """One real-valued sample ``Y = A X + N`` at the requested SNR.

    ``snr_db = inf`` gives noiseless sweeps.  ``power`` defaults to
    :func:`signal_power` evaluated on a stream derived from ``rng``; pass it
    explicitly when synthesising many samples.
    """
    if power is None:
        power = signal_power(scene, target, rng.child("power"))
    gen = rng.generator()
    _, xc = draw_target(scene, target, gen)
    x = real_lift(xc)
    a = scene.a_real
    nv = noise_var_for_snr(power, a.shape[0], scene.config.sweeps, snr_db)
    y = a @ x
    if nv > 0:
        y = y + math.sqrt(nv) * gen.standard_normal(y.shape)
    return Sample(a, x, y, nv)


def radar_dataset(scene: RadarScene, target: TargetSpec, snr_db, count: int, rng: Rng,
                  power: float | None = None) -> Dataset:
    """``count`` samples sharing the scene dictionary.

    ``snr_db`` is a fixed value or a ``(lo, hi)`` range drawn uniformly per sample.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if power is None:
        power = signal_power(scene, target, rng.child("power"))
    samples = []
    for i in range(count):
        stream = rng.child("sample", i)
        snr = snr_db
        if isinstance(snr_db, (tuple, list)):
            lo, hi = snr_db
            snr = float(stream.child("snr").generator().uniform(lo, hi))
        samples.append(synthesize_sweeps(scene, target, snr, stream, power))
    a = scene.a_real
    return Dataset(a, np.stack([s.x for s in samples]), np.stack([s.y for s in samples]),
                   np.array([s.noise_var for s in samples]))


def mmse_known_support(a, y, support, noise_var, prior_var: float = 1.0) -> np.ndarray:
    """Linear MMSE estimate given the true support.

    Entries on ``support`` have prior variance ``prior_var``, all others are
    zero: ``x_S = (A_S^T A_S + (noise_var/prior_var) I)^{-1} A_S^T y``.  With
    ``noise_var = 0`` this is the least-squares refit on the support.
    """
    a = np.asarray(a, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    support = np.asarray(support, dtype=np.intp)
    if support.size == 0:
        raise ValueError("support must be non-empty")
    if noise_var < 0 or prior_var <= 0:
        raise ValueError("need noise_var >= 0 and prior_var > 0")
    vec = y.ndim == 1
    if vec:
        y = y[:, None]
    a_s = a[:, support]
    gram = a_s.T @ a_s + (noise_var / prior_var) * np.eye(support.size)
    x = np.zeros((a.shape[1], y.shape[1]))
    x[support] = solve_spd(gram, a_s.T @ y)
    return x[:, 0] if vec else x
