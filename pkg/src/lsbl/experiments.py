"""Benchmark harness: run named solvers on test sets and score them.

Every solver receives the batch ``(a, y, noise_var)`` and returns estimates
shaped like the true ``x`` (``(B, N, L)``).  Single-vector solvers are applied
column by column on multi-vector data.  OMP and CoSaMP are given the true
per-column sparsity, and BP reports the best RMSE over its lambda grid.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .baselines import GreedyConfig, IstaConfig, cosamp, ista, omp
from .bayes import PcSblConfig, SblConfig, run_msbl, run_pcsbl, run_sbl
from .core import Dataset, Rng
from .datagen import generate
from .metrics import EvalReport, failure_rate, rmse, support_prob
from .network import predict
from .radar import mmse_known_support, radar_dataset

__all__ = [
    "SOLVERS",
    "SolverSpec",
    "run_solver",
    "score",
    "evaluate_dataset",
    "sweep_sparsity",
    "sweep_snr",
    "write_reports",
    "REPORT_COLUMNS",
    "EVAL_NOISE_FLOOR",
]

SOLVERS = ("sbl", "msbl", "pcsbl", "omp", "cosamp", "bp", "lsbl", "mmse")
REPORT_COLUMNS = ("sweep", "solver", "rmse", "failure_rate", "p")
DEFAULT_LAMBDAS = (1e-3, 1e-2, 1e-1)
EVAL_NOISE_FLOOR = 1e-6  # noise variance given to solvers on noiseless data


@dataclass(frozen=True)
class SolverSpec:
    """A solver name plus its settings.

    Recognised options: ``iterations`` (sbl, msbl, pcsbl, cosamp, bp),
    ``beta`` (pcsbl), ``lambdas`` (bp), ``prior_var`` (mmse), ``noise_floor``
    (lower bound on the noise variance a Bayesian solver is given) and
    ``label`` (name written to reports, e.g. to tell two trained models apart).
    """

    name: str
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in SOLVERS:
            raise ValueError(f"unknown solver {self.name!r}; expected one of {', '.join(SOLVERS)}")

    @property
    def label(self) -> str:
        return self.options.get("label", self.name)


def _columns(a, y):
    """View a multi-vector batch as ``B*L`` single-vector problems."""
    b, m, l = y.shape
    ys = np.swapaxes(y, 1, 2).reshape(b * l, m, 1)
    if a.ndim == 3:
        a = np.repeat(a, l, axis=0)
    return a, ys


def _uncolumns(x, b, l):
    n = x.shape[-2]
    return np.swapaxes(x.reshape(b, l, n), 1, 2)


def _matrix(a, i):
    return a if a.ndim == 2 else a[i]


def _greedy(a, y, x_true, fn):
    out = np.zeros_like(x_true)
    for i in range(len(y)):
        ai = _matrix(a, i)
        for c in range(y.shape[2]):
            k = int(np.count_nonzero(x_true[i, :, c]))
            out[i, :, c] = fn(ai, y[i, :, c], k)
    return out


def _bp(a, y, x_true, lam, iterations):
    b, m, l = y.shape
    cfg = IstaConfig(lam=lam, iterations=iterations)
    if a.ndim == 2:
        flat = np.swapaxes(y, 0, 1).reshape(m, b * l)
        x = ista(a, flat, cfg)
        return np.swapaxes(x.reshape(-1, b, l), 0, 1)
    return np.stack([ista(a[i], y[i], cfg) for i in range(b)])


def run_solver(spec: SolverSpec, a, y, x_true, noise_var, model=None) -> np.ndarray:
    """Estimates ``(B, N, L)`` for one solver.

    ``x_true`` supplies oracle information where a solver needs it (greedy
    cardinality, MMSE support, BP lambda selection).  ``noise_var`` is the
    per-sample variance handed to the Bayesian solvers.
    """
    a = np.asarray(a, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x_true = np.asarray(x_true, dtype=np.float64)
    b, _, l = y.shape
    nv = np.broadcast_to(np.asarray(noise_var, dtype=np.float64), (b,))
    opt = spec.options
    nv = np.maximum(nv, opt.get("noise_floor", 0.0))
    name = spec.name
    if name == "sbl":
        ac, yc = _columns(a, y)
        est = run_sbl(ac, yc, np.repeat(nv, l), SblConfig(iterations=opt.get("iterations", 100)))
        return _uncolumns(est.xhat, b, l)
    if name == "msbl":
        return run_msbl(a, y, nv, SblConfig(iterations=opt.get("iterations", 100))).xhat
    if name == "pcsbl":
        cfg = PcSblConfig(beta=opt.get("beta", 1.0), iterations=opt.get("iterations", 100))
        return run_pcsbl(a, y, nv, cfg).xhat
    if name == "omp":
        return _greedy(a, y, x_true, lambda ai, yi, k: omp(ai, yi, GreedyConfig(max_nonzeros=k)))
    if name == "cosamp":
        its = opt.get("iterations", 50)
        return _greedy(a, y, x_true, lambda ai, yi, k: cosamp(ai, yi, k, its))
    if name == "bp":
        best, best_err = None, math.inf
        for lam in opt.get("lambdas", DEFAULT_LAMBDAS):
            x = _bp(a, y, x_true, lam, opt.get("iterations", 1000))
            err = rmse(x_true, x)
            if err < best_err:
                best, best_err = x, err
        return best
    if name == "lsbl":
        if model is None:
            raise ValueError("solver 'lsbl' needs a trained model")
        return predict(model, a, y, nv)
    if name == "mmse":
        prior = opt.get("prior_var", 1.0)
        out = np.zeros_like(x_true)
        for i in range(b):
            support = np.flatnonzero(np.any(x_true[i] != 0, axis=1))
            if support.size:
                out[i] = mmse_known_support(_matrix(a, i), y[i], support, float(nv[i]), prior)
        return out
    raise ValueError(f"unknown solver {name!r}")


def score(x_true, x_est, sweep, solver, mode="topk") -> EvalReport:
    keep = [i for i in range(len(x_true)) if np.any(x_true[i] != 0)]
    xt = [x_true[i] for i in keep]
    xe = [x_est[i] for i in keep]
    probs = [support_prob(t, e, mode) for t, e in zip(xt, xe)]
    return EvalReport(float(sweep), solver, rmse(xt, xe), failure_rate(probs), len(keep))


def evaluate_dataset(ds: Dataset, solvers, sweep, models=None, noise_floor=EVAL_NOISE_FLOOR,
                     mode="topk"):
    """Score every solver on one test set.

    ``models`` maps a solver label to a trained model for ``lsbl`` entries.
    """
    models = models or {}
    a, x, y, nv = ds.batch(np.arange(ds.count))
    nv = np.maximum(nv, noise_floor)
    reports = []
    for spec in solvers:
        est = run_solver(spec, a, y, x, nv, models.get(spec.label))
        reports.append(score(x, est, sweep, spec.label, mode))
    return reports


def sweep_sparsity(cfg, ks, count, solvers, rng: Rng, a=None, models=None,
                   noise_floor=EVAL_NOISE_FLOOR, mode="topk"):
    """Fresh test data at each fixed sparsity ``k`` from stream ``rng.child(k)``.

    ``a`` is the shared matrix (normally the training matrix); ignored when
    ``cfg.per_sample_matrix`` is set.
    """
    reports = []
    for k in ks:
        ds = generate(cfg.with_sparsity(k, count), rng.child(int(k)), a=a)
        reports.extend(evaluate_dataset(ds, solvers, k, models, noise_floor, mode))
    return reports


def sweep_snr(scene, target, snrs, count, solvers, rng: Rng, models=None, power=None,
              noise_floor=EVAL_NOISE_FLOOR, mode="topk"):
    """Radar test sets at each SNR from stream ``rng.child(round(snr * 1000))``."""
    reports = []
    for snr in snrs:
        key = "inf" if math.isinf(snr) else int(round(snr * 1000))
        ds = radar_dataset(scene, target, float(snr), count, rng.child(key), power)
        reports.extend(evaluate_dataset(ds, solvers, snr, models, noise_floor, mode))
    return reports


def write_reports(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            w.writerow((repr(r.sweep), r.solver, repr(r.rmse), repr(r.failure_rate), r.p))
