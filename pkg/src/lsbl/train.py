"""Layerwise training of L-SBL.

For each new layer ``k`` the parameters are copied from layer ``k-1`` (the
first layer starts at the SBL embedding).  Phase 1 then updates only layer
``k`` with the earlier layers frozen; phase 2 updates layers ``1..k``
jointly.  Both phases minimise the mean squared error of the current output.
The optimizer state is reset at every phase boundary, and every phase draws
its mini-batches from its own random stream, so a run resumed from a phase
checkpoint reproduces an uninterrupted run exactly.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Tape, backward
from .core import Rng
from .network import LsblModel, forward, load_model, save_model, sbl_embedding, tape_forward

__all__ = [
    "TrainConfig",
    "TrainingAborted",
    "TrainResult",
    "loss_mse",
    "solver_noise_var",
    "loss_and_grads",
    "Adam",
    "Sgd",
    "train_layerwise",
]

LOG_HEADER = ("phase", "layer", "step", "loss")


class TrainingAborted(RuntimeError):
    """Loss became non-finite; carries the position where it happened."""

    def __init__(self, layer, phase, step, batch_seed):
        super().__init__(f"non-finite loss at layer {layer}, phase {phase}, step {step} "
                         f"(batch stream {batch_seed})")
        self.layer, self.phase, self.step, self.batch_seed = layer, phase, step, batch_seed


@dataclass(frozen=True)
class TrainConfig:
    layers: int = 8
    steps_per_phase: int = 2000
    batch_size: int = 128
    optimizer: str = "adam"
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-16
    loss_floor_stop: float = 0.0
    noise_floor: float = 1e-2  # lower bound on the MAP-stage noise variance
    grad_clip: float = 0.0  # global gradient-norm bound; 0 disables
    seed: int = 0

    def __post_init__(self):
        if self.layers < 1 or self.steps_per_phase < 1 or self.batch_size < 1:
            raise ValueError("layers, steps_per_phase and batch_size must be >= 1")
        if self.grad_clip < 0:
            raise ValueError("grad_clip must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainResult:
    model: LsblModel
    log: list = field(default_factory=list)  # (phase, layer, step, loss)

    def losses(self, layer=None, phase=None):
        return np.array([r[3] for r in self.log
                         if (layer is None or r[1] == layer) and (phase is None or r[0] == phase)])


def solver_noise_var(noise_var, floor=1e-2):
    """Noise variance handed to the MAP stage: the data variance, floored."""
    return np.maximum(np.asarray(noise_var, dtype=np.float64), floor)


def loss_mse(x_true, x_hat) -> float:
    """Mean over the batch of ``||x_i - xhat_i||^2`` (Frobenius for several columns)."""
    x_true = np.asarray(x_true, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x_true.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x_true.shape} vs {x_hat.shape}")
    if x_true.ndim == 2:
        x_true, x_hat = x_true[None], x_hat[None]
    d = (x_true - x_hat).reshape(len(x_true), -1)
    return float(np.mean(np.sum(d * d, axis=1)))


def loss_and_grads(model: LsblModel, trainable, a, x, y, noise_var):
    """Batch loss and ``{layer: (dW, db)}`` for the layers in ``trainable``.

    Layers before the first trainable one are evaluated without recording.
    """
    trainable = sorted(trainable)
    start = trainable[0]
    batch = len(x)
    state = None
    if start > 0:
        prefix = LsblModel(model.variant, model.n, model.l, model.layers[:start],
                           model.gamma_floor, model.gamma_cap)
        state = forward(prefix, a, y, noise_var)
    tape = Tape()
    param_ids = [None] * model.depth
    for k in range(start, model.depth):
        req = k in trainable
        p = model.layers[k]
        param_ids[k] = (tape.leaf(p.w, requires_grad=req), tape.leaf(p.b, requires_grad=req))
    x_id, _ = tape_forward(tape, model, param_ids, a, y, noise_var, start=start, state=state)
    xhat = tape.reshape(x_id, (batch, model.n, model.l))
    diff = tape.sub(xhat, tape.leaf(x))
    loss_id = tape.scale(tape.sum_sq(diff), 1.0 / batch)
    adj = backward(tape, loss_id)
    grads = {}
    for k in trainable:
        w_id, b_id = param_ids[k]
        grads[k] = (adj.get(w_id, np.zeros_like(model.layers[k].w)),
                    adj.get(b_id, np.zeros_like(model.layers[k].b)))
    return float(tape.value(loss_id)), grads


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-16):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params: dict, grads: dict):
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for key, g in grads.items():
            m = self.m.get(key, 0.0) * self.beta1 + (1 - self.beta1) * g
            v = self.v.get(key, 0.0) * self.beta2 + (1 - self.beta2) * g * g
            self.m[key], self.v[key] = m, v
            params[key] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class Sgd:
    def __init__(self, lr=1e-3):
        self.lr = lr

    def step(self, params: dict, grads: dict):
        for key, g in grads.items():
            params[key] -= self.lr * g


def _optimizer(cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    return Sgd(cfg.lr)


def _save_checkpoint(model, directory, layer, phase):
    os.makedirs(directory, exist_ok=True)
    save_model(model, os.path.join(directory, "checkpoint.bin"))
    with open(os.path.join(directory, "checkpoint.json"), "w") as fh:
        json.dump({"layer": layer, "phase": phase}, fh)


def load_checkpoint(directory):
    """Return ``(model, layer, phase)`` of the last completed phase."""
    with open(os.path.join(directory, "checkpoint.json")) as fh:
        pos = json.load(fh)
    return load_model(os.path.join(directory, "checkpoint.bin")), pos["layer"], pos["phase"]


def train_layerwise(dataset, cfg: TrainConfig, variant: str = "NW1", *, gamma_floor=1e-8,
                    gamma_cap=1e4, log_path=None, checkpoint_dir=None, checkpoint_every=0,
                    resume=None, verbose=False) -> TrainResult:
    """Train a ``cfg.layers``-deep model on ``dataset``.

    ``dataset`` is anything with ``count``, ``dims`` and ``batch(indices)``
    (a :class:`~lsbl.core.Dataset` or :class:`~lsbl.datagen.LazyDataset`).
    ``resume`` is a ``(model, layer, phase)`` triple from
    :func:`load_checkpoint`; training continues after that phase.  With
    ``checkpoint_every = c > 0`` a checkpoint is written after every ``c``-th
    completed phase.
    """
    _, n, l = dataset.dims
    rng = Rng(cfg.seed).child("train")
    model = LsblModel(variant, n, l, [], gamma_floor, gamma_cap)
    done = (-1, 2)
    if resume is not None:
        model, *done = resume
        model = model.copy()
        done = tuple(done)
    result = TrainResult(model)
    log_fh = None
    writer = None
    if log_path is not None:
        fresh = resume is None or not os.path.exists(log_path)
        log_fh = open(log_path, "w" if fresh else "a", newline="")
        writer = csv.writer(log_fh)
        if fresh:
            writer.writerow(LOG_HEADER)
    phases_done = 0
    try:
        for k in range(cfg.layers):
            if k < done[0] or (k == done[0] and done[1] == 2):
                continue
            if len(model.layers) <= k:
                init = model.layers[k - 1] if k > 0 else sbl_embedding(variant, n, l)
                model.layers.append(init.copy())
            for phase in (1, 2):
                if k == done[0] and phase <= done[1]:
                    continue
                trainable = [k] if phase == 1 else list(range(k + 1))
                _run_phase(model, dataset, cfg, rng.child(k, phase), k, phase, trainable,
                           result, writer, verbose)
                phases_done += 1
                if checkpoint_dir and checkpoint_every and phases_done % checkpoint_every == 0:
                    _save_checkpoint(model, checkpoint_dir, k, phase)
    finally:
        if log_fh is not None:
            log_fh.close()
    return result


def _run_phase(model, dataset, cfg, stream, k, phase, trainable, result, writer, verbose):
    gen = stream.generator()
    opt = _optimizer(cfg)
    params = {}
    for j in trainable:
        params[(j, "w")] = model.layers[j].w
        params[(j, "b")] = model.layers[j].b
    count = dataset.count
    for step in range(cfg.steps_per_phase):
        idx = gen.integers(0, count, size=cfg.batch_size)
        a, x, y, nv = dataset.batch(idx)
        loss, grads = loss_and_grads(model, trainable, a, x, y,
                                     solver_noise_var(nv, cfg.noise_floor))
        if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for gw in grads.values() for g in gw):
            raise TrainingAborted(k + 1, phase, step, stream.path)
        flat = {}
        for j, (gw, gb) in grads.items():
            flat[(j, "w")] = gw
            flat[(j, "b")] = gb
        if cfg.grad_clip > 0:
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in flat.values()))
            if norm > cfg.grad_clip:
                flat = {key: g * (cfg.grad_clip / norm) for key, g in flat.items()}
        opt.step(params, flat)
        row = (phase, k + 1, step, loss)
        result.log.append(row)
        if writer is not None:
            writer.writerow((phase, k + 1, step, repr(loss)))
        if verbose and step % 100 == 0:
            print(f"layer {k + 1} phase {phase} step {step} loss {loss:.6g}", flush=True)
        if cfg.loss_floor_stop > 0 and loss < cfg.loss_floor_stop:
            break


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
