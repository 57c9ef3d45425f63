"""The unrolled L-SBL network.

Each layer maps the previous posterior ``(xhat, diag(phi))`` to new prior
variances with one dense layer, then runs the parameter-free MAP stage.

* ``NW1`` keeps one variance per row of ``X`` (``N`` outputs); inputs are the
  ``N*L`` squared entries of ``vec(X^T)`` and the ``N`` posterior variances.
* ``NW2`` works on the Kronecker-lifted system ``(A kron I_L) vec(X^T) =
  vec(Y^T)`` with one variance per entry (``N*L`` outputs).

Both are identical for a single measurement vector.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape
from .bayes import map_estimate
from .core import ParseError, PosteriorEstimate

__all__ = [
    "ParseError",
    "LayerParams",
    "LsblModel",
    "lift_matrix",
    "effective_system",
    "sbl_embedding",
    "init_model",
    "initial_state",
    "layer_features",
    "layer_gamma",
    "layer_forward",
    "forward",
    "predict",
    "tape_forward",
    "save_model",
    "load_model",
    "MODEL_MAGIC",
    "MODEL_VERSION",
]

NW1 = "NW1"
NW2 = "NW2"
VARIANTS = (NW1, NW2)


@dataclass
class LayerParams:
    w: np.ndarray
    b: np.ndarray

    def copy(self) -> "LayerParams":
        return LayerParams(self.w.copy(), self.b.copy())

    def __eq__(self, other):
        return (isinstance(other, LayerParams) and np.array_equal(self.w, other.w)
                and np.array_equal(self.b, other.b))


@dataclass
class LsblModel:
    variant: str
    n: int
    l: int
    layers: list = field(default_factory=list)
    gamma_floor: float = 1e-8
    gamma_cap: float = 1e4

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not 0 < self.gamma_floor < self.gamma_cap:
            raise ValueError("need 0 < gamma_floor < gamma_cap")
        rows, cols = self.weight_shape
        for p in self.layers:
            if p.w.shape != (rows, cols) or p.b.shape != (rows,):
                raise ValueError(f"layer shapes {p.w.shape}/{p.b.shape} do not match {self.variant}")

    @property
    def weight_shape(self):
        nl = self.n * self.l
        return (self.n, nl + self.n) if self.variant == NW1 else (nl, 2 * nl)

    @property
    def depth(self):
        return len(self.layers)

    def copy(self) -> "LsblModel":
        return LsblModel(self.variant, self.n, self.l, [p.copy() for p in self.layers],
                         self.gamma_floor, self.gamma_cap)

    def __eq__(self, other):
        return (isinstance(other, LsblModel) and self.variant == other.variant
                and (self.n, self.l, self.gamma_floor, self.gamma_cap)
                == (other.n, other.l, other.gamma_floor, other.gamma_cap)
                and len(self.layers) == len(other.layers)
                and all(p == q for p, q in zip(self.layers, other.layers)))


def lift_matrix(a, l: int) -> np.ndarray:
    """``A kron I_l`` for one matrix or a stack of matrices."""
    if l < 1:
        raise ValueError("l must be >= 1")
    a = np.asarray(a, dtype=np.float64)
    if l == 1:
        return a
    m, n = a.shape[-2:]
    eye = np.eye(l)
    lifted = a[..., :, None, :, None] * eye[:, None, :]
    return lifted.reshape(a.shape[:-2] + (m * l, n * l))


def effective_system(variant: str, a, y):
    """The ``(a, y)`` pair the MAP stage of ``variant`` actually solves."""
    a = np.asarray(a, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if variant == NW1:
        return a, y
    l = y.shape[-1]
    return lift_matrix(a, l), y.reshape(y.shape[:-2] + (y.shape[-2] * l, 1))


def sbl_embedding(variant: str, n: int, l: int) -> LayerParams:
    """Weights that make a layer reproduce one (M-)SBL hyperparameter update.

    For ``NW1`` the squared entries of each row are averaged over the ``l``
    columns, so the layer computes ``||X_i.||^2 / l + phi_ii``; for a single
    vector this is the ``[I | I]`` map.  ``NW2`` uses ``[I | I]`` on the lifted
    entries.
    """
    if variant == NW1:
        pool = np.kron(np.eye(n), np.full((1, l), 1.0 / l))
        w = np.hstack([pool, np.eye(n)])
        return LayerParams(w, np.zeros(n))
    nl = n * l
    return LayerParams(np.hstack([np.eye(nl), np.eye(nl)]), np.zeros(nl))


def init_model(variant: str, n: int, l: int, depth: int, gamma_floor=1e-8, gamma_cap=1e4) -> LsblModel:
    """Untrained model with every layer at the SBL embedding."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    base = sbl_embedding(variant, n, l)
    return LsblModel(variant, n, l, [base.copy() for _ in range(depth)], gamma_floor, gamma_cap)


def initial_state(model: LsblModel, batch_shape=()) -> PosteriorEstimate:
    """``xhat = 0`` and ``phi = 1``: the first layer then sees ``gamma = 1`` under the embedding."""
    n, l = model.n, model.l
    if model.variant == NW1:
        return PosteriorEstimate(np.zeros(batch_shape + (n, l)), np.ones(batch_shape + (n,)))
    return PosteriorEstimate(np.zeros(batch_shape + (n * l, 1)), np.ones(batch_shape + (n * l,)))


def layer_features(prev: PosteriorEstimate) -> np.ndarray:
    x = prev.xhat
    sq = (x * x).reshape(x.shape[:-2] + (-1,))
    return np.concatenate([sq, prev.phi_diag], axis=-1)


def layer_gamma(model: LsblModel, k: int, prev: PosteriorEstimate) -> np.ndarray:
    p = model.layers[k]
    pre = layer_features(prev) @ p.w.T + p.b
    return np.clip(np.maximum(pre, 0.0), model.gamma_floor, model.gamma_cap)


def layer_forward(model: LsblModel, k: int, a_eff, y_eff, prev: PosteriorEstimate, noise_var) -> PosteriorEstimate:
    """Apply layer ``k`` (0-based) to an already lifted system."""
    return map_estimate(a_eff, y_eff, layer_gamma(model, k, prev), noise_var)


def forward(model: LsblModel, a, y, noise_var, return_all: bool = False):
    """Run every layer from the initial state.

    ``a`` is ``(M, N)`` or a stack ``(B, M, N)``; ``y`` is ``(M, L)`` or
    ``(B, M, L)``.  ``noise_var`` is a scalar or one value per batch entry.
    Returns the last :class:`PosteriorEstimate` in the variant's native layout
    (``(N, L)`` for NW1, ``(N*L, 1)`` for NW2), or the list of all layer
    outputs with ``return_all``.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[-1] != model.l:
        raise ValueError(f"model expects {model.l} measurement vectors, got {y.shape[-1]}")
    a_eff, y_eff = effective_system(model.variant, a, y)
    batch = np.broadcast_shapes(np.shape(a)[:-2], y.shape[:-2])
    state = initial_state(model, batch)
    outs = []
    for k in range(model.depth):
        state = layer_forward(model, k, a_eff, y_eff, state, noise_var)
        outs.append(state)
    return outs if return_all else state


def predict(model: LsblModel, a, y, noise_var) -> np.ndarray:
    """Estimate of ``X`` shaped ``(..., N, L)`` for either variant."""
    est = forward(model, a, y, noise_var)
    return est.xhat.reshape(est.xhat.shape[:-2] + (model.n, model.l))


# --------------------------------------------------------------------------
# Differentiable forward pass
# --------------------------------------------------------------------------


def _tape_layer(tape: Tape, w, b, a, y, noise, x, phi, floor, cap, l_eff):
    xv = tape.value(x)
    sq = tape.reshape(tape.mul(x, x), xv.shape[:-2] + (-1,))
    feats = tape.concat([sq, phi])
    pre = tape.add(tape.matmul(feats, w, transpose_b=True), b)
    gamma = tape.clamp(tape.relu(pre), floor, cap)
    gv = tape.value(gamma)
    ar = tape.mul(a, tape.reshape(gamma, gv.shape[:-1] + (1, gv.shape[-1])))
    s = tape.add(tape.matmul(ar, a, transpose_b=True), noise)
    z = tape.solve_spd(s, tape.concat([y, ar]))
    zy = tape.slice(z, (Ellipsis, slice(0, l_eff)))
    za = tape.slice(z, (Ellipsis, slice(l_eff, None)))
    x_new = tape.matmul(ar, zy, transpose_a=True)
    phi_new = tape.relu(tape.sub(gamma, tape.sum(tape.mul(ar, za), axis=-2)))
    return x_new, phi_new


def tape_forward(tape: Tape, model: LsblModel, param_ids, a, y, noise_var, start=0, state=None):
    """Record layers ``start..len(param_ids)-1`` on ``tape``.

    ``param_ids`` holds one ``(w_id, b_id)`` pair per layer (leaves created by
    the caller, so it decides which are trainable).  ``state`` is the
    posterior entering layer ``start`` (defaults to the initial state).
    Returns the ids of the final ``(xhat, phi)`` nodes.
    """
    y = np.asarray(y, dtype=np.float64)
    a_eff, y_eff = effective_system(model.variant, a, y)
    batch = np.broadcast_shapes(np.shape(a)[:-2], y.shape[:-2])
    if state is None:
        state = initial_state(model, batch)
    m_eff = a_eff.shape[-2]
    nv = np.broadcast_to(np.asarray(noise_var, dtype=np.float64), batch)
    a_id = tape.leaf(a_eff)
    y_id = tape.leaf(y_eff)
    noise_id = tape.leaf(nv[..., None, None] * np.eye(m_eff))
    x_id = tape.leaf(state.xhat)
    phi_id = tape.leaf(state.phi_diag)
    for w_id, b_id in param_ids[start:]:
        x_id, phi_id = _tape_layer(tape, w_id, b_id, a_id, y_id, noise_id, x_id, phi_id,
                                   model.gamma_floor, model.gamma_cap, y_eff.shape[-1])
    return x_id, phi_id


# --------------------------------------------------------------------------
# Serialisation
# --------------------------------------------------------------------------

MODEL_MAGIC = b"LSBLMD1\x00"
MODEL_VERSION = 1
_HEAD = struct.Struct("<8sIBIIIdd")
_VARIANT_TAG = {NW1: 1, NW2: 2}


def save_model(model: LsblModel, path) -> None:
    """Write ``model`` in the little-endian ``LSBLMD1`` layout (see docs/formats.md)."""
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MODEL_MAGIC, MODEL_VERSION, _VARIANT_TAG[model.variant], model.n,
                            model.l, model.depth, model.gamma_floor, model.gamma_cap))
        for p in model.layers:
            fh.write(np.ascontiguousarray(p.w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(p.b, dtype="<f8").tobytes())


def load_model(path) -> LsblModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8 or raw[:8] != MODEL_MAGIC:
        raise ParseError(f"bad magic {raw[:8]!r}, expected {MODEL_MAGIC!r}", 0)
    if len(raw) < _HEAD.size:
        raise ParseError("truncated header", len(raw))
    _, version, tag, n, l, depth, floor, cap = _HEAD.unpack_from(raw, 0)
    if version != MODEL_VERSION:
        raise ParseError(f"unsupported model version: expected {MODEL_VERSION}, found {version}", 8)
    variants = {v: k for k, v in _VARIANT_TAG.items()}
    if tag not in variants:
        raise ParseError(f"unknown variant tag {tag}", 12)
    model = LsblModel(variants[tag], n, l, [], floor, cap)
    rows, cols = model.weight_shape
    off = _HEAD.size
    layers = []
    for _ in range(depth):
        need = (rows * cols + rows) * 8
        if off + need > len(raw):
            raise ParseError(f"truncated layer {len(layers)}", off)
        w = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols)
        b = np.frombuffer(raw, dtype="<f8", count=rows, offset=off + rows * cols * 8)
        layers.append(LayerParams(w.astype(np.float64), b.astype(np.float64)))
        off += need
    if off != len(raw):
        raise ParseError("trailing bytes after last layer", off)
    model.layers = layers
    return model
