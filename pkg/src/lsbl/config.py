"""Experiment configuration: JSON schema, validation and object builders.

A configuration is one JSON document with the sections ``data``, ``model``,
``train`` and ``eval`` plus a global ``seed`` and ``output_dir``.  Unknown keys
are rejected.  The seed expands into independent named streams (``data``,
``train``, ``eval``) so that changing the evaluation sweep never changes the
training data.
"""
from __future__ import annotations

import json

import jsonschema

from .core import Rng
from .datagen import AmplitudeSpec, GenConfig, LazyDataset, StructureSpec, generate
from .experiments import SOLVERS, SolverSpec
from .radar import RadarConfig, TargetSpec, build_dictionary, radar_dataset, signal_power
from .train import TrainConfig

__all__ = ["SCHEMA", "ConfigError", "load_config", "validate", "Experiment"]

_COUNT = {"type": "integer", "minimum": 1}
_NONNEG = {"type": "number", "minimum": 0}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_STRUCTURE = _obj({
    "kind": {"enum": ["unstructured", "block_sparse", "joint_sparse", "arbitrary_pattern"]},
    "k_min": {"type": "integer", "minimum": 0},
    "k_max": {"type": "integer", "minimum": 0},
    "blocks": _COUNT,
    "moves": {"type": "integer", "minimum": 0},
}, ["kind"])

_AMPLITUDE = _obj({
    "mode": {"enum": ["uniform_shell", "unit_gaussian"]},
    "lo": {"type": "number", "exclusiveMinimum": 0},
    "hi": {"type": "number", "exclusiveMinimum": 0},
})

_SYNTHETIC = _obj({
    "kind": {"const": "synthetic"},
    "m": _COUNT, "n": _COUNT, "l": _COUNT,
    "structure": _STRUCTURE,
    "amplitude": _AMPLITUDE,
    "noise_var": _NONNEG,
    "per_sample_matrix": {"type": "boolean"},
    "matrix": {"enum": ["gaussian", "identity"]},
    "count": _COUNT,
}, ["kind", "m", "n", "count"])

_SNR = {"oneOf": [{"type": "number"},
                  {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}]}

_RADAR = _obj({
    "kind": {"const": "radar"},
    "mt": _COUNT, "mr": _COUNT, "q": _COUNT,
    "n_a": _COUNT, "n_r": _COUNT, "n_d": _COUNT,
    "angles": {"type": "array", "items": {"type": "number"}, "minItems": 1},
    "spacing": {"type": "number", "exclusiveMinimum": 0},
    "sweeps": _COUNT,
    "target": _obj({"k_min": _COUNT, "k_max": _COUNT}),
    "snr_db": _SNR,
    "count": _COUNT,
}, ["kind", "count"])

_MODEL = _obj({
    "variant": {"enum": ["NW1", "NW2"]},
    "layers": _COUNT,
    "gamma_floor": {"type": "number", "exclusiveMinimum": 0},
    "gamma_cap": {"type": "number", "exclusiveMinimum": 0},
    "noise_floor": {"type": "number", "exclusiveMinimum": 0},
})

_TRAIN = _obj({
    "steps_per_phase": _COUNT,
    "batch_size": _COUNT,
    "optimizer": {"enum": ["adam", "sgd"]},
    "lr": {"type": "number", "exclusiveMinimum": 0},
    "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
    "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
    "eps": {"type": "number", "exclusiveMinimum": 0},
    "loss_floor_stop": _NONNEG,
    "grad_clip": _NONNEG,
    "checkpoint_every": {"type": "integer", "minimum": 0},
    "dataset": {"type": "string"},
    "resume": {"type": "boolean"},
})

_SOLVER = _obj({
    "name": {"enum": list(SOLVERS)},
    "options": {"type": "object"},
}, ["name"])

_EVAL = _obj({
    "sparsity": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
    "snr_db": {"type": "array", "items": {"oneOf": [{"type": "number"}, {"const": "inf"}]},
               "minItems": 1},
    "count": _COUNT,
    "solvers": {"type": "array", "items": _SOLVER, "minItems": 1},
    "model": {"type": "string"},
    "support_mode": {"enum": ["topk", "threshold"]},
}, ["count", "solvers"])

SCHEMA = _obj({
    "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
    "output_dir": {"type": "string"},
    "data": {"oneOf": [_SYNTHETIC, _RADAR]},
    "model": _MODEL,
    "train": _TRAIN,
    "eval": _EVAL,
}, ["data"])


class ConfigError(ValueError):
    """The configuration violates the schema or is inconsistent."""


def validate(doc: dict) -> dict:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    return doc


def load_config(path) -> dict:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    return validate(doc)


class Experiment:
    """Typed view of a validated configuration document."""

    def __init__(self, doc: dict, seed: int | None = None, output_dir: str | None = None):
        self.doc = validate(doc)
        self.seed = doc.get("seed", 0) if seed is None else seed
        self.output_dir = output_dir or doc.get("output_dir", "out")
        self.root = Rng(self.seed)
        self.data = doc["data"]
        self.model_doc = doc.get("model", {})
        self.train_doc = doc.get("train", {})
        self.eval_doc = doc.get("eval")
        try:
            self._build()
        except ValueError as exc:
            raise ConfigError(f"config error: {exc}") from None

    @property
    def is_radar(self) -> bool:
        return self.data["kind"] == "radar"

    def _build(self):
        d = self.data
        if self.is_radar:
            keys = ("mt", "mr", "q", "n_a", "n_r", "n_d", "angles", "spacing", "sweeps")
            self.radar = RadarConfig(**{k: d[k] for k in keys if k in d})
            self.target = TargetSpec(**d.get("target", {}))
            self.gen = None
        else:
            s = dict(d.get("structure", {"kind": "unstructured"}))
            structure = StructureSpec(**s)
            amplitude = AmplitudeSpec(**d.get("amplitude", {}))
            self.gen = GenConfig(m=d["m"], n=d["n"], l=d.get("l", 1), structure=structure,
                                 amplitude=amplitude, noise_var=d.get("noise_var", 0.0),
                                 per_sample_matrix=d.get("per_sample_matrix", False),
                                 count=d["count"], matrix=d.get("matrix", "gaussian"))
        t = self.train_doc
        m = self.model_doc
        self.variant = m.get("variant", "NW1")
        self.gamma_floor = m.get("gamma_floor", 1e-8)
        self.gamma_cap = m.get("gamma_cap", 1e4)
        self.noise_floor = m.get("noise_floor", TrainConfig.noise_floor)
        self.train_cfg = TrainConfig(
            layers=m.get("layers", 8),
            steps_per_phase=t.get("steps_per_phase", 2000),
            batch_size=t.get("batch_size", 128),
            optimizer=t.get("optimizer", "adam"),
            lr=t.get("lr", TrainConfig.lr),
            beta1=t.get("beta1", 0.9),
            beta2=t.get("beta2", 0.999),
            eps=t.get("eps", TrainConfig.eps),
            loss_floor_stop=t.get("loss_floor_stop", 0.0),
            grad_clip=t.get("grad_clip", 0.0),
            noise_floor=self.noise_floor,
            seed=self.seed,
        )
        if self.eval_doc is not None:
            e = self.eval_doc
            self.solvers = [self._solver(s) for s in e["solvers"]]
            sweep_key = "snr_db" if self.is_radar else "sparsity"
            other = "sparsity" if self.is_radar else "snr_db"
            if other in e:
                raise ValueError(f"eval.{other} does not apply to {self.data['kind']} data")
            if sweep_key not in e:
                raise ValueError(f"eval.{sweep_key} is required for {self.data['kind']} data")
            self.sweep = [float(v) for v in e[sweep_key]] if self.is_radar else e[sweep_key]
            if not self.is_radar:
                n = self.gen.n
                if any(k > n for k in self.sweep):
                    raise ValueError("sparsity level exceeds n")

    def _solver(self, entry):
        opts = dict(entry.get("options", {}))
        if entry["name"] == "lsbl":
            # a trained network is evaluated with the noise floor it was trained with
            opts.setdefault("noise_floor", self.noise_floor)
        return SolverSpec(entry["name"], opts)

    # -- data --------------------------------------------------------------

    def scene(self):
        return build_dictionary(self.radar)

    def radar_power(self, scene):
        return signal_power(scene, self.target, self.root.child("data", "power"))

    def training_data(self, lazy_ok=True):
        """Training dataset from the ``data`` stream (lazy for per-sample matrices)."""
        rng = self.root.child("data")
        if self.is_radar:
            scene = self.scene()
            snr = self.data.get("snr_db", [0.0, 30.0])
            return radar_dataset(scene, self.target, snr, self.data["count"], rng,
                                 self.radar_power(scene))
        if self.gen.per_sample_matrix and lazy_ok:
            return LazyDataset(self.gen, rng)
        return generate(self.gen, rng)
