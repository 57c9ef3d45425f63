"""Command-line experiment runner.

``lsbl generate | train | eval | dump-weights | radar`` with the shared flags
``--config``, ``--seed``, ``--serial`` and ``--out``.  Exit codes: 0 success,
2 configuration error, 3 numerical abort, 4 I/O or file-format error.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import os
import sys

from .config import ConfigError, Experiment, load_config
from .core import FactorizationFailed, ParseError
from .datagen import load_dataset, save_dataset, shared_matrix
from .experiments import EVAL_NOISE_FLOOR, SolverSpec, sweep_snr, sweep_sparsity, write_reports
from .network import load_model, save_model
from .train import TrainingAborted, load_checkpoint, train_layerwise

EXIT_OK, EXIT_SCHEMA, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _serial(enabled):
    if not enabled:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=1)


def _out(exp, name):
    os.makedirs(exp.output_dir, exist_ok=True)
    return os.path.join(exp.output_dir, name)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_generate(exp: Experiment, args) -> int:
    ds = exp.training_data(lazy_ok=False)
    path = _out(exp, "dataset.bin")
    save_dataset(ds, path)
    m, n, l = ds.dims
    kind = "radar" if exp.is_radar else exp.gen.structure.kind
    print(f"wrote {path}: M={m} N={n} L={l} count={ds.count} structure={kind} "
          f"shared_matrix={ds.shared_matrix}")
    return EXIT_OK


def _train(exp: Experiment, dataset):
    ckpt_dir = _out(exp, "checkpoints")
    resume = None
    if exp.train_doc.get("resume") and os.path.exists(os.path.join(ckpt_dir, "checkpoint.json")):
        resume = load_checkpoint(ckpt_dir)
        print(f"resuming after layer {resume[1] + 1} phase {resume[2]}")
    result = train_layerwise(dataset, exp.train_cfg, exp.variant, gamma_floor=exp.gamma_floor,
                             gamma_cap=exp.gamma_cap, log_path=_out(exp, "train_log.csv"),
                             checkpoint_dir=ckpt_dir,
                             checkpoint_every=exp.train_doc.get("checkpoint_every", 0),
                             resume=resume)
    path = _out(exp, "model.bin")
    save_model(result.model, path)
    losses = result.losses()
    tail = f", final batch loss {losses[-1]:.6g}" if losses.size else ""
    print(f"wrote {path}: {exp.variant}, {result.model.depth} layers{tail}")
    return result.model


def cmd_train(exp: Experiment, args) -> int:
    path = exp.train_doc.get("dataset")
    dataset = load_dataset(path) if path else exp.training_data()
    _train(exp, dataset)
    return EXIT_OK


def _models(exp, solvers, default_path):
    needed = {s.label for s in solvers if s.name == "lsbl"}
    if not needed:
        return {}
    path = exp.eval_doc.get("model", default_path)
    model = load_model(path)
    return {label: model for label in needed}


def cmd_eval(exp: Experiment, args) -> int:
    if exp.eval_doc is None:
        raise ConfigError("config has no eval section")
    mode = exp.eval_doc.get("support_mode", "topk")
    count = exp.eval_doc["count"]
    models = _models(exp, exp.solvers, _out(exp, "model.bin"))
    rng = exp.root.child("eval")
    if exp.is_radar:
        scene = exp.scene()
        reports = sweep_snr(scene, exp.target, exp.sweep, count, exp.solvers, rng, models,
                            exp.radar_power(scene), EVAL_NOISE_FLOOR, mode)
    else:
        a = None if exp.gen.per_sample_matrix else shared_matrix(exp.gen, exp.root.child("data"))
        reports = sweep_sparsity(exp.gen, exp.sweep, count, exp.solvers, rng, a, models,
                                 EVAL_NOISE_FLOOR, mode)
    path = _out(exp, "results.csv")
    write_reports(reports, path)
    print(f"wrote {path}: {len(reports)} rows")
    return EXIT_OK


def weight_header(model) -> list:
    nl = model.n * model.l
    phi = model.n if model.variant == "NW1" else nl
    return [f"sq[{i}]" for i in range(nl)] + [f"phi[{i}]" for i in range(phi)] + ["bias"]


def dump_weights(model, directory) -> list:
    """Write ``layer_XX.csv`` per layer: one row per output, weights then bias."""
    os.makedirs(directory, exist_ok=True)
    header = weight_header(model)
    paths = []
    for k, p in enumerate(model.layers, start=1):
        path = os.path.join(directory, f"layer_{k:02d}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row, bias in zip(p.w, p.b):
                w.writerow([repr(float(v)) for v in row] + [repr(float(bias))])
        paths.append(path)
    return paths


def cmd_dump_weights(exp_or_none, args) -> int:
    if args.model:
        path = args.model
        out = args.out or "out"
    else:
        path = _out(exp_or_none, "model.bin")
        out = exp_or_none.output_dir
    model = load_model(path)
    paths = dump_weights(model, os.path.join(out, "weights"))
    print(f"wrote {len(paths)} weight files to {os.path.join(out, 'weights')}")
    return EXIT_OK


def cmd_radar(exp: Experiment, args) -> int:
    if not exp.is_radar:
        raise ConfigError("radar command needs data.kind = 'radar'")
    if exp.eval_doc is None:
        raise ConfigError("config has no eval section")
    solvers = list(exp.solvers)
    if not any(s.name == "mmse" for s in solvers):
        solvers.append(SolverSpec("mmse", {"prior_var": 0.5}))
    models = {}
    if any(s.name == "lsbl" for s in solvers):
        if "model" in exp.eval_doc:
            models = _models(exp, solvers, None)
        else:
            model = _train(exp, exp.training_data())
            models = {s.label: model for s in solvers if s.name == "lsbl"}
    scene = exp.scene()
    reports = sweep_snr(scene, exp.target, exp.sweep, exp.eval_doc["count"], solvers,
                        exp.root.child("eval"), models, exp.radar_power(scene), EVAL_NOISE_FLOOR,
                        exp.eval_doc.get("support_mode", "topk"))
    path = _out(exp, "radar_results.csv")
    write_reports(reports, path)
    print(f"wrote {path}: {len(reports)} rows")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "dump-weights": cmd_dump_weights,
    "radar": cmd_radar,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lsbl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "dump-weights", help="JSON experiment config")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--serial", action="store_true", help="single-threaded, bit-reproducible run")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        if name == "dump-weights":
            p.add_argument("--model", help="model file (default: <out>/model.bin)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        exp = None
        if args.config:
            exp = Experiment(load_config(args.config), seed=args.seed, output_dir=args.out)
        elif args.command != "dump-weights" or not args.model:
            raise ConfigError("--config is required")
        with _serial(args.serial):
            return COMMANDS[args.command](exp, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (TrainingAborted, FactorizationFailed, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ParseError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
