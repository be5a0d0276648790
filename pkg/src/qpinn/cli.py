"""Command-line entry point: ``qpinn {geometry,train,transfer,infer,compare}``.

Exit codes: 0 success, 2 configuration error, 3 training diverged, 4 I/O error.
The environment variable ``QPINN_NUM_THREADS`` caps BLAS threads.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import yaml

from .export import infer, write_vtk
from .geometry import CloudFormatError, MixerSpec, generate_mixer, load_csv, save_csv
from .network import load_checkpoint
from .physics import FluidParams
from .trainer import (
    DivergenceError,
    TrainConfig,
    compare,
    load_run,
    train_classical,
    train_hybrid,
    transfer_learn,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4

log = logging.getLogger("qpinn")


class ConfigError(ValueError):
    pass


def default_config() -> dict:
    text = resources.files("qpinn").joinpath("default_config.yaml").read_text()
    return yaml.safe_load(text)


def _merge(base: dict, update: dict, path: str = "") -> dict:
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown configuration key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be a section")
            _merge(base[key], value, where + ".")
        else:
            base[key] = value
    return base


def _apply_override(cfg: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like section.key=value")
    dotted, raw = item.split("=", 1)
    keys = dotted.split(".")
    nested = yaml.safe_load(raw)
    for k in reversed(keys):
        nested = {k: nested}
    _merge(cfg, nested)


def load_config(path=None, overrides=()) -> dict:
    cfg = default_config()
    if path is not None:
        with open(path) as fh:
            user = yaml.safe_load(fh) or {}
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        _merge(cfg, user)
    for item in overrides:
        _apply_override(cfg, item)
    return cfg


def mixer_spec(cfg: dict) -> MixerSpec:
    g = {k: v for k, v in cfg["geometry"].items() if k != "csv"}
    return MixerSpec(**{k: float(v) for k, v in g.items()})


def train_config(cfg: dict, variant=None) -> TrainConfig:
    t = cfg["training"]
    variant = variant or cfg["variant"]
    geometry = cfg["geometry"]["csv"] or mixer_spec(cfg)
    if variant == "hybrid":
        adam_epochs, lbfgs_epochs, batch = cfg["hybrid"]["epochs"], 0, cfg["hybrid"]["batch_size"]
    else:
        adam_epochs, lbfgs_epochs, batch = t["adam_epochs"], t["lbfgs_epochs"], t["batch_size"]
    return TrainConfig(
        variant=variant,
        adam_epochs=int(adam_epochs),
        lbfgs_epochs=int(lbfgs_epochs),
        batch_size=None if batch is None else int(batch),
        seed=int(cfg["seed"]),
        geometry=geometry,
        fluid=FluidParams(float(cfg["fluid"]["nu"]), float(cfg["fluid"]["rho"])),
        loss_weights=tuple(t["loss_weights"]),
        lr=float(t["lr"]),
        lr_decay=float(t["lr_decay"]),
        lbfgs_history=int(t["lbfgs_history"]),
        deterministic=bool(cfg["deterministic"]),
        checkpoint_every=int(t["checkpoint_every"]),
    )


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML configuration file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a configuration value, e.g. training.lr=0.003")
    p.add_argument("--seed", type=int)
    p.add_argument("--deterministic", action="store_true", help="single-threaded, fixed reduction order")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qpinn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("geometry", help="generate a Y-mixer point cloud CSV")
    _common(g)
    for name in ("alpha", "radius", "inlet-length", "outlet-length", "grid-step", "v-max", "p-out"):
        g.add_argument(f"--{name}", type=float)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train a classical or hybrid PINN")
    _common(t)
    t.add_argument("--variant", choices=("classical", "hybrid"))
    t.add_argument("--trunk", help="classical checkpoint used as the hybrid trunk")
    t.add_argument("--out", required=True, help="run directory")

    tr = sub.add_parser("transfer", help="chain L-BFGS fine-tuning over mixer angles")
    _common(tr)
    tr.add_argument("--base", required=True, help="starting checkpoint")
    tr.add_argument("--alphas", help="comma-separated angles in degrees")
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--out", required=True)

    inf = sub.add_parser("infer", help="predict fields and write a VTK file")
    _common(inf)
    inf.add_argument("--checkpoint", required=True)
    inf.add_argument("--geometry", help="point cloud CSV (default: mixer from config)")
    inf.add_argument("--out", required=True, help="output .vtk path")

    c = sub.add_parser("compare", help="relative final-loss difference of two runs")
    c.add_argument("run_a")
    c.add_argument("run_b")
    c.add_argument("--out", help="write the comparison as JSON")
    c.add_argument("-v", "--verbose", action="store_true")
    return parser


def _config_from_args(args) -> dict:
    cfg = load_config(args.config, args.set)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.deterministic:
        cfg["deterministic"] = True
    return cfg


def cmd_geometry(args) -> int:
    cfg = _config_from_args(args)
    for name in ("alpha", "radius", "inlet_length", "outlet_length", "grid_step", "v_max", "p_out"):
        value = getattr(args, name)
        if value is not None:
            cfg["geometry"][name] = value
    cloud = generate_mixer(mixer_spec(cfg))
    save_csv(cloud, args.out)
    print(f"wrote {len(cloud)} points to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    if args.trunk:
        cfg["hybrid"]["trunk_checkpoint"] = args.trunk
    variant = args.variant or cfg["variant"]
    config = train_config(cfg, variant)
    if variant == "hybrid":
        trunk = cfg["hybrid"]["trunk_checkpoint"]
        if not trunk:
            raise ConfigError("hybrid training needs --trunk or hybrid.trunk_checkpoint")
        report = train_hybrid(config, load_checkpoint(trunk), args.out)
    else:
        report = train_classical(config, args.out)
    print(f"{report.epochs} epochs, final loss {report.final.total:.6g}; checkpoint {report.checkpoint_path}")
    return EXIT_OK


def cmd_transfer(args) -> int:
    cfg = _config_from_args(args)
    alphas = cfg["transfer"]["alphas"]
    if args.alphas:
        alphas = [float(a) for a in args.alphas.split(",")]
    epochs = args.epochs if args.epochs is not None else int(cfg["transfer"]["epochs"])
    base = load_checkpoint(args.base)
    config = train_config(cfg, base.arch.variant)
    reports = transfer_learn(base, alphas, epochs, config, args.out)
    for alpha, r in zip(alphas, reports):
        print(f"alpha={alpha:g}: final loss {r.final.total:.6g} -> {r.checkpoint_path}")
    return EXIT_OK


def cmd_infer(args) -> int:
    cfg = _config_from_args(args)
    cloud = load_csv(args.geometry) if args.geometry else generate_mixer(mixer_spec(cfg))
    snap = infer(args.checkpoint, cloud)
    write_vtk(snap, args.out)
    print(f"wrote {len(snap)} points to {args.out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    a, b = load_run(args.run_a), load_run(args.run_b)
    result = compare(a, b)
    print(f"final loss A={result.final_a:.6g} B={result.final_b:.6g}")
    print(f"relative difference (A - B) / A = {100.0 * result.relative_difference:.2f}%")
    for flag, name in ((result.truncated_a, "A"), (result.truncated_b, "B")):
        if flag:
            print(f"note: run {name} has a non-finite tail; last finite epoch used")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(result.as_dict(), fh, indent=2)
    return EXIT_OK


COMMANDS = {
    "geometry": cmd_geometry,
    "train": cmd_train,
    "transfer": cmd_transfer,
    "infer": cmd_infer,
    "compare": cmd_compare,
}


def _limit_threads():
    n = os.environ.get("QPINN_NUM_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(n))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limiter = _limit_threads()
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError, TypeError, yaml.YAMLError) as exc:
        if isinstance(exc, CloudFormatError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
