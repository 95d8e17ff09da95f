"""Command-line entry point: run experiments, sweeps, inspect checkpoints."""

from __future__ import annotations

import argparse
import struct
import sys

import numpy as np

from . import nn
from .config import ALGORITHMS, ConfigError, ExperimentConfig, load_config_file
from .harness import SWEEP_AXES, run_experiment, summarize_tail, sweep


def _load_cfg(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config:
        cfg = load_config_file(args.config, cfg)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.algo is not None:
        cfg.algorithm = args.algo
    if args.epochs is not None:
        cfg.epochs = args.epochs
    return cfg


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="config file (key = value lines)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--algo", choices=ALGORITHMS, help="algorithm to run")
    p.add_argument("--epochs", type=int, help="number of epochs")
    p.add_argument("--out", required=True, help="output directory")


def cmd_run(args) -> int:
    cfg = _load_cfg(args)
    result = run_experiment(cfg, args.out)
    tail = summarize_tail(result.metrics)
    print(f"algorithm={cfg.algorithm} seed={cfg.seed} epochs={cfg.epochs}")
    print(f"final-10% capacity: {tail['capacity_bps'] / 1e6:.3f} Mbps "
          f"({tail['capacity_bps_hz']:.3f} bps/Hz)")
    print(f"final-10% satisfied rate: {tail['satisfied_rate']:.3f}")
    print(f"final-10% mean reward: {tail['mean_reward']:.3f}")
    print(f"wrote {args.out}/metrics.csv")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    values: list = args.values.split(",")
    if args.axis == "K":
        values = [int(v) for v in values]
    elif args.axis == "gamma_o":
        values = [float(v) for v in values]
    algos = args.algos.split(",") if args.algos else None
    rows = sweep(cfg, args.axis, values, algos, args.out)
    for r in rows:
        print(f"{r['algorithm']:>12} {args.axis}={r['value']}: "
              f"capacity {r['capacity_bps'] / 1e6:.3f} Mbps, "
              f"satisfied {r['satisfied_rate']:.3f}")
    print(f"wrote {args.out}/summary.csv")
    return 0


def cmd_inspect(args) -> int:
    with open(args.checkpoint, "rb") as fh:
        data = fh.read()
    footer = 4 + struct.calcsize("<QQQd")
    counters = None
    try:
        net = nn.deserialize(data)
    except nn.ModelFormatError:
        if len(data) > footer and data[-footer:-footer + 4] == b"VXAG":
            net = nn.deserialize(data[:-footer])
            counters = struct.unpack("<QQQd", data[-footer + 4:])
        else:
            raise
    print(f"layer sizes: {net.layer_sizes}")
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        print(f"layer {i}: weights {w.shape} "
              f"mean {w.mean():+.4e} std {w.std():.4e} "
              f"min {w.min():+.4e} max {w.max():+.4e}; "
              f"bias {b.shape} mean {b.mean():+.4e}")
    total = sum(p.size for p in net.parameters())
    print(f"parameters: {total}")
    if counters:
        step, store, train, eps = counters
        print(f"agent counters: steps {step}, stored {store}, "
              f"train steps {train}, epsilon {eps:.4f}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="v2xsim",
        description="Cellular V2X mode-selection / resource-allocation simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    _add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a parameter sweep")
    _add_common(p_sweep)
    p_sweep.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated sweep values")
    p_sweep.add_argument("--algos",
                         help="comma-separated algorithms (K/gamma_o sweeps)")
    p_sweep.set_defaults(func=cmd_sweep)

    p_inspect = sub.add_parser("inspect-model", help="print checkpoint stats")
    p_inspect.add_argument("checkpoint")
    p_inspect.set_defaults(func=cmd_inspect)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, nn.ModelFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
