"""Command line entry point: ``halp run|grid|sweep-kappa|quantize-demo``."""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace

import numpy as np

from .fixed_point import LPRepr
from .harness import (
    ExperimentSpec, GridSpec, conditioning_sweep, degradation_threshold, grid_search,
    run_experiment,
)
from .optimizers import ALGORITHMS

_CONFIG_FLAGS = {"algo": "algorithm", "bits": "bits", "delta": "delta", "mu": "mu",
                 "alpha": "alpha", "epochs": "epochs", "inner": "inner", "option": "option",
                 "seed": "seed"}


def parse_dataset(text: str) -> dict:
    """``regression:n=1000,d=100`` / ``path.csv`` / ``images.idx[,labels.idx]``."""
    if text.endswith(".csv"):
        return {"csv": text}
    if ".idx" in text or text.endswith(".gz"):
        parts = text.split(",")
        entry = {"idx_images": parts[0]}
        if len(parts) > 1:
            entry["idx_labels"] = parts[1]
        return entry
    name, _, rest = text.partition(":")
    entry = {"generator": name}
    for item in filter(None, rest.split(",")):
        k, _, v = item.partition("=")
        entry[k] = json.loads(v)
    return entry


def parse_grid(text: str) -> dict:
    """``alpha=1e-3,1e-2;mu=1,3`` -> ``{"alpha": [...], "mu": [...]}``."""
    grid = {}
    for part in filter(None, text.split(";")):
        k, _, vals = part.partition("=")
        grid[k.strip()] = [json.loads(v) for v in vals.split(",")]
    return grid


def _spec_from_args(args) -> ExperimentSpec:
    overrides = {field: getattr(args, flag) for flag, field in _CONFIG_FLAGS.items()
                 if getattr(args, flag) is not None}
    if args.spec:
        spec = ExperimentSpec.from_json(args.spec)
        if overrides:
            spec.configs = [replace(c, **overrides) for c in spec.configs]
    else:
        if not args.dataset:
            raise SystemExit("either a spec file or --dataset is required")
        spec = ExperimentSpec(dataset={}, configs=[overrides])
    if args.dataset:
        spec.dataset = parse_dataset(args.dataset)
    if args.seed is not None:
        spec.seeds = [args.seed]
    if args.out:
        spec.output = args.out
    return spec


def _add_config_flags(p):
    p.add_argument("spec", nargs="?", help="JSON experiment spec")
    p.add_argument("--algo", choices=ALGORITHMS)
    p.add_argument("--bits", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--epochs", type=int, help="outer iterations (not data passes)")
    p.add_argument("--inner", type=int, help="inner steps per outer iteration")
    p.add_argument("--option", choices=("I", "II"))
    p.add_argument("--seed", type=int)
    p.add_argument("--dataset")
    p.add_argument("--out")


def cmd_run(args):
    spec = _spec_from_args(args)
    manifest = run_experiment(spec)
    for r in manifest["runs"]:
        print(f"{r['file']}\t{r['status']}\tgrad_norm={r['final_grad_norm']!r}")
    return 0


def cmd_grid(args):
    spec = _spec_from_args(args)
    if not args.grid:
        raise SystemExit("--grid is required, e.g. --grid 'alpha=1e-3,1e-2'")
    result = grid_search(spec, GridSpec(parse_grid(args.grid), args.metric))
    for row in result.table:
        print("\t".join(f"{k}={v}" for k, v in row.items()))
    print(f"best: {json.dumps(result.best.to_dict())} score={result.best_score!r}")
    return 0


def cmd_sweep(args):
    kappas = [float(k) for k in args.kappas.split(",")]
    bits = [int(b) for b in args.bits_list.split(",")]
    rows = conditioning_sweep(kappas, bits, seed=args.seed, inner=args.inner,
                              epochs=args.epochs, output=args.out)
    for r in rows:
        print(f"kappa={r['kappa']:g}\t{r['algorithm']}-{r['bits']}\t"
              f"grad_norm={r['grad_norm']:.3e}\talpha={r['alpha']:.3g}\tmu={r['mu']:.3g}")
    for b in bits:
        print(f"threshold[{b}-bit] = {degradation_threshold(rows, b)}")
    return 0


def cmd_quantize_demo(args):
    rep = LPRepr(args.delta, args.bits)
    print(f"representation delta={rep.delta!r} bits={rep.bits}: "
          f"{len(rep)} values in [{rep.min_value!r}, {rep.max_value!r}]")
    if rep.bits <= 6:
        print("lattice:", " ".join(f"{v:g}" for v in rep.lattice()))
    for x in args.x:
        c = x / rep.delta
        if c > rep.hi or c < rep.lo:
            code = rep.hi if c > rep.hi else rep.lo
            print(f"x={x:g}: saturates to {code * rep.delta:g} (code {code})")
            continue
        lo = math.floor(c)
        p_up = c - lo
        if p_up == 0:
            print(f"x={x:g}: on lattice, code {lo}")
        else:
            print(f"x={x:g}: {lo * rep.delta:g} (code {lo}) w.p. {1 - p_up:.4f}, "
                  f"{(lo + 1) * rep.delta:g} (code {lo + 1}) w.p. {p_up:.4f}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="halp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment and write CSV traces")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("grid", help="grid-search hyperparameters")
    _add_config_flags(p)
    p.add_argument("--grid", help="e.g. 'alpha=1e-3,1e-2;mu=1,3'")
    p.add_argument("--metric", default="grad_norm", choices=("grad_norm", "loss"))
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("sweep-kappa", help="conditioning sweep of SVRG vs HALP")
    p.add_argument("--kappas", default="1,4,16,64,256,1024")
    p.add_argument("--bits-list", default="16,8")
    p.add_argument("--inner", type=int, default=1000)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("quantize-demo", help="print a lattice and rounding probabilities")
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--bits", type=int, default=3)
    p.add_argument("x", type=float, nargs="*", default=[0.3, 1.7, -0.5, 10.0])
    p.set_defaults(func=cmd_quantize_demo)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    np.seterr(over="ignore", invalid="ignore")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
