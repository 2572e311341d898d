"""Command-line entry point.

Verbs: solve | twin | assimilate | train | checkgrad | gen-dataset.
Exit codes: 0 success, 2 solver non-convergence, 3 validation failure.
"""

from __future__ import annotations

import argparse
import sys

from ..plants.state import StateError
from ..solver import NonConvergedError
from .commands import (cmd_assimilate, cmd_backward, cmd_checkgrad,
                       cmd_gen_dataset, cmd_solve, cmd_train, cmd_twin)
from .config import ConfigError, load_config


def build_parser():
    p = argparse.ArgumentParser(prog="fvgrad",
                                description="differentiable finite-volume "
                                            "solver experiments")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="experiment config file")
        sp.add_argument("--out", required=True, help="output directory")

    common(sub.add_parser("solve", help="converge the configured plant"))
    common(sub.add_parser("twin", help="generate synthetic truth and observations"))
    common(sub.add_parser("assimilate", help="recover correction parameters"))
    sp = sub.add_parser("train", help="train the closure on a dataset")
    common(sp)
    sp.add_argument("--data", required=True, help="dataset directory")
    common(sub.add_parser("checkgrad", help="adjoint-vs-FD gradient report"))
    sp = sub.add_parser("backward", help="adjoint gradient for a state cotangent")
    common(sp)
    sp.add_argument("--cotangent", required=True,
                    help="field dump holding the interior state cotangent")
    sp = sub.add_parser("gen-dataset", help="generate converged flow samples")
    common(sp)
    sp.add_argument("--n", type=int, default=8, help="number of parameter draws")
    sp.add_argument("--seed", type=int, default=None,
                    help="override the config seed for the draws")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        conf = load_config(args.config)
        if args.command == "solve":
            rc = cmd_solve(conf, args.out)
        elif args.command == "twin":
            rc = cmd_twin(conf, args.out)
        elif args.command == "assimilate":
            rc = cmd_assimilate(conf, args.out)
        elif args.command == "train":
            rc = cmd_train(conf, args.out, args.data)
        elif args.command == "checkgrad":
            rc = cmd_checkgrad(conf, args.out)
        elif args.command == "backward":
            rc = cmd_backward(conf, args.out, args.cotangent)
        elif args.command == "gen-dataset":
            rc = cmd_gen_dataset(conf, args.out, args.n, seed=args.seed)
        else:  # pragma: no cover
            rc = 3
    except (ConfigError, StateError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except NonConvergedError as e:
        print(f"solver did not converge: {e}", file=sys.stderr)
        return 2
    return rc


if __name__ == "__main__":
    sys.exit(main())
