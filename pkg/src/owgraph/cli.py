"""Command-line entry points: run, sweep, gen, eval.

Every experiment-config field is exposed as a flag named after its dotted
key; flag values override the config file. No environment variables are
consulted.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .config import FIELDS, SWEEP_PARAMS, ConfigError, load_config
from .evaluation import open_world_accuracy
from .graph import load_graph
from .harness import RunError, generate_dataset, run, run_sweep, sweep_table


def _add_config_flags(parser):
    parser.add_argument("--config", metavar="FILE", default=None,
                        help="flat key = value config file")
    for key in FIELDS:
        parser.add_argument(f"--{key}", metavar="VALUE", dest=key, default=None,
                            help=f"override config key {key}")


def _collect_overrides(args) -> dict[str, str]:
    values = vars(args)
    return {key: values[key] for key in FIELDS if values.get(key) is not None}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="owgraph",
        description="Open-world graph node classification with novel-class "
                    "discovery.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    _add_config_flags(p_run)
    p_run.add_argument("--output", metavar="DIR", default=None,
                       help="write report, losses, pseudo-labels, edges, "
                            "checkpoint here")

    p_sweep = sub.add_parser("sweep", help="sweep one hyperparameter")
    _add_config_flags(p_sweep)
    p_sweep.add_argument("--param", required=True, choices=sorted(SWEEP_PARAMS),
                         help="hyperparameter to sweep")
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated values")
    p_sweep.add_argument("--output", metavar="DIR", default=None)

    p_gen = sub.add_parser("gen", help="emit a synthetic dataset directory")
    _add_config_flags(p_gen)
    p_gen.add_argument("--output", metavar="DIR", required=True)

    p_eval = sub.add_parser("eval", help="score a predictions file")
    p_eval.add_argument("--predictions", required=True,
                        help="csv of node_id,group_id rows")
    p_eval.add_argument("--dataset", required=True,
                        help="dataset directory with ground-truth labels")
    p_eval.add_argument("--known", required=True,
                        help="comma-separated known class ids")
    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config, _collect_overrides(args))
    report = run(cfg, args.output)
    print("\n".join(report.lines()))
    return 0


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config, _collect_overrides(args))
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    reports = run_sweep(cfg, args.param, values, args.output)
    print(sweep_table(args.param, values, reports))
    return 0


def _cmd_gen(args) -> int:
    cfg = load_config(args.config, _collect_overrides(args))
    g = generate_dataset(cfg, args.output)
    print(f"wrote {g.node_count} nodes, {len(g.edges)} edges to {args.output}")
    return 0


def _cmd_eval(args) -> int:
    g = load_graph(args.dataset)
    known = frozenset(int(c) for c in args.known.split(",") if c.strip())
    rows = np.loadtxt(args.predictions, delimiter=",", dtype=np.int64, ndmin=2)
    nodes, preds = rows[:, 0], rows[:, 1]
    if np.any(~g.label_mask[nodes]):
        print("error: some predicted nodes have no ground-truth label",
              file=sys.stderr)
        return 1
    metrics = open_world_accuracy(preds, g.labels[nodes], known)
    print(f"acc_all = {metrics.acc_all:.6f}")
    print(f"acc_known = {metrics.acc_known:.6f}")
    print(f"acc_novel = {metrics.acc_novel:.6f}")
    print(f"predicted_class_count = {metrics.predicted_class_count}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"run": _cmd_run, "sweep": _cmd_sweep,
                "gen": _cmd_gen, "eval": _cmd_eval}
    try:
        return handlers[args.command](args)
    except (ConfigError, RunError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
