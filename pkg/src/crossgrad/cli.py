"""Command line front end.

Subcommands: train, topo-inspect, partition-inspect, qp-check, version.
Each prints a single-line JSON summary on stdout; errors go to stderr.
Exit codes: 0 success, 1 bad input (config, file, arguments), 2 runtime
failure during training, 3 QP check outside tolerance.
"""

import argparse
import json
import sys

import numpy as np

from . import __version__
from . import data as datamod
from .qp import GradientStack, project_gradient
from .seeding import subseed
from .simulate import (ConfigError, ExperimentConfig, load_config,
                       load_experiment_data, run_experiment,
                       write_metrics_csv, _TAG_PARTITION)
from .topology import TopologyError, build_topology, n_links, spectral_report


def _emit(payload: dict) -> None:
    print(json.dumps(payload, separators=(", ", ": ")))


def _fail(message: str) -> None:
    print(f"error: {message}", file=sys.stderr)


def cmd_train(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = ExperimentConfig(**{**cfg.__dict__, "master_seed": args.seed})
        records = run_experiment(cfg, n_threads=args.threads)
    except ConfigError as err:
        _fail(str(err))
        return 1
    except Exception as err:
        _fail(f"training failed: {err}")
        return 2
    write_metrics_csv(args.out, records)
    final = records[-1]
    accs = [r.test_accuracy for r in records if r.test_accuracy is not None]
    _emit({
        "final_test_accuracy": accs[-1] if accs else None,
        "total_bytes": final.cumulative_bytes,
        "rounds": final.round,
        "metrics_path": str(args.out),
    })
    return 0


def cmd_topo_inspect(args) -> int:
    try:
        mixing = build_topology(args.kind, args.n)
    except TopologyError as err:
        _fail(str(err))
        return 1
    report = spectral_report(mixing)
    _emit({
        "kind": mixing.kind,
        "n_agents": mixing.n_agents,
        "weights": mixing.weights.tolist(),
        "n_links": n_links(mixing),
        "eigenvalues": report.eigenvalues.tolist(),
        "rho_sqrt": report.rho_sqrt,
    })
    return 0


def cmd_partition_inspect(args) -> int:
    try:
        cfg = load_config(args.config)
        train, _ = load_experiment_data(cfg)
        part = datamod.partition(train, cfg.n_agents, cfg.partition_mode,
                                 subseed(cfg.master_seed, _TAG_PARTITION))
    except (ConfigError, datamod.DataError) as err:
        _fail(str(err))
        return 1
    labels = train.labels
    _emit({
        "mode": part.mode,
        "n_agents": part.n_agents,
        "sizes": part.sizes(),
        "classes_per_agent": [sorted(int(c) for c in np.unique(labels[idx]))
                              for idx in part.assignments],
    })
    return 0


def cmd_qp_check(args) -> int:
    try:
        with open(args.instance) as fh:
            raw = json.load(fh)
        g = np.asarray(raw["g"], dtype=np.float64)
        G = np.asarray(raw.get("G", []), dtype=np.float64)
        if G.size == 0:
            G = np.zeros((0, g.shape[0] if g.ndim == 1 else 0))
        stack = GradientStack(g=g, G=G)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as err:
        _fail(f"bad instance: {err}")
        return 1
    z, report = project_gradient(stack, tol=args.tol, max_iter=args.max_iter)
    _emit({
        "z": z.tolist(),
        "primal_feasibility": report.primal_feasibility,
        "dual_feasibility": report.dual_feasibility,
        "complementary_slackness": report.complementary_slackness,
        "stationarity": report.stationarity,
        "fast_path": report.fast_path,
        "iterations": report.iterations,
        "within_tolerance": report.within(args.tol),
    })
    return 0 if report.within(args.tol) else 3


def cmd_version(args) -> int:
    _emit({"name": "crossgrad", "version": __version__})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossgrad",
        description="Decentralized learning simulator (cross-gradient aggregation)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a configured experiment")
    p.add_argument("--config", required=True, help="experiment JSON path")
    p.add_argument("--out", default="metrics.csv", help="metrics CSV output path")
    p.add_argument("--seed", type=int, default=None, help="override master_seed")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads per round (never changes results)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("topo-inspect", help="print a mixing matrix and its spectrum")
    p.add_argument("kind", help="full, ring, or bipartite")
    p.add_argument("n", type=int, help="number of agents")
    p.set_defaults(func=cmd_topo_inspect)

    p = sub.add_parser("partition-inspect", help="show the agent data split of a config")
    p.add_argument("--config", required=True, help="experiment JSON path")
    p.set_defaults(func=cmd_partition_inspect)

    p = sub.add_parser("qp-check", help="project one instance and report KKT residuals")
    p.add_argument("instance", help="JSON file with fields g and G")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=100_000)
    p.set_defaults(func=cmd_qp_check)

    p = sub.add_parser("version", help="print package version")
    p.set_defaults(func=cmd_version)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
