"""``deltaflow`` command line.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import clustering as cl
from . import errors as em
from . import experiments as ex
from . import metrics, sbm
from .graph import ErrorVector, GraphError, load_edge_list, write_edge_list
from .partition import Partition, read_partition

log = logging.getLogger("deltaflow")

EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 2, 3, 4


class ConfigError(Exception):
    pass


class InputError(Exception):
    pass


# ---------------------------------------------------------------- parsing


def _common(parser: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    g = parser.add_argument_group("global options")
    g.add_argument("--config", default=S, help="flat key = value file; command-line flags override it")
    g.add_argument("--seed", type=int, default=S, help="master seed (default 0)")
    g.add_argument("--threads", type=int, default=S, help="worker threads (default 1)")
    g.add_argument("--out-dir", default=S, help="output directory (default .)")
    g.add_argument("--cov-mode", choices=("exact", "linearized"), default=S)
    g.add_argument("--t-min", type=float, default=S)
    g.add_argument("--t-max", type=float, default=S)
    g.add_argument("--t-count", type=int, default=S)
    g.add_argument("--t-log", action=argparse.BooleanOptionalAction, default=S, help="log-spaced grid (default)")
    g.add_argument("--n-runs", type=int, default=S, help="Louvain runs per Markov time (default 50)")
    g.add_argument("-v", "--verbose", action="count", default=S)


GLOBAL_DEFAULTS = {
    "config": None,
    "seed": 0,
    "threads": 1,
    "out_dir": ".",
    "cov_mode": "exact",
    "t_min": 1e-2,
    "t_max": 1e2,
    "t_count": 96,
    "t_log": True,
    "n_runs": 50,
    "verbose": 0,
}


def _graph_opts(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--graph", required=required, help="edge list 'src dst [weight]'")
    p.add_argument("--undirected", action="store_true", help="treat each line as a reciprocal pair")


def _sweep_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--errors", help="CSV node,epsilon[,epsilon_in]")
    p.add_argument("--p0", choices=("uniform", "stationary"), default="uniform", help="start distribution in exact mode")
    p.add_argument("--orphans", choices=("role", "majority", "separate"), default="role")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deltaflow", description="Flow Stability and ΔFlow Stability community detection.")
    _common(parser)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("cluster", help="Markov-time sweep on one graph")
    _common(p)
    _graph_opts(p)
    _sweep_opts(p)
    p.add_argument("--method", choices=ex.METHODS, default="fs")
    p.add_argument("--ground-truth", help="partition JSON; adds an nmi column to nmi.csv")
    p.add_argument("--roles-definition", choices=("boundary", "internal"), default="boundary")

    p = sub.add_parser("recovery", help="NMI vs a reference partition under random edge removal")
    _common(p)
    _graph_opts(p)
    _sweep_opts(p)
    p.add_argument("--ground-truth", required=True, help="reference partition JSON")
    p.add_argument("--r-values", default="0,0.05,0.1,0.15,0.2,0.25,0.3,0.35", help="comma-separated removal fractions")
    p.add_argument("--methods", default="fs,delta", help="comma-separated subset of fs,delta,symmetric")

    p = sub.add_parser("sbm-gen", help="double source-core-sink block model")
    _common(p)
    p.add_argument("--p-in", type=float, required=True)
    p.add_argument("--p-out", type=float, required=True)
    p.add_argument("--p-core", type=float, default=0.4)
    p.add_argument("--coupling", type=float, help="default p_out/4")
    p.add_argument("--n-total", type=int, default=200)
    p.add_argument("--block-sizes", help="six comma-separated sizes")

    p = sub.add_parser("remove-edges", help="drop a random fraction of edges and record the lost out-weight")
    _common(p)
    _graph_opts(p)
    p.add_argument("--fraction", type=float, required=True)

    p = sub.add_parser("estimate-errors", help="errors from per-node deletion statistics")
    _common(p)
    _graph_opts(p)
    p.add_argument("--stats", required=True, help="CSV node,n_deleted,n_observed,n_with_links")

    p = sub.add_parser("compare", help="NMI, NVI and RBO between two partitions")
    _common(p)
    p.add_argument("--a", required=True, help="first partition JSON")
    p.add_argument("--b", required=True, help="second partition JSON")
    _graph_opts(p, required=False)
    p.add_argument("--top-k", type=int, default=3, help="largest clusters paired by size rank for RBO")
    p.add_argument("--rbo-p", type=float, default=0.9)
    p.add_argument("--katz-damping", type=float)
    p.add_argument("--exclude-largest", type=int, default=0, help="drop nodes of the N largest clusters of --a")

    p = sub.add_parser("roles", help="in-balance and role of every cluster")
    _common(p)
    _graph_opts(p)
    p.add_argument("--partition", required=True)
    p.add_argument("--definition", choices=("boundary", "internal"), default="boundary")

    p = sub.add_parser("nvi-heatmap", help="pairwise NVI between partition files")
    _common(p)
    p.add_argument("--partitions", nargs="+", required=True, help="partition JSONs, or a directory of them")
    return parser


def _config_tokens(path: str, parser: argparse.ArgumentParser, command: str) -> list[str]:
    """Turn ``key = value`` lines into command-line tokens placed before the user's own."""
    sub = parser._subparsers._group_actions[0].choices[command]  # noqa: SLF001
    known = {}
    for action in sub._actions:  # noqa: SLF001
        for opt in action.option_strings:
            if opt.startswith("--"):
                known[opt[2:]] = action
    tokens: list[str] = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("_", "-")
        if key == "config" or key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r} for {command}")
        action = known[key]
        if isinstance(action, argparse.BooleanOptionalAction) or action.nargs == 0:
            truth = value.lower()
            if truth not in ("true", "false", "1", "0", "yes", "no"):
                raise ConfigError(f"{path}:{lineno}: {key} expects true/false")
            on = truth in ("true", "1", "yes")
            if isinstance(action, argparse.BooleanOptionalAction):
                tokens.append(f"--{key}" if on else f"--no-{key}")
            elif on:
                tokens.append(f"--{key}")
        elif action.nargs in ("+", "*"):
            tokens += [f"--{key}", *value.split()]
        else:
            tokens += [f"--{key}", value]
    return tokens


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if a in COMMANDS), None)
    if known.config and command is not None:
        pos = argv.index(command)
        tokens = _config_tokens(known.config, parser, command)
        argv = [command, *tokens, *argv[:pos], *argv[pos + 1 :]]
    args = parser.parse_args(argv)
    for k, v in GLOBAL_DEFAULTS.items():
        if not hasattr(args, k):
            setattr(args, k, v)
    if args.n_runs < 1:
        raise ConfigError("--n-runs must be at least 1")
    if args.threads < 1:
        raise ConfigError("--threads must be at least 1")
    return args


def time_grid(args) -> np.ndarray:
    if args.t_count < 1 or not 0 < args.t_min <= args.t_max:
        raise ConfigError("time grid needs 0 < t-min <= t-max and t-count >= 1")
    if args.t_count == 1:
        return np.array([args.t_min])
    if args.t_log:
        return cl.log_grid(args.t_min, args.t_max, args.t_count)
    return np.linspace(args.t_min, args.t_max, args.t_count)


# ---------------------------------------------------------------- input helpers


def _read(fn, *a, **kw):
    """Call a reader, mapping malformed input to an I/O failure."""
    try:
        return fn(*a, **kw)
    except (OSError, GraphError, json.JSONDecodeError, KeyError, UnicodeDecodeError) as exc:
        raise InputError(str(exc)) from exc
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def _partition_labels(path: str) -> list[str]:
    def labels():
        with open(path, encoding="utf-8") as fh:
            return list(json.load(fh)["clusters"])

    return _read(labels)


def _csv_nodes(path: str) -> list[str]:
    def nodes():
        with open(path, newline="", encoding="utf-8") as fh:
            return [row["node"] for row in csv.DictReader(fh)]

    return _read(nodes)


def _load_graph(args, extra=()):
    return _read(load_edge_list, args.graph, directed=not args.undirected, extra_labels=list(extra))


def _out(args) -> Path:
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create {out}: {exc}") from exc
    return out


def _errors_for(args, g, method: str):
    if method == "fs":
        return None
    if not args.errors:
        raise ConfigError(f"method {method} needs --errors")
    e = _read(em.read_errors, args.errors, g)
    if method == "symmetric" and e.eps_in is None:
        e = ErrorVector(e.eps_out, np.zeros(g.n_nodes))
    return e


# ---------------------------------------------------------------- commands


def cmd_cluster(args) -> int:
    extra = []
    if args.ground_truth:
        extra += _partition_labels(args.ground_truth)
    if args.errors:
        extra += _csv_nodes(args.errors)
    g = _load_graph(args, extra)
    e = _errors_for(args, g, args.method)
    times = time_grid(args)
    out = _out(args)
    res = cl.sweep(g, e, times, args.n_runs, args.method, args.cov_mode, args.seed, args.p0, args.orphans, args.threads)
    ex.write_sweep(res, g.labels, out)
    ex.write_heatmap(res, out / "nvi_heatmap.csv")
    if res.optimal is not None:
        ex.write_roles(g, res.optimal, out / "roles.csv", args.roles_definition)
    if args.ground_truth:
        truth, _ = _read(read_partition, args.ground_truth, g.labels)
        with open(out / "nmi.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "nmi"])
            for t, part in zip(res.times, res.partitions):
                w.writerow([ex.fmt(t), ex.fmt(metrics.nmi(part, truth)) if part is not None else "nan"])
    opt = res.optimal
    if opt is not None:
        log.info("optimal t=%g with %d clusters", res.times[res.optimal_index], opt.n_clusters)
    return 0


def _float_list(text: str, name: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"--{name} must be comma-separated numbers") from None


def cmd_recovery(args) -> int:
    g = _load_graph(args, _partition_labels(args.ground_truth))
    truth, _ = _read(read_partition, args.ground_truth, g.labels)
    if len(truth) != g.n_nodes:
        raise ConfigError("ground truth must assign every graph node")
    r_values = _float_list(args.r_values, "r-values")
    if not r_values or any(not 0 <= r < 1 for r in r_values):
        raise ConfigError("removal fractions must lie in [0, 1)")
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    bad = [m for m in methods if m not in ex.METHODS]
    if bad or not methods:
        raise ConfigError(f"unknown method(s): {', '.join(bad) or 'none given'}")
    grid = ex.recovery_grid(
        g, truth, r_values, time_grid(args), args.n_runs, args.seed, methods, args.cov_mode, args.p0, args.orphans, args.threads
    )
    ex.write_recovery(grid, _out(args))
    return 0


def cmd_sbm_gen(args) -> int:
    sizes = None
    if args.block_sizes:
        try:
            sizes = tuple(int(x) for x in args.block_sizes.split(","))
        except ValueError:
            raise ConfigError("--block-sizes must be six integers") from None
    try:
        spec = sbm.SbmSpec(args.p_in, args.p_out, args.p_core, args.n_total, sizes, args.coupling, args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    g, truth = sbm.generate(spec)
    out = _out(args)
    write_edge_list(g, out / "graph.txt")
    truth.write(out / "ground_truth.json", g.labels)
    return 0


def cmd_remove_edges(args) -> int:
    if not 0 <= args.fraction < 1:
        raise ConfigError("--fraction must lie in [0, 1)")
    g = _load_graph(args)
    degraded, e, record = em.remove_random_edges(g, args.fraction, args.seed)
    out = _out(args)
    write_edge_list(degraded, out / "degraded.txt")
    em.write_errors(e, g.labels, out / "errors.csv")
    em.write_removed(record, g.labels, out / "removed.csv")
    return 0


def cmd_estimate_errors(args) -> int:
    g = _load_graph(args)
    stats = _read(em.read_channel_stats, args.stats)
    e = em.estimate_errors(stats, g)
    em.write_errors(e, g.labels, _out(args) / "errors.csv")
    return 0


def compare_partitions(a: Partition, b: Partition, g=None, top_k: int = 3, rbo_p: float = 0.9, damping=None, exclude_largest: int = 0) -> dict:
    """Metrics between two partitions over the same node universe."""
    if not np.array_equal(a.nodes, b.nodes):
        raise ConfigError("partitions cover different node sets")
    keep = a.nodes
    if exclude_largest > 0:
        order = np.argsort(-a.sizes(), kind="stable")[:exclude_largest]
        drop = np.isin(a.labels, order)
        keep = a.nodes[~drop]
    if keep.size == 0:
        raise ConfigError("empty comparison universe")
    a, b = a.restrict(keep), b.restrict(keep)
    out = {"nmi": metrics.nmi(a, b), "nvi": metrics.nvi(a, b) if len(a) >= 2 else 0.0}
    if g is not None and top_k > 0:
        x = metrics.katz_centrality(g, damping)

        def ranked(part):
            clusters = sorted(part.clusters(), key=lambda c: (-len(c), int(c[0])))[:top_k]
            return [sorted(c.tolist(), key=lambda i: (-x[i], g.labels[i])) for c in clusters]

        out["rbo"] = [metrics.rbo(ra, rb, rbo_p) for ra, rb in zip(ranked(a), ranked(b))]
    return out


def cmd_compare(args) -> int:
    names_a = _partition_labels(args.a)
    names_b = _partition_labels(args.b)
    if set(names_a) != set(names_b):
        raise ConfigError("partitions cover different node sets")
    g = None
    if args.graph:
        g = _load_graph(args, names_a)
        names = g.labels
    else:
        names = tuple(names_a)
    a, _ = _read(read_partition, args.a, names)
    b, _ = _read(read_partition, args.b, names)
    res = compare_partitions(a, b, g, args.top_k, args.rbo_p, args.katz_damping, args.exclude_largest)
    sys.stdout.write(json.dumps(res) + "\n")
    return 0


def cmd_roles(args) -> int:
    g = _load_graph(args, _partition_labels(args.partition))
    part, _ = _read(read_partition, args.partition, g.labels)
    if len(part) != g.n_nodes:
        raise ConfigError("partition must assign every graph node")
    ex.write_roles(g, part, _out(args) / "roles.csv", args.definition)
    return 0


def cmd_nvi_heatmap(args) -> int:
    files: list[Path] = []
    for item in args.partitions:
        p = Path(item)
        files += sorted(p.glob("*.json")) if p.is_dir() else [p]
    if len(files) < 2:
        raise ConfigError("need at least two partition files")
    names = _partition_labels(str(files[0]))
    parts = []
    for f in files:
        if set(_partition_labels(str(f))) != set(names):
            raise ConfigError(f"{f}: node universe differs from {files[0]}")
        parts.append(_read(read_partition, f, names)[0])
    H = cl.nvi_heatmap(parts)
    t = np.array([p.markov_time if np.isfinite(p.markov_time) else k for k, p in enumerate(parts)])
    ex.write_matrix(H, t, t, _out(args) / "nvi_heatmap.csv")
    return 0


COMMANDS = {
    "cluster": cmd_cluster,
    "recovery": cmd_recovery,
    "sbm-gen": cmd_sbm_gen,
    "remove-edges": cmd_remove_edges,
    "estimate-errors": cmd_estimate_errors,
    "compare": cmd_compare,
    "roles": cmd_roles,
    "nvi-heatmap": cmd_nvi_heatmap,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    except ConfigError as exc:
        print(f"deltaflow: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"deltaflow: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"deltaflow: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, OSError) as exc:
        print(f"deltaflow: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ArithmeticError as exc:
        print(f"deltaflow: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"deltaflow: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
