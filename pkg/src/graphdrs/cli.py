"""Command-line front end.

Subcommands: solve, enumerate, transport-sweep, svm, simulate.  Every output
is a CSV file with a comment header recording the flags (including the seed),
so repeated invocations are byte-identical.  Exit codes: 0 success, 2 input
error, 1 numerical failure.
"""

import argparse
import sys

import numpy as np

from .factorization import (
    FactorizationError,
    incidence_decomposition,
    spectral_decomposition,
)
from .graphs import (
    BilevelGraph,
    GraphError,
    OrderedDigraph,
    algebraic_connectivity,
    enumerate_connected_digraphs,
    read_bilevel_graph,
)
from .operators import OperatorError, prox_translated_quadratic
from .problems import (
    load_config,
    objective_svm,
    objective_transport,
    svm_from_config,
    transport_from_config,
)
from .simulate import NetworkSim, ProtocolError, write_message_log
from .solver import (
    NumericalError,
    SolverConfig,
    run,
    tree_decomposition,
    write_trace,
)

MAX_SWEEP_GRID = 64


class InputError(ValueError):
    """Bad command-line input or malformed file."""


def _decomposition(bg):
    if bg.base.is_tree():
        return incidence_decomposition(bg.base)
    return spectral_decomposition(bg.base)


def _parse_vectors(text):
    vecs = [
        np.array([float(v) for v in part.replace(",", " ").split()])
        for part in text.split(";")
        if part.strip()
    ]
    if not vecs:
        raise InputError("empty vector list")
    if len({v.size for v in vecs}) != 1:
        raise InputError("all vectors must share one dimension")
    return vecs


def _build_problem(cfg_path, graph_path, seed):
    """Return (ops, bilevel graph or None, objective callable or None)."""
    cfg = load_config(cfg_path)
    kind = cfg.get("problem", "quadratic")
    bg = read_bilevel_graph(graph_path) if graph_path else None
    if kind == "quadratic":
        if "centers" not in cfg:
            raise InputError(f"{cfg_path}: quadratic problem needs 'centers'")
        centers = _parse_vectors(cfg["centers"])
        mus = (
            [float(v) for v in cfg["mus"].replace(",", " ").split()]
            if "mus" in cfg
            else [1.0] * len(centers)
        )
        if len(mus) != len(centers):
            raise InputError(f"{cfg_path}: need one mu per center")
        ops = [prox_translated_quadratic(c, m) for c, m in zip(centers, mus)]

        def objective(xbar):
            return sum(
                0.5 * m * float(np.sum((xbar - c) ** 2))
                for c, m in zip(centers, mus)
            )

        return ops, bg, objective
    if kind == "transport":
        inst, ops = transport_from_config(cfg)
        return ops, bg, lambda xbar: objective_transport(inst, xbar)
    if kind == "svm":
        if "seed" not in cfg:
            cfg = dict(cfg, seed=str(seed))
        inst, ops, built_bg = svm_from_config(cfg)
        return ops, bg if bg is not None else built_bg, (
            lambda xbar: objective_svm(inst, xbar)
        )
    raise InputError(f"{cfg_path}: unknown problem kind {kind!r}")


def _header(args, extra=()):
    lines = [f"seed = {args.seed}"]
    for name in ("sigma", "theta", "max_iter", "tol"):
        if hasattr(args, name):
            lines.append(f"{name} = {getattr(args, name):.17g}")
    lines.extend(extra)
    return lines


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve(args):
    ops, bg, objective = _build_problem(args.config, args.graph, args.seed)
    if bg is None:
        raise InputError("this problem kind needs --graph")
    if len(ops) != bg.n_nodes:
        raise InputError(
            f"graph has {bg.n_nodes} nodes but the problem provides {len(ops)} "
            f"operators"
        )
    cfg = SolverConfig(
        sigma=args.sigma, theta=args.theta, max_iter=args.max_iter, tol=args.tol
    )
    _, traces = run(bg, _decomposition(bg), ops, cfg, objective=objective)
    with open(args.out, "w") as fh:
        write_trace(traces, fh, comments=_header(args, [f"config = {args.config}"]))
    return 0


def cmd_enumerate(args):
    graphs = enumerate_connected_digraphs(args.n)
    with open(args.out, "w") as fh:
        fh.write(f"# seed = {args.seed}\n")
        fh.write("graph_id,edges,lambda1\n")
        for gid, g in enumerate(graphs, start=1):
            edges = ";".join(f"{i + 1}-{j + 1}" for i, j in g.edges)
            fh.write(f"{gid},{edges},{algebraic_connectivity(g):.17g}\n")
    return 0


def cmd_transport_sweep(args):
    if args.config:
        inst, ops = transport_from_config(load_config(args.config))
    else:
        from .problems import build_transport

        if args.p > MAX_SWEEP_GRID:
            raise InputError(f"grid size limited to p <= {MAX_SWEEP_GRID}")
        inst, ops = build_transport(args.p, cap=args.cap)
    if inst.p > MAX_SWEEP_GRID:
        raise InputError(f"grid size limited to p <= {MAX_SWEEP_GRID}")
    graphs = enumerate_connected_digraphs(4)
    complete = OrderedDigraph(4, [(i, j) for i in range(4) for j in range(i + 1, 4)])
    cfg = SolverConfig(
        sigma=args.sigma, theta=args.theta, max_iter=args.max_iter, tol=args.tol
    )
    with open(args.out, "w") as fh:
        for line in _header(args, [f"p = {inst.p}", f"cap = {inst.cap:.17g}"]):
            fh.write(f"# {line}\n")
        fh.write("graph_id,mode,lambda1,iter,variance\n")
        for gid, g in enumerate(graphs, start=1):
            lam1 = algebraic_connectivity(g)
            for mode, bg in (
                ("a", BilevelGraph(g, g)),
                ("b", BilevelGraph(complete, g)),
            ):
                _, traces = run(bg, _decomposition(bg), ops, cfg)
                for rec in traces:
                    fh.write(
                        f"{gid},{mode},{lam1:.17g},{rec.k},{rec.variance:.17g}\n"
                    )
    return 0


def cmd_svm(args):
    from .problems import build_svm

    inst, ops, bg = build_svm(
        args.n,
        args.officials,
        args.per_official,
        gamma=args.gamma,
        kernel_width=args.kernel_width,
        seed=args.seed,
    )
    sigmas = np.logspace(-2, 1, 10)
    with open(args.out, "w") as fh:
        for line in _header(
            args,
            [
                f"n = {args.n}",
                f"officials = {args.officials}",
                f"gamma = {args.gamma:.17g}",
                f"kernel_width = {args.kernel_width:.17g}",
            ],
        ):
            fh.write(f"# {line}\n")
        fh.write("sigma,iter,residual_sq,variance,objective\n")
        for sigma in sigmas:
            cfg = SolverConfig(
                sigma=float(sigma),
                theta=args.theta,
                max_iter=args.max_iter,
                tol=args.tol,
            )
            _, traces = run(
                bg,
                tree_decomposition(bg),
                ops,
                cfg,
                objective=lambda xbar: objective_svm(inst, xbar),
            )
            for rec in traces:
                fh.write(
                    f"{sigma:.17g},{rec.k},{rec.residual_sq:.17g},"
                    f"{rec.variance:.17g},{rec.objective:.17g}\n"
                )
    return 0


def cmd_simulate(args):
    ops, bg, _ = _build_problem(args.config, args.graph, args.seed)
    if bg is None:
        raise InputError("this problem kind needs --graph")
    cfg = SolverConfig(sigma=args.sigma, theta=args.theta, max_iter=args.rounds)
    sim = NetworkSim(bg, ops, cfg, protocol=args.protocol)
    result = sim.run(args.rounds)
    # centralized re-run of the same formulation for the equivalence report
    if args.protocol == "tree":
        from .solver import step_tree

        w = np.zeros((bg.base.n_edges, result.x_history.shape[2]))
        max_dev = 0.0
        for rnd in range(args.rounds):
            x, w = step_tree(bg, ops, cfg.sigma, cfg.theta_at(rnd), w, rnd)
            max_dev = max(max_dev, float(np.abs(result.x_history[rnd] - x).max()))
    else:
        from .solver import step_wtilde

        wt = np.zeros((bg.n_nodes, result.x_history.shape[2]))
        max_dev = 0.0
        for rnd in range(args.rounds):
            x, wt = step_wtilde(bg, ops, cfg.sigma, cfg.theta_at(rnd), wt, rnd)
            max_dev = max(max_dev, float(np.abs(result.x_history[rnd] - x).max()))
    with open(args.out, "w") as fh:
        for line in _header(
            args,
            [
                f"protocol = {args.protocol}",
                f"rounds = {args.rounds}",
                f"max_deviation = {max_dev:.17g}",
                f"total_messages = {len(result.log)}",
            ],
        ):
            fh.write(f"# {line}\n")
        write_message_log(result.log, fh)
    print(
        f"protocol={args.protocol} rounds={args.rounds} "
        f"max_deviation={max_dev:.17g} messages={len(result.log)}"
    )
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p, sigma=1.0):
    p.add_argument("--sigma", type=float, default=sigma, help="step size > 0")
    p.add_argument("--theta", type=float, default=1.0, help="relaxation in (0, 2)")
    p.add_argument("--max-iter", type=int, default=1000, dest="max_iter")
    p.add_argument("--tol", type=float, default=0.0,
                   help="stop when the squared residual drops below this; 0 = off")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output CSV path")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="graphdrs",
        description="Graph-based Douglas-Rachford solver and experiment driver",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run the solver on a graph + problem config")
    p.add_argument("--graph", help="bilevel graph file (STATE/BASE sections)")
    p.add_argument("--config", required=True, help="problem config (key = value)")
    _add_common(p)
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("enumerate", help="census of connected ordered digraphs")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_enumerate)

    p = sub.add_parser(
        "transport-sweep",
        help="variance traces over all 4-node graphs on the transport problem",
    )
    p.add_argument("--p", type=int, default=35, help="grid side length")
    p.add_argument("--cap", type=float, default=5e-2, help="bridge capacity")
    p.add_argument("--config", help="transport config overriding --p/--cap")
    _add_common(p, sigma=2.0)
    p.set_defaults(fn=cmd_transport_sweep)

    p = sub.add_parser("svm", help="SVM step-size sweep (10 log-spaced sigmas)")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--officials", type=int, default=5)
    p.add_argument("--per-official", type=int, default=10, dest="per_official")
    p.add_argument("--gamma", type=float, default=0.1)
    p.add_argument("--kernel-width", type=float, default=1.0, dest="kernel_width")
    _add_common(p)
    p.set_defaults(fn=cmd_svm)

    p = sub.add_parser("simulate", help="message-passing protocol simulation")
    p.add_argument("--graph", help="bilevel graph file")
    p.add_argument("--config", required=True, help="problem config")
    p.add_argument("--protocol", choices=("tree", "general"), default="tree")
    p.add_argument("--rounds", type=int, default=50)
    _add_common(p)
    p.set_defaults(fn=cmd_simulate)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad flags already; preserve that
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (
        InputError,
        GraphError,
        FactorizationError,
        OperatorError,
        ValueError,
        KeyError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, ProtocolError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
