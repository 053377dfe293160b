"""Command-line harness: graph generation, single runs, sweeps, spectra.

Every subcommand also accepts ``--config FILE`` with one ``key = value`` pair
per line (keys are flag names, ``_`` or ``-`` both accepted). Flags given on
the command line override the file.

Exit codes: 0 success, 1 usage/IO/precondition error, 2 no convergence within
the round budget, 3 spectral certificate rejected gamma.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Sequence

from ppacdc import analysis
from ppacdc.graph import (
    Digraph,
    GraphFormatError,
    diameter,
    format_graph,
    is_strongly_connected,
    load_graph,
    random_strongly_connected,
)
from ppacdc.protocol import InitCoordination, ProtocolParams
from ppacdc.rng import uniform_vector
from ppacdc.simulator import SimConfig, Trace, run, write_trace_csv

EXIT_OK, EXIT_USAGE, EXIT_NO_CONVERGENCE, EXIT_INVALID_GAMMA = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with status 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- argument helpers ------------------------------------------------------------


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


@dataclass(frozen=True)
class X0Spec:
    kind: str
    lo: float = 0.0
    hi: float = 1000.0
    values: tuple[float, ...] = ()

    def draw(self, n: int, seed: int) -> list[float]:
        if self.kind == "list":
            if len(self.values) != n:
                raise UsageError(f"x0 list has {len(self.values)} values but the graph has {n} nodes")
            return list(self.values)
        return uniform_vector(seed, n, self.lo, self.hi)

    def __str__(self) -> str:
        if self.kind == "list":
            return "list:" + ",".join(repr(v) for v in self.values)
        return f"uniform:{self.lo!r},{self.hi!r}"


def parse_x0(text: str) -> X0Spec:
    kind, _, rest = text.partition(":")
    try:
        vals = [float(v) for v in rest.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad x0 values in {text!r}") from None
    if kind == "uniform" and len(vals) == 2 and vals[0] < vals[1]:
        return X0Spec("uniform", vals[0], vals[1])
    if kind == "list" and vals:
        return X0Spec("list", values=tuple(vals))
    raise argparse.ArgumentTypeError("x0 must be 'uniform:LO,HI' with LO < HI or 'list:v1,v2,...'")


def _load(path: str) -> Digraph:
    try:
        return load_graph(path)
    except OSError as exc:
        raise UsageError(f"cannot read graph {path}: {exc.strerror}") from None
    except GraphFormatError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _resolve_dbar(g: Digraph, dbar: int | None) -> int:
    if not is_strongly_connected(g):
        raise UsageError("graph is not strongly connected")
    d = diameter(g)
    if dbar is None:
        return d
    if dbar < d:
        raise UsageError(f"--dbar {dbar} is below the graph diameter {d}")
    return dbar


# -- commands --------------------------------------------------------------------


def cmd_gen_graph(args) -> int:
    if args.n < 2:
        raise UsageError("--n must be at least 2")
    if not 0.0 <= args.prob <= 1.0:
        raise UsageError("--prob must lie in [0, 1]")
    g = random_strongly_connected(args.n, args.prob, args.seed)
    text = format_graph(g, f"random strongly connected digraph n={args.n} prob={args.prob} seed={args.seed}")
    if args.out:
        try:
            Path(args.out).write_text(text)
        except OSError as exc:
            raise UsageError(f"cannot write {args.out}: {exc.strerror}") from None
    else:
        sys.stdout.write(text)
    print(f"n {g.n}")
    print(f"m {g.m}")
    print(f"diameter {diameter(g)}")
    return EXIT_OK


def _params(args, b: int, alpha: float, dbar: int) -> ProtocolParams:
    try:
        return ProtocolParams(
            gamma=args.gamma,
            alpha=alpha,
            b=b,
            dbar=dbar,
            epsilon=args.epsilon,
            init_coordination=InitCoordination(args.init_coordination),
            delta0=args.delta0,
            sigma0=args.sigma0,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def summarize(trace: Trace, epsilon: float | None, x0: Sequence[float]) -> list[str]:
    fin = trace.final
    lines = [
        f"mode           {'asymptotic' if epsilon is None else f'epsilon_stop (epsilon={epsilon:g})'}",
        f"rounds         {trace.rounds_executed}",
        f"total_bits     {trace.total_bits}",
        f"final_err_l2   {fin.err_l2:.6e}",
        f"final_err_inf  {fin.err_inf:.6e}",
        f"final_delta    {fin.delta:.6e}",
    ]
    if epsilon is None:
        lines.insert(1, f"converged      {trace.converged}")
        lines.insert(2, f"rounds_to_tol  {trace.rounds_to_tol}")
    else:
        lines.insert(1, f"terminated     {trace.terminated}")
        lines.insert(2, f"k_star         {trace.k_star}")
        if trace.terminated:
            lines.append(f"within_epsilon {analysis.verify_termination(trace, x0, epsilon)}")
    return lines


def cmd_run(args) -> int:
    g = _load(args.graph)
    dbar = _resolve_dbar(g, args.dbar)
    params = _params(args, args.bits, args.alpha, dbar)
    x0 = args.x0.draw(g.n, args.seed)
    cfg = SimConfig(
        g, params, x0, args.max_rounds, convergence_tol=args.tol,
        snapshot_every=args.snapshot_every, seed=args.seed,
    )
    trace = run(cfg)
    if args.trace_out:
        try:
            write_trace_csv(trace, args.trace_out)
        except OSError as exc:
            raise UsageError(f"cannot write {args.trace_out}: {exc.strerror}") from None
    print(f"graph          n={g.n} m={g.m} dbar={dbar}")
    for line in summarize(trace, args.epsilon, x0):
        print(line)
    ok = trace.terminated if args.epsilon is not None else trace.converged
    return EXIT_OK if ok else EXIT_NO_CONVERGENCE


@dataclass(frozen=True)
class MonteCarloRow:
    trial: int
    n: int
    dbar: int
    bits: int
    alpha: float
    gamma: float
    epsilon: str
    converged: bool
    rounds: int
    total_bits: int
    final_err_l2: float


ROW_HEADER = [f.name for f in fields(MonteCarloRow)]
AGG_HEADER = [
    "bits", "alpha", "gamma", "epsilon", "trials", "converged",
    "mean_rounds", "mean_total_bits", "mean_final_err_l2",
]


@dataclass(frozen=True)
class TrialJob:
    trial: int
    seed: int
    bits: int
    alpha: float
    gamma: float
    epsilon: float | None
    dbar: int | None
    max_rounds: int
    tol: float
    x0: X0Spec
    graph: Digraph | None
    n: int
    prob: float
    init_coordination: str
    delta0: float
    sigma0: float


def run_trial(job: TrialJob) -> MonteCarloRow:
    g = job.graph if job.graph is not None else random_strongly_connected(job.n, job.prob, job.seed)
    dbar = _resolve_dbar(g, job.dbar)
    params = ProtocolParams(
        gamma=job.gamma, alpha=job.alpha, b=job.bits, dbar=dbar, epsilon=job.epsilon,
        init_coordination=InitCoordination(job.init_coordination),
        delta0=job.delta0, sigma0=job.sigma0,
    )
    x0 = job.x0.draw(g.n, job.seed)
    trace = run(
        SimConfig(g, params, x0, job.max_rounds, convergence_tol=job.tol,
                  snapshot_every=max(1, job.max_rounds), seed=job.seed)
    )
    if job.epsilon is None:
        ok, rounds = trace.converged, trace.rounds_to_tol
    else:
        ok, rounds = trace.terminated, trace.k_star
    return MonteCarloRow(
        trial=job.trial, n=g.n, dbar=dbar, bits=job.bits, alpha=job.alpha, gamma=job.gamma,
        epsilon="asymptotic" if job.epsilon is None else repr(job.epsilon),
        converged=bool(ok), rounds=int(rounds if ok else trace.rounds_executed),
        total_bits=trace.total_bits, final_err_l2=trace.final.err_l2,
    )


def aggregate(rows: Sequence[MonteCarloRow]) -> list[dict]:
    """Per-cell means; round and bit means are over the converged trials only."""
    cells: dict[tuple, list[MonteCarloRow]] = {}
    for r in rows:
        cells.setdefault((r.bits, r.alpha, r.gamma, r.epsilon), []).append(r)
    out = []
    for (bits, alpha, gamma, eps), rs in cells.items():
        ok = [r for r in rs if r.converged]
        out.append(
            {
                "bits": bits, "alpha": alpha, "gamma": gamma, "epsilon": eps,
                "trials": len(rs), "converged": len(ok),
                "mean_rounds": sum(r.rounds for r in ok) / len(ok) if ok else math.nan,
                "mean_total_bits": sum(r.total_bits for r in ok) / len(ok) if ok else math.nan,
                "mean_final_err_l2": sum(r.final_err_l2 for r in rs) / len(rs),
            }
        )
    return out


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _write_csv(path: str, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([_cell(v) for v in row])


def plot_aggregate(agg: Sequence[dict], path: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax_r, ax_b) = plt.subplots(1, 2, figsize=(10, 4))
    for alpha in sorted({a["alpha"] for a in agg}):
        series = sorted((a for a in agg if a["alpha"] == alpha), key=lambda a: a["bits"])
        bits = [a["bits"] for a in series]
        ax_r.plot(bits, [a["mean_rounds"] for a in series], marker="o", label=f"alpha={alpha:g}")
        ax_b.plot(bits, [a["mean_total_bits"] for a in series], marker="o", label=f"alpha={alpha:g}")
    ax_r.set_xlabel("bits b")
    ax_r.set_ylabel("mean rounds (converged trials)")
    ax_b.set_xlabel("bits b")
    ax_b.set_ylabel("mean transmitted bits")
    ax_b.set_yscale("log")
    ax_r.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def cmd_montecarlo(args) -> int:
    graph = _load(args.graph) if args.graph else None
    if graph is None and args.n is None:
        raise UsageError("give either --graph or --n (with --prob) to regenerate graphs per trial")
    if graph is None and args.n < 2:
        raise UsageError("--n must be at least 2")
    if args.trials < 1:
        raise UsageError("--trials must be positive")
    if graph is not None:
        _resolve_dbar(graph, args.dbar)
    _params(args, args.bits[0], args.alphas[0], 1)  # validate shared parameters early
    jobs = [
        TrialJob(
            trial=t, seed=args.base_seed + t, bits=b, alpha=alpha, gamma=args.gamma,
            epsilon=args.epsilon, dbar=args.dbar, max_rounds=args.max_rounds, tol=args.tol,
            x0=args.x0, graph=graph, n=graph.n if graph else args.n, prob=args.prob,
            init_coordination=args.init_coordination, delta0=args.delta0, sigma0=args.sigma0,
        )
        for b in args.bits
        for alpha in args.alphas
        for t in range(args.trials)
    ]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(run_trial, jobs, chunksize=4))
    else:
        rows = [run_trial(job) for job in jobs]
    agg = aggregate(rows)
    try:
        _write_csv(args.out, ROW_HEADER, [astuple(r) for r in rows])
        if args.aggregate:
            _write_csv(args.aggregate, AGG_HEADER, [[a[h] for h in AGG_HEADER] for a in agg])
        if args.plot:
            plot_aggregate(agg, args.plot)
    except OSError as exc:
        raise UsageError(f"cannot write output: {exc}") from None
    print(f"{'bits':>5} {'alpha':>6} {'conv':>9} {'mean_rounds':>12} {'mean_bits':>14}")
    for a in agg:
        print(
            f"{a['bits']:>5} {a['alpha']:>6g} {a['converged']:>4}/{a['trials']:<4} "
            f"{a['mean_rounds']:>12.2f} {a['mean_total_bits']:>14.1f}"
        )
    return EXIT_OK


def cmd_spectrum(args) -> int:
    if not args.gamma > 0:
        raise UsageError("--gamma must be positive")
    g = _load(args.graph)
    if not is_strongly_connected(g):
        raise UsageError("graph is not strongly connected")
    report = analysis.spectral_certificate(g, args.gamma, tol=args.tol, margin=args.margin)
    print(report.to_text())
    if args.csv:
        try:
            Path(args.csv).write_text(analysis.CERT_CSV_HEADER + "\n" + report.csv_row() + "\n")
        except OSError as exc:
            raise UsageError(f"cannot write {args.csv}: {exc.strerror}") from None
    return EXIT_OK if report.valid_gamma else EXIT_INVALID_GAMMA


# -- parser ----------------------------------------------------------------------


def _protocol_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gamma", type=float, default=0.2, help="surplus gain (default 0.2)")
    p.add_argument("--dbar", type=int, default=None, help="diameter bound (default: exact diameter)")
    p.add_argument("--epsilon", type=float, default=None, help="enable the epsilon stopping rule")
    p.add_argument("--max-rounds", type=int, default=50_000)
    p.add_argument("--tol", type=float, default=1e-8, help="pairwise spread for asymptotic convergence")
    p.add_argument("--x0", type=parse_x0, default=parse_x0("uniform:0,1000"))
    p.add_argument("--init-coordination", choices=[c.value for c in InitCoordination], default="from_state")
    p.add_argument("--delta0", type=float, default=1.0)
    p.add_argument("--sigma0", type=float, default=0.0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ppacdc", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-graph", help="write a random strongly connected digraph")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--prob", type=float, default=0.2, help="extra edge probability")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output path (stdout when omitted)")
    p.set_defaults(func=cmd_gen_graph)

    p = sub.add_parser("run", help="simulate one configuration")
    p.add_argument("--graph", required=True)
    p.add_argument("--bits", type=int, default=8)
    p.add_argument("--alpha", type=float, default=0.2)
    _protocol_flags(p)
    p.add_argument("--seed", type=int, default=0, help="seed for the x0 draw")
    p.add_argument("--snapshot-every", type=int, default=1)
    p.add_argument("--trace-out", help="per-agent trace CSV")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("montecarlo", help="sweep bits x alpha over seeded trials")
    p.add_argument("--graph", help="fixed graph file; otherwise graphs are regenerated per trial")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--prob", type=float, default=0.2)
    p.add_argument("--bits", type=_int_list, default=[2, 4, 6, 8, 10, 12, 14, 16])
    p.add_argument("--alphas", type=_float_list, default=[0.2, 0.3, 0.4, 0.6, 1.0, 4.0])
    _protocol_flags(p)
    p.set_defaults(gamma=0.1)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--base-seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="montecarlo.csv")
    p.add_argument("--aggregate", default=None, help="per-cell means CSV")
    p.add_argument("--plot", default=None, help="SVG line plot of the aggregate")
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("spectrum", help="spectral certificate for the linear iteration")
    p.add_argument("--graph", required=True)
    p.add_argument("--gamma", type=float, default=0.1)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--margin", type=float, default=1e-6)
    p.add_argument("--csv", help="write the machine-readable row here")
    p.set_defaults(func=cmd_spectrum)

    for sp in sub.choices.values():
        sp.add_argument("--config", help="key = value file mirroring the flags")
    return parser


def _config_tokens(sub: argparse.ArgumentParser, path: str) -> list[str]:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    known = {opt: act for act in sub._actions for opt in act.option_strings}
    tokens: list[str] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, eq, value = line.partition("=")
        flag = "--" + key.strip().replace("_", "-")
        if not eq or flag not in known or flag == "--config":
            raise UsageError(f"{path}:{lineno}: unknown or malformed entry {raw!r}")
        tokens += [flag, value.strip()]
    return tokens


def _config_path(argv: Sequence[str]) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    subparsers = parser._subparsers._group_actions[0].choices
    command = argv[0] if argv else None
    try:
        config = _config_path(argv[1:])
        if command in subparsers and config:
            argv = [command] + _config_tokens(subparsers[command], config) + argv[1:]
    except UsageError as exc:
        print(f"ppacdc {command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ppacdc {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
