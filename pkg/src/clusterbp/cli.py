"""Command-line front end.

Subcommands: `solve` runs a Sudoku grid through the cluster-graph
pipeline, `color-map` four-colors an adjacency file, `bench` sweeps a
directory of puzzles over topologies and cluster sizes into a CSV, and
`graph` builds, validates, and exports the cluster graph itself.

Exit codes partition what went wrong: 0 a verified solution (or a clean
report), 2 unreadable or malformed input, 3 a provably unsatisfiable
problem, 4 inference that finished without a valid answer.  Set the
CLUSTERBP_LOG environment variable (debug/info/warning) for progress
logging on stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import math
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from clusterbp.coloring import (
    ColoringProblem,
    VerifyReport,
    anchor_largest_clique,
    build_factors,
    format_sudoku,
    label_preferences,
    maximal_cliques,
    parse_adjacency,
    purged_clusters,
    split_cliques,
    sudoku_problem,
    verify_coloring,
)
from clusterbp.factors import ContradictionError, uniform_factor
from clusterbp.graphs import (
    assimilate_subsets,
    bethe_graph,
    export_dot,
    ltrip,
    validate_rip,
)
from clusterbp.inference import SCHEDULES, InferenceOptions, InferenceState

log = logging.getLogger("clusterbp")

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_UNSATISFIABLE = 3
EXIT_NO_SOLUTION = 4

TOPOLOGIES = ("ltrip", "bethe")
CSV_COLUMNS = (
    "instance",
    "topology",
    "cluster_size",
    "cluster_count",
    "converged",
    "valid",
    "messages",
    "build_ms",
    "infer_ms",
)


@dataclass(frozen=True)
class SolveOutcome:
    """Everything a pipeline run produced, for printing or a CSV row."""

    problem: ColoringProblem
    assignment: dict
    converged: bool
    report: VerifyReport
    cluster_count: int
    messages: int
    build_ms: float
    infer_ms: float
    marginals: dict = dataclasses.field(default_factory=dict)

    @property
    def valid(self) -> bool:
        return self.report.valid


def solve_problem(
    problem: ColoringProblem,
    topology: str = "ltrip",
    cluster_size: int | None = None,
    *,
    options: InferenceOptions | None = None,
    bias_delta: float = 0.0,
    seed: int = 0,
    anchor: bool = False,
) -> SolveOutcome:
    """Run the whole pipeline: cliques, factors, graph, propagation, decode.

    Cluster-size splitting and bias are opt-in; `anchor` pins the largest
    clique (for problems whose labels are symmetric, like map coloring).
    The decoded assignment always covers every variable — observed ones
    come straight from the givens.
    """
    if topology not in TOPOLOGIES:
        raise ValueError(f"unknown topology {topology!r}; pick from {TOPOLOGIES}")
    if options is None:
        options = InferenceOptions()
    started = time.perf_counter()
    cliques = maximal_cliques(problem)
    if anchor:
        problem = dataclasses.replace(
            problem, givens=anchor_largest_clique(problem, cliques)
        )
    if cluster_size is not None:
        cliques = split_cliques(cliques, cluster_size)
    bias = label_preferences(problem, seed) if bias_delta > 0 else None
    items = assimilate_subsets(
        build_factors(problem, cliques, bias=bias, delta=bias_delta)
    )
    if not items:
        # Every variable is given; construction already proved consistency.
        build_ms = (time.perf_counter() - started) * 1000.0
        assignment = dict(problem.givens)
        report = verify_coloring(problem, assignment)
        return SolveOutcome(problem, assignment, True, report, 0, 0, build_ms, 0.0)
    clusters = [cluster for cluster, _ in items]
    tables = [table for _, table in items]
    if topology == "ltrip":
        graph = ltrip(clusters)
    else:
        graph = bethe_graph(clusters)
        for hub in graph.clusters[len(clusters):]:
            (variable,) = hub.vars
            card = next(t.card_of(variable) for t in tables if variable in t.scope)
            tables.append(uniform_factor((variable,), (card,)))
    state = InferenceState(graph, tables, options)
    build_ms = (time.perf_counter() - started) * 1000.0
    log.info(
        "%s graph: %d clusters, %d edges", topology, len(clusters), len(graph.sepsets)
    )
    posterior = state.run()
    assignment = dict(problem.givens)
    assignment.update(posterior.assignment)
    report = verify_coloring(problem, assignment)
    return SolveOutcome(
        problem,
        assignment,
        posterior.converged,
        report,
        len(clusters),
        posterior.stats.messages,
        build_ms,
        posterior.stats.wall_ms,
        posterior.marginals,
    )


def _confident_consistent_fixes(
    problem: ColoringProblem, outcome: SolveOutcome, fraction: float
) -> dict:
    """Pick decoded labels worth freezing as givens for the next round.

    Variables are ranked by how decisively their marginal prefers its
    best label; the top fraction is kept, skipping any whose label would
    collide with an already-frozen neighbor, so the result always builds.
    If the ranking yields nothing, the single most confident variable is
    fixed to its best non-colliding label instead.  Empty means stuck.
    """
    adjacency: dict = {v: set() for v in problem.variables}
    for edge in problem.edges:
        a, b = edge
        adjacency[a].add(b)
        adjacency[b].add(a)

    def margin(variable) -> float:
        table = outcome.marginals[variable]
        scores = sorted(
            (table[(x,)] for x in range(problem.k)), reverse=True
        )
        return scores[0] - scores[1]

    unfixed = [v for v in problem.variables if v not in problem.givens]
    ranked = sorted(unfixed, key=lambda v: (-margin(v), v.id))
    quota = max(1, math.ceil(len(unfixed) * fraction))
    chosen: dict = {}

    def taken_labels(variable) -> set:
        labels = set()
        for neighbor in adjacency[variable]:
            if neighbor in problem.givens:
                labels.add(problem.givens[neighbor])
            elif neighbor in chosen:
                labels.add(chosen[neighbor])
        return labels

    for variable in ranked:
        if len(chosen) >= quota:
            break
        label = outcome.assignment[variable]
        if label not in taken_labels(variable):
            chosen[variable] = label
    if not chosen:
        for variable in ranked:
            table = outcome.marginals[variable]
            blocked = taken_labels(variable)
            candidates = sorted(
                ((table[(x,)], -x) for x in range(problem.k) if x not in blocked),
                reverse=True,
            )
            if candidates:
                chosen[variable] = -candidates[0][1]
                break
    return chosen


def color_problem(
    problem: ColoringProblem,
    *,
    options: InferenceOptions | None = None,
    bias_delta: float = 0.01,
    seed: int = 0,
    anchor: bool = True,
    retries: int = 4,
    fix_fraction: float = 0.2,
) -> SolveOutcome:
    """Color a map, decimating when one propagation pass cannot decide.

    A single anchored, biased run settles easy maps outright.  On loopy
    maps the converged beliefs can disagree about the overlap regions, so
    the most confident decoded labels are frozen as givens and inference
    reruns on the shrunken problem until the decode verifies.  A run that
    annihilates (the frozen labels were jointly wrong) restarts with the
    next preference seed.  Returns the last outcome if every attempt
    fails; callers check `.valid`.
    """
    if options is None:
        options = InferenceOptions()
    cliques = maximal_cliques(problem)
    base_givens = (
        anchor_largest_clique(problem, cliques) if anchor else dict(problem.givens)
    )
    messages = 0
    build_ms = 0.0
    infer_ms = 0.0
    cluster_count = 0
    outcome: SolveOutcome | None = None
    for attempt in range(max(1, retries)):
        work = dataclasses.replace(problem, givens=base_givens)
        try:
            while True:
                outcome = solve_problem(
                    work,
                    "ltrip",
                    options=options,
                    bias_delta=bias_delta,
                    seed=seed + attempt,
                )
                messages += outcome.messages
                build_ms += outcome.build_ms
                infer_ms += outcome.infer_ms
                cluster_count = cluster_count or outcome.cluster_count
                if outcome.valid:
                    return dataclasses.replace(
                        outcome,
                        cluster_count=cluster_count,
                        messages=messages,
                        build_ms=build_ms,
                        infer_ms=infer_ms,
                    )
                fixes = _confident_consistent_fixes(work, outcome, fix_fraction)
                if not fixes:
                    break
                log.info(
                    "attempt %d: froze %d labels, %d regions open",
                    attempt,
                    len(fixes),
                    len(problem.variables) - len(work.givens) - len(fixes),
                )
                work = dataclasses.replace(work, givens={**work.givens, **fixes})
        except ContradictionError as exc:
            log.info("attempt %d dead-ended: %s", attempt, exc)
            continue
    assert outcome is not None
    return dataclasses.replace(
        outcome,
        cluster_count=cluster_count,
        messages=messages,
        build_ms=build_ms,
        infer_ms=infer_ms,
    )


# -- input loading -----------------------------------------------------------

GRID_CHARS = set("0123456789.")
GRID_SIDES = {16: 4, 81: 9}


def load_puzzle(path: str | Path) -> ColoringProblem:
    """Read a Sudoku grid file (16 or 81 cells of digits and blanks)."""
    text = Path(path).read_text()
    cells = "".join(text.split())
    if not cells or not set(cells) <= GRID_CHARS:
        raise ValueError(
            f"{path}: not a Sudoku grid; use color-map for adjacency files"
        )
    side = GRID_SIDES.get(len(cells))
    if side is None:
        raise ValueError(f"{path}: expected 16 or 81 cells, found {len(cells)}")
    return sudoku_problem(text, side)


def load_problem(path: str | Path, k: int) -> ColoringProblem:
    """Read either input format: a Sudoku grid or a border list."""
    text = Path(path).read_text()
    cells = "".join(text.split())
    if cells and set(cells) <= GRID_CHARS:
        return load_puzzle(path)
    return parse_adjacency(text, k)


def _options_from(args: argparse.Namespace) -> InferenceOptions:
    return InferenceOptions(
        semiring=args.semiring,
        threshold=args.threshold,
        max_messages=args.max_messages,
        schedule=args.schedule,
        damping=args.damping,
    )


def _flag(value: bool) -> str:
    return "true" if value else "false"


# -- subcommands -------------------------------------------------------------


def cmd_solve(args: argparse.Namespace) -> int:
    problem = load_puzzle(args.puzzle)
    outcome = solve_problem(
        problem,
        args.topology,
        args.cluster_size,
        options=_options_from(args),
        bias_delta=args.bias,
        seed=args.seed,
    )
    print(format_sudoku(problem, outcome.assignment), end="")
    print(f"valid: {'yes' if outcome.valid else 'no'}")
    print(
        f"converged: {'yes' if outcome.converged else 'no'}  "
        f"messages: {outcome.messages}  clusters: {outcome.cluster_count}"
    )
    print(f"build: {outcome.build_ms:.1f} ms  infer: {outcome.infer_ms:.1f} ms")
    if outcome.valid:
        return EXIT_OK
    if not outcome.converged:
        print("did not converge within the message budget", file=sys.stderr)
    else:
        print(
            f"decoded grid violates {len(outcome.report.violated_edges)} "
            f"constraints",
            file=sys.stderr,
        )
    return EXIT_NO_SOLUTION


def cmd_color_map(args: argparse.Namespace) -> int:
    problem = load_problem(args.map, args.k)
    if not problem.variables:
        raise ValueError(f"{args.map}: no regions found")
    outcome = color_problem(
        problem,
        options=_options_from(args),
        bias_delta=args.bias,
        seed=args.seed,
        anchor=args.anchor,
        retries=args.retries,
    )
    if not outcome.valid:
        detail = (
            "did not converge"
            if not outcome.converged
            else f"{len(outcome.report.violated_edges)} borders share a label"
        )
        print(f"no valid coloring found: {detail}", file=sys.stderr)
        return EXIT_NO_SOLUTION
    lines = "".join(
        f"{variable.name} {outcome.assignment[variable]}\n"
        for variable in sorted(problem.variables, key=lambda v: v.name)
    )
    if args.out:
        Path(args.out).write_text(lines)
    else:
        print(lines, end="")
    print(
        f"colored {len(problem.variables)} regions with {args.k} labels "
        f"({outcome.messages} messages)",
        file=sys.stderr,
    )
    return EXIT_OK


def _bench_row(
    name: str,
    problem: ColoringProblem | None,
    topology: str,
    size: int,
    options: InferenceOptions,
    seed: int,
) -> tuple:
    if problem is None:
        return (name, topology, size, 0, "false", "false", 0, "0.000", "0.000")
    try:
        outcome = solve_problem(
            problem, topology, size, options=options, seed=seed
        )
    except ContradictionError as exc:
        log.info("%s %s M=%d: unsatisfiable (%s)", name, topology, size, exc)
        return (name, topology, size, 0, "false", "false", 0, "0.000", "0.000")
    return (
        name,
        topology,
        size,
        outcome.cluster_count,
        _flag(outcome.converged),
        _flag(outcome.valid),
        outcome.messages,
        f"{outcome.build_ms:.3f}",
        f"{outcome.infer_ms:.3f}",
    )


def cmd_bench(args: argparse.Namespace) -> int:
    directory = Path(args.instances)
    if not directory.is_dir():
        raise ValueError(f"{directory} is not a directory")
    paths = sorted(
        p for p in directory.iterdir()
        if p.is_file() and not p.name.startswith(".")
    )
    topologies = TOPOLOGIES if args.topologies == "both" else (args.topologies,)
    options = _options_from(args)
    rows: list[tuple] = []
    with open(args.out, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_COLUMNS)
        for path in paths:
            try:
                problem = load_puzzle(path)
            except (ValueError, OSError) as exc:
                log.warning("skipping %s: %s", path.name, exc)
                problem = None
            for topology in topologies:
                for size in args.sizes:
                    row = _bench_row(
                        path.name, problem, topology, size, options, args.seed
                    )
                    writer.writerow(row)
                    handle.flush()
                    rows.append(row)
                    log.info("%s %s M=%s -> valid=%s", *row[:3], row[5])
    print(f"wrote {len(rows)} rows to {args.out}")
    by_topology = {
        t: [r for r in rows if r[1] == t] for t in topologies
    }
    for topology, recorded in by_topology.items():
        good = sum(1 for r in recorded if r[5] == "true")
        print(f"{topology}: {good}/{len(recorded)} runs found a valid solution")
    if args.topologies == "both":
        upsets = [
            (ours[0], ours[2])
            for ours, theirs in zip(by_topology["ltrip"], by_topology["bethe"])
            if theirs[5] == "true" and ours[5] != "true"
        ]
        print(
            f"runs where bethe succeeded but ltrip failed "
            f"(expected 0): {len(upsets)}"
        )
        if upsets:
            log.warning(
                "bethe out-solved ltrip on: %s",
                ", ".join(f"{name} M={size}" for name, size in upsets),
            )
    return EXIT_OK


def cmd_graph(args: argparse.Namespace) -> int:
    problem = load_problem(args.input, args.k)
    cliques = maximal_cliques(problem)
    if args.cluster_size is not None:
        cliques = split_cliques(cliques, args.cluster_size)
    clusters = purged_clusters(problem, cliques)
    if not clusters:
        print("every variable is given; the graph is empty")
        return EXIT_OK
    graph = ltrip(clusters) if args.topology == "ltrip" else bethe_graph(clusters)
    sizes = sorted(len(c.vars) for c in graph.clusters)
    print(f"kind: {graph.kind}")
    print(f"clusters: {len(graph.clusters)} (sizes {sizes[0]}..{sizes[-1]})")
    print(f"edges: {len(graph.sepsets)}")
    print(f"variables: {len(graph.variables())}")
    code = EXIT_OK
    if args.validate:
        report = validate_rip(graph)
        if report.valid:
            print("validation: passed")
        else:
            print(f"validation: {len(report.violations)} violations")
            for violation in report.violations:
                print(f"  - {violation}")
            code = EXIT_NO_SOLUTION
    if args.dot:
        Path(args.dot).write_text(export_dot(graph))
        print(f"wrote {args.dot}")
    return code


# -- argument parsing --------------------------------------------------------


def _add_inference_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--semiring",
        choices=("max", "sum"),
        default="max",
        help="message algebra: max decodes a best assignment, sum marginals",
    )
    parser.add_argument(
        "--threshold",
        type=float,
        default=1e-8,
        help="residual below which a message counts as converged",
    )
    parser.add_argument(
        "--max-messages",
        type=int,
        default=1_000_000,
        help="hard budget on passed messages",
    )
    parser.add_argument(
        "--schedule",
        choices=SCHEDULES,
        default="residual",
        help="message ordering policy",
    )
    parser.add_argument(
        "--damping",
        type=float,
        default=0.0,
        help="mix each message with its predecessor to tame oscillation",
    )
    parser.add_argument(
        "--seed", type=int, default=0, help="seed for label preferences"
    )


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 2:
        raise argparse.ArgumentTypeError("cluster size must be >= 2")
    return value


def _size_list(text: str) -> list[int]:
    try:
        sizes = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size list {text!r}")
    if not sizes or any(s < 2 for s in sizes):
        raise argparse.ArgumentTypeError("sizes must be integers >= 2")
    return sizes


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clusterbp",
        description="Solve coloring problems with cluster-graph belief propagation.",
    )
    sub = parser.add_subparsers(required=True, metavar="command")

    solve = sub.add_parser(
        "solve", help="solve one Sudoku grid and print the filled board"
    )
    solve.add_argument("puzzle", help="grid file: 16 or 81 digits, . or 0 blank")
    solve.add_argument("--topology", choices=TOPOLOGIES, default="ltrip")
    solve.add_argument(
        "--cluster-size",
        type=_positive_int,
        default=None,
        help="split cliques larger than this before building the graph",
    )
    solve.add_argument(
        "--bias",
        type=float,
        default=0.0,
        help="tie-breaking nudge strength (0 disables)",
    )
    _add_inference_flags(solve)
    solve.set_defaults(func=cmd_solve)

    cmap = sub.add_parser(
        "color-map", help="four-color an adjacency file of region borders"
    )
    cmap.add_argument("map", help="border list: two region names per line")
    cmap.add_argument("--k", type=int, default=4, help="number of colors")
    cmap.add_argument(
        "--anchor",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="pin the largest clique to fixed labels",
    )
    cmap.add_argument(
        "--bias",
        type=float,
        default=0.01,
        help="tie-breaking nudge strength (0 disables)",
    )
    cmap.add_argument(
        "--retries",
        type=int,
        default=4,
        help="restart budget when a coloring round dead-ends",
    )
    cmap.add_argument("--out", help="write 'name label' lines here, not stdout")
    _add_inference_flags(cmap)
    # Loopy maps oscillate under undamped max-product; default to damping.
    cmap.set_defaults(func=cmd_color_map, damping=0.3)

    bench = sub.add_parser(
        "bench", help="sweep a puzzle directory over topologies and sizes"
    )
    bench.add_argument("instances", help="directory of grid files")
    bench.add_argument(
        "--sizes",
        type=_size_list,
        default=[3, 5, 7, 9],
        help="comma-separated cluster sizes to sweep",
    )
    bench.add_argument(
        "--topologies", choices=TOPOLOGIES + ("both",), default="both"
    )
    bench.add_argument("--out", default="bench.csv", help="CSV destination")
    _add_inference_flags(bench)
    bench.set_defaults(func=cmd_bench)

    graph = sub.add_parser(
        "graph", help="build a cluster graph and report or export it"
    )
    graph.add_argument("input", help="grid or adjacency file")
    graph.add_argument("--topology", choices=TOPOLOGIES, default="ltrip")
    graph.add_argument("--cluster-size", type=_positive_int, default=None)
    graph.add_argument("--k", type=int, default=4, help="colors for adjacency input")
    graph.add_argument(
        "--validate", action="store_true", help="check the tree-per-variable property"
    )
    graph.add_argument("--dot", help="write DOT markup here")
    graph.set_defaults(func=cmd_graph)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    level = os.environ.get("CLUSTERBP_LOG", "warning").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ContradictionError as exc:
        print(f"unsatisfiable: {exc}", file=sys.stderr)
        return EXIT_UNSATISFIABLE
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
