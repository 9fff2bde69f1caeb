"""Graph-coloring problems and their translation into cluster potentials.

A coloring problem is variables, disagreement edges, a shared label
count, and optional fixed labels.  Builders turn Sudoku grids and map
adjacency lists into problems; the machinery here enumerates maximal
cliques, optionally splits oversized ones, compiles cliques into
all-different potential tables (with givens folded in and an optional
symmetry-breaking bias), and verifies decoded assignments.
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from clusterbp.factors import ContradictionError, SparseTable, Variable
from clusterbp.graphs import Cluster


@dataclass(frozen=True)
class ColoringProblem:
    """A k-coloring instance: adjacent variables must take distinct labels."""

    variables: tuple[Variable, ...]
    edges: frozenset[frozenset[Variable]]
    k: int
    givens: Mapping[Variable, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(
            self, "edges", frozenset(frozenset(e) for e in self.edges)
        )
        object.__setattr__(self, "givens", dict(self.givens))
        if self.k < 1:
            raise ValueError(f"label count must be >= 1, got {self.k}")
        if len({v.id for v in self.variables}) != len(self.variables):
            raise ValueError("duplicate variable ids")
        if len({v.name for v in self.variables}) != len(self.variables):
            raise ValueError("duplicate variable names")
        members = set(self.variables)
        for edge in self.edges:
            if len(edge) != 2:
                raise ValueError(f"edge {set(edge)} must join exactly two variables")
            if not edge <= members:
                raise ValueError(f"edge {set(edge)} mentions unknown variables")
        for variable, label in self.givens.items():
            if variable not in members:
                raise ValueError(f"given for unknown variable {variable}")
            if not 0 <= label < self.k:
                raise ValueError(
                    f"given {variable.name}={label} outside 0..{self.k - 1}"
                )
        for edge in self.edges:
            a, b = sorted(edge)
            if (
                a in self.givens
                and b in self.givens
                and self.givens[a] == self.givens[b]
            ):
                raise ContradictionError(
                    f"givens assign {a.name} and {b.name} the same label "
                    f"{self.givens[a]} across an edge"
                )

    def neighbors(self, variable: Variable) -> tuple[Variable, ...]:
        out = {next(iter(e - {variable})) for e in self.edges if variable in e}
        return tuple(sorted(out))

    def variable_named(self, name: str) -> Variable:
        for variable in self.variables:
            if variable.name == name:
                return variable
        raise KeyError(name)


@dataclass(frozen=True)
class VerifyReport:
    """Outcome of checking an assignment against a problem."""

    violated_edges: tuple[tuple[Variable, Variable], ...]
    given_mismatches: tuple[tuple[Variable, int, int], ...]

    @property
    def valid(self) -> bool:
        return not self.violated_edges and not self.given_mismatches

    def __bool__(self) -> bool:
        return self.valid


def maximal_cliques(problem: ColoringProblem) -> list[Cluster]:
    """Every maximal clique of the disagreement graph, deterministically.

    Bron-Kerbosch with pivoting; the result is sorted by the cliques'
    sorted variable tuples and numbered 0..n-1.
    """
    if not problem.variables:
        return []
    adjacency: dict[Variable, set[Variable]] = {
        v: set() for v in problem.variables
    }
    for edge in problem.edges:
        a, b = edge
        adjacency[a].add(b)
        adjacency[b].add(a)
    found: list[frozenset[Variable]] = []

    def expand(grown: set[Variable], candidates: set[Variable], seen: set[Variable]):
        if not candidates and not seen:
            found.append(frozenset(grown))
            return
        pivot = max(
            sorted(candidates | seen),
            key=lambda u: len(candidates & adjacency[u]),
        )
        for v in sorted(candidates - adjacency[pivot]):
            expand(
                grown | {v}, candidates & adjacency[v], seen & adjacency[v]
            )
            candidates = candidates - {v}
            seen = seen | {v}

    expand(set(), set(problem.variables), set())
    found.sort(key=lambda c: tuple(sorted(c)))
    return [Cluster(i, vars_) for i, vars_ in enumerate(found)]


def split_cliques(cliques: Sequence[Cluster], size: int) -> list[Cluster]:
    """Break cliques larger than `size` into covering sub-cliques.

    Each oversized clique is replaced by a greedy cover: walk its
    size-combinations in lexicographic variable order and keep one
    whenever it contains a variable pair no kept combination covers yet,
    until all pairs are covered.  Smaller cliques pass through.  The
    result is deduplicated, subset-pruned, and renumbered.
    """
    if size < 2:
        raise ValueError(f"cluster size must be >= 2, got {size}")
    chosen: list[frozenset[Variable]] = []
    for clique in cliques:
        members = clique.sorted_vars()
        if len(members) <= size:
            chosen.append(clique.vars)
            continue
        uncovered = {frozenset(p) for p in itertools.combinations(members, 2)}
        for combo in itertools.combinations(members, size):
            pairs = {frozenset(p) for p in itertools.combinations(combo, 2)}
            if pairs & uncovered:
                chosen.append(frozenset(combo))
                uncovered -= pairs
                if not uncovered:
                    break
    pruned: list[frozenset[Variable]] = []
    for vars_ in chosen:
        if any(vars_ <= other for other in pruned):
            continue
        pruned = [kept for kept in pruned if not kept < vars_]
        pruned.append(vars_)
    return [Cluster(i, vars_) for i, vars_ in enumerate(pruned)]


def sudoku_problem(text: str, n: int = 9) -> ColoringProblem:
    """Parse an n×n Sudoku grid into a coloring problem.

    The text holds n*n characters row-major — digits 1..n for givens,
    '0' or '.' for blanks — with all whitespace ignored.  Cells become
    variables (named A..P for the 4×4 board, r{i}c{j} for 9×9), labels
    are digits minus one, and every row, column, and box is a clique of
    disagreement edges.
    """
    if n not in (4, 9):
        raise ValueError(f"grid side must be 4 or 9, got {n}")
    cells = "".join(text.split())
    if len(cells) != n * n:
        raise ValueError(f"expected {n * n} cells, got {len(cells)}")
    digits = "".join(str(d) for d in range(1, n + 1))
    if n == 4:
        names = [chr(ord("A") + i) for i in range(16)]
    else:
        names = [f"r{i // n + 1}c{i % n + 1}" for i in range(n * n)]
    variables = tuple(Variable(i, names[i]) for i in range(n * n))
    givens: dict[Variable, int] = {}
    for i, char in enumerate(cells):
        if char in ("0", "."):
            continue
        if char not in digits:
            raise ValueError(f"cell {i}: {char!r} is not a digit 1..{n} or blank")
        givens[variables[i]] = int(char) - 1
    box = math.isqrt(n)
    edges: set[frozenset[Variable]] = set()
    for i, j in itertools.combinations(range(n * n), 2):
        ri, ci = divmod(i, n)
        rj, cj = divmod(j, n)
        if (
            ri == rj
            or ci == cj
            or (ri // box == rj // box and ci // box == cj // box)
        ):
            edges.add(frozenset({variables[i], variables[j]}))
    return ColoringProblem(variables, frozenset(edges), k=n, givens=givens)


def format_sudoku(problem: ColoringProblem, assignment: Mapping[Variable, int]) -> str:
    """Render a (possibly partial) assignment as grid text, row by row."""
    n = math.isqrt(len(problem.variables))
    rows = []
    for r in range(n):
        row = problem.variables[r * n : (r + 1) * n]
        rows.append(
            "".join(
                str(assignment[v] + 1) if v in assignment else "." for v in row
            )
        )
    return "\n".join(rows) + "\n"


def parse_adjacency(text: str, k: int = 4) -> ColoringProblem:
    """Parse "name name" border lines into a coloring problem.

    One edge per line as two whitespace-separated names; a line with a
    single name declares an isolated region; '#' starts a comment.
    Variables are sorted by name and numbered in that order.
    """
    names: set[str] = set()
    name_edges: set[tuple[str, str]] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) == 1:
            names.add(parts[0])
            continue
        if len(parts) != 2:
            raise ValueError(
                f"line {lineno}: expected one or two names, got {len(parts)}"
            )
        a, b = parts
        if a == b:
            raise ValueError(f"line {lineno}: region {a!r} borders itself")
        names.update(parts)
        name_edges.add((min(a, b), max(a, b)))
    variables = tuple(
        Variable(i, name) for i, name in enumerate(sorted(names))
    )
    by_name = {v.name: v for v in variables}
    edges = frozenset(
        frozenset({by_name[a], by_name[b]}) for a, b in name_edges
    )
    return ColoringProblem(variables, edges, k=k)


def format_adjacency(problem: ColoringProblem) -> str:
    """Render a problem back into adjacency text (sorted, one edge a line)."""
    lines = []
    connected: set[Variable] = set()
    for edge in sorted(problem.edges, key=lambda e: tuple(sorted(v.name for v in e))):
        a, b = sorted(edge, key=lambda v: v.name)
        connected.update((a, b))
        lines.append(f"{a.name} {b.name}")
    for variable in problem.variables:
        if variable not in connected:
            lines.append(variable.name)
    return "\n".join(lines) + "\n"


def build_factors(
    problem: ColoringProblem,
    cliques: Sequence[Cluster],
    bias: Mapping[Variable, Sequence[float]] | None = None,
    delta: float = 0.01,
) -> list[tuple[Cluster, SparseTable]]:
    """Compile cliques into all-different tables with givens folded in.

    Every disagreement edge must lie inside some clique, otherwise the
    compiled problem would silently drop a constraint.  Observed
    variables are conditioned out of their tables (shrinking scopes);
    cliques observed away completely are dropped, so a fully-given
    problem compiles to an empty list.  `bias` optionally
    assigns each variable a per-label preference, applied once as a
    multiplicative nudge of 1 + delta * preference — strong enough to
    break ties after convergence, weak enough to never beat a hard zero.
    Clusters are renumbered to match the returned tables.
    """
    covered = {
        edge
        for edge in problem.edges
        if any(edge <= clique.vars for clique in cliques)
    }
    missing = problem.edges - covered
    if missing:
        a, b = sorted(next(iter(missing)))
        raise ValueError(
            f"edge {a.name}-{b.name} is not inside any clique; "
            f"the cover is incomplete"
        )
    out: list[tuple[Cluster, SparseTable]] = []
    for clique in cliques:
        members = clique.sorted_vars()
        observed = [v for v in members if v in problem.givens]
        taken = {problem.givens[v] for v in observed}
        if len(taken) < len(observed):
            raise ContradictionError(
                f"givens repeat a label inside clique {{{clique.label()}}}"
            )
        free = tuple(v for v in members if v not in problem.givens)
        if not free:
            continue  # fully observed; nothing left to infer
        # Equivalent to observing the givens out of a full all-different
        # table, but only the surviving entries are ever materialized.
        labels = [x for x in range(problem.k) if x not in taken]
        if len(free) > len(labels):
            raise ContradictionError(
                f"clique {{{clique.label()}}} needs {len(free)} distinct "
                f"labels but only {len(labels)} remain"
            )
        table = SparseTable(
            free,
            (problem.k,) * len(free),
            {key: 1.0 for key in itertools.permutations(labels, len(free))},
        )
        if bias is not None:
            for variable in table.scope:
                preference = bias.get(variable)
                if preference is None:
                    continue
                if len(preference) != problem.k:
                    raise ValueError(
                        f"bias for {variable.name} lists {len(preference)} "
                        f"weights; expected {problem.k}"
                    )
                nudges = {
                    (label,): 1.0 + delta * preference[label]
                    for label in range(problem.k)
                }
                table = table.multiply(
                    SparseTable((variable,), (problem.k,), nudges)
                )
        out.append((Cluster(len(out), frozenset(table.scope)), table))
    return out


def purged_clusters(
    problem: ColoringProblem, cliques: Sequence[Cluster]
) -> list[Cluster]:
    """The clusters a factor build would leave behind, without the tables.

    Conditioning removes given variables from every clique; emptied
    scopes vanish, and scopes contained in a surviving scope fold away
    exactly as assimilation folds the compiled factors.  Useful when only
    the graph shape matters: nothing here materializes a potential table.
    """
    scopes: list[frozenset[Variable]] = []
    for clique in cliques:
        free = frozenset(v for v in clique.vars if v not in problem.givens)
        if free:
            scopes.append(free)
    order = sorted(
        range(len(scopes)),
        key=lambda i: (-len(scopes[i]), tuple(sorted(scopes[i])), i),
    )
    kept: list[frozenset[Variable]] = []
    survivors: list[int] = []
    for i in order:
        if any(scopes[i] <= other for other in kept):
            continue
        kept.append(scopes[i])
        survivors.append(i)
    survivors.sort()
    return [Cluster(new_id, scopes[i]) for new_id, i in enumerate(survivors)]


def label_preferences(
    problem: ColoringProblem, seed: int = 0
) -> dict[Variable, tuple[int, ...]]:
    """A deterministic pseudo-random label preference per variable.

    Each variable gets a permutation of 0..k-1 drawn from its own
    seeded stream, so preferences are reproducible and uncorrelated
    across neighbors — which is what lets a slight bias break the label
    symmetry without fighting the constraints.
    """
    prefs: dict[Variable, tuple[int, ...]] = {}
    for variable in problem.variables:
        rng = random.Random(seed * 1_000_003 + variable.id)
        order = list(range(problem.k))
        rng.shuffle(order)
        prefs[variable] = tuple(order)
    return prefs


def anchor_largest_clique(
    problem: ColoringProblem, cliques: Sequence[Cluster]
) -> dict[Variable, int]:
    """Pin one largest clique to labels 0,1,2,... to break symmetry.

    Every proper coloring permutes into one agreeing with the anchor, so
    no solutions are lost — there just stops being a tie between them.
    Returns the problem's givens extended with the anchor.
    """
    if not cliques:
        raise ValueError("no cliques to anchor")
    largest = min(cliques, key=lambda c: (-len(c.vars), c.sorted_vars()))
    if len(largest.vars) > problem.k:
        raise ContradictionError(
            f"clique {{{largest.label()}}} has {len(largest.vars)} mutually "
            f"adjacent variables but only {problem.k} labels exist"
        )
    anchored = dict(problem.givens)
    for label, variable in enumerate(largest.sorted_vars()):
        if anchored.get(variable, label) != label:
            raise ValueError(
                f"existing given {variable.name}={anchored[variable]} "
                f"conflicts with anchoring {variable.name}={label}"
            )
        anchored[variable] = label
    return anchored


def verify_coloring(
    problem: ColoringProblem, assignment: Mapping[Variable, int]
) -> VerifyReport:
    """Check that an assignment colors properly and honors the givens."""
    missing = [v for v in problem.variables if v not in assignment]
    if missing:
        names = ",".join(v.name for v in missing[:5])
        raise ValueError(f"assignment misses {len(missing)} variables ({names}...)")
    for variable in problem.variables:
        if not 0 <= assignment[variable] < problem.k:
            raise ValueError(
                f"label {assignment[variable]} for {variable.name} outside "
                f"0..{problem.k - 1}"
            )
    violated = []
    for edge in problem.edges:
        a, b = sorted(edge)
        if assignment[a] == assignment[b]:
            violated.append((a, b))
    mismatched = [
        (v, label, assignment[v])
        for v, label in sorted(problem.givens.items())
        if assignment[v] != label
    ]
    return VerifyReport(tuple(sorted(violated)), tuple(mismatched))


def random_planar_map(
    rows: int, cols: int, seed: int = 0, diagonal_rate: float = 0.5
) -> ColoringProblem:
    """A synthetic planar adjacency: a grid with random diagonal braces.

    Regions tile a rows×cols grid; every region borders its right and
    down neighbors, and each interior 2×2 block gets one diagonal with
    probability `diagonal_rate` (direction random).  One diagonal per
    block keeps the graph planar, so four colors always suffice.
    """
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    rng = random.Random(seed)
    width = len(str(rows * cols - 1)) if rows * cols > 1 else 1
    names = [f"m{str(i).zfill(width)}" for i in range(rows * cols)]
    variables = tuple(Variable(i, names[i]) for i in range(rows * cols))

    def at(r: int, c: int) -> Variable:
        return variables[r * cols + c]

    edges: set[frozenset[Variable]] = set()
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                edges.add(frozenset({at(r, c), at(r, c + 1)}))
            if r + 1 < rows:
                edges.add(frozenset({at(r, c), at(r + 1, c)}))
    for r in range(rows - 1):
        for c in range(cols - 1):
            if rng.random() < diagonal_rate:
                if rng.random() < 0.5:
                    edges.add(frozenset({at(r, c), at(r + 1, c + 1)}))
                else:
                    edges.add(frozenset({at(r, c + 1), at(r + 1, c)}))
    return ColoringProblem(variables, frozenset(edges), k=4)
