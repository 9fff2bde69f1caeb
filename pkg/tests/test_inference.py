"""Message passing: setup, single updates, scheduling, and exactness.

Covers:
* option validation and initial-state bookkeeping (beliefs, sepsets, queue)
* one hand-computed message: sepset update, residual, belief product
* exact sum- and max-marginals on tree graphs vs. the dense oracle
* message budget exhaustion (not an error) and early-out on re-runs
* contradiction propagation out of `run`
* round-robin fallback schedule
* calibration reporting
* determinism across repeated runs
"""

from __future__ import annotations

import itertools
import math
import random

import pytest

from clusterbp import (
    ContradictionError,
    SparseTable,
    make_variables,
    permutation_factor,
    uniform_factor,
)
from clusterbp.graphs import Cluster, ClusterGraph, Sepset, ltrip
from clusterbp.inference import (
    CalibrationReport,
    InferenceOptions,
    InferenceState,
)
from oracles import DenseFactor, dense_joint

VARS = make_variables("ABCD")
A, B, C, D = VARS
CARDS = {A: 2, B: 3, C: 2, D: 3}


def chain_setup(seed=12345, density=1.0):
    """Three clusters in a row: {A,B} - {B,C} - {C,D}, random potentials."""
    rng = random.Random(seed)
    clusters = [
        Cluster(0, frozenset({A, B})),
        Cluster(1, frozenset({B, C})),
        Cluster(2, frozenset({C, D})),
    ]
    factors = []
    for cluster in clusters:
        scope = cluster.sorted_vars()
        cards = tuple(CARDS[v] for v in scope)
        entries = {}
        for key in itertools.product(*[range(c) for c in cards]):
            if rng.random() < density:
                entries[key] = rng.uniform(0.1, 5.0)
        factors.append(SparseTable(scope, cards, entries))
    return ltrip(clusters), factors


def seven_coloring_factors(seven_cliques, k=4):
    return [permutation_factor(c.sorted_vars(), k) for c in seven_cliques]


class TestOptions:
    def test_defaults(self):
        options = InferenceOptions()
        assert options.semiring == "max"
        assert options.threshold == 1e-8
        assert options.max_messages == 1_000_000
        assert options.schedule == "residual"
        assert options.damping == 0.0

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"semiring": "min"},
            {"threshold": 0.0},
            {"threshold": -1e-9},
            {"max_messages": 0},
            {"schedule": "random"},
            {"damping": -0.1},
            {"damping": 1.0},
        ],
    )
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            InferenceOptions(**kwargs)


class TestSetup:
    def test_initial_bookkeeping(self, seven_graph, seven_cliques):
        state = InferenceState(
            seven_graph, seven_coloring_factors(seven_cliques)
        )
        assert len(state.beliefs) == 5
        assert len(state.sepset_beliefs) == 6
        assert len(state.residuals) == 12
        assert all(r == math.inf for r in state.residuals.values())
        assert not state.converged
        assert state.stats.messages == 0

    def test_sepset_beliefs_start_vacuous(self, seven_graph, seven_cliques):
        state = InferenceState(
            seven_graph, seven_coloring_factors(seven_cliques)
        )
        for key, belief in state.sepset_beliefs.items():
            assert len(belief) == 4 ** len(belief.scope)
            assert all(value == 1.0 for _, value in belief.items())
            assert set(belief.scope) == set(seven_graph.sepset_between(*key).vars)

    def test_max_semiring_normalizes_initial_beliefs(self):
        graph, factors = chain_setup()
        state = InferenceState(graph, factors, InferenceOptions(semiring="max"))
        for belief in state.beliefs:
            assert max(value for _, value in belief.items()) == 1.0

    def test_factor_count_mismatch(self, seven_graph, seven_cliques):
        with pytest.raises(ValueError, match="factors"):
            InferenceState(seven_graph, seven_coloring_factors(seven_cliques)[:3])

    def test_factor_scope_mismatch(self):
        graph, factors = chain_setup()
        factors[0] = uniform_factor((A, C), (2, 2))
        with pytest.raises(ValueError, match="scope"):
            InferenceState(graph, factors)

    def test_cardinality_conflict_across_clusters(self):
        graph, factors = chain_setup()
        factors[2] = uniform_factor((C, D), (3, 3))  # C is 2 elsewhere
        with pytest.raises(ValueError, match="cardinality"):
            InferenceState(graph, factors)

    def test_empty_factor_is_contradictory(self):
        graph, factors = chain_setup()
        factors[1] = SparseTable((B, C), (3, 2), {})
        with pytest.raises(ContradictionError, match="empty"):
            InferenceState(graph, factors)

    def test_uncovered_sepset_variable(self):
        graph = ClusterGraph(
            (Cluster(0, frozenset({A})), Cluster(1, frozenset({B}))),
            (Sepset((0, 1), frozenset({C})),),
        )
        factors = [uniform_factor((A,), (2,)), uniform_factor((B,), (3,))]
        with pytest.raises(ValueError, match="no .*factor covers|covers"):
            InferenceState(graph, factors)


class TestSingleMessage:
    def setup_method(self):
        x, y, z = make_variables("XYZ")
        self.x, self.y, self.z = x, y, z
        clusters = (Cluster(0, frozenset({x, y})), Cluster(1, frozenset({y, z})))
        graph = ClusterGraph(
            clusters, (Sepset((0, 1), frozenset({y})),), kind="custom"
        )
        f0 = SparseTable((x, y), (2, 2), {(0, 0): 1.0, (0, 1): 2.0, (1, 1): 1.0})
        f1 = uniform_factor((y, z), (2, 2))
        self.state = InferenceState(
            graph, [f0, f1], InferenceOptions(semiring="sum")
        )

    def test_hand_computed_update(self):
        residual = self.state.pass_message(0, 1)
        # marginal over Y is (1, 3); against the vacuous (1, 1) that is
        # KL([1/4, 3/4] || [1/2, 1/2])
        expected = 0.25 * math.log(0.5) + 0.75 * math.log(1.5)
        assert math.isclose(residual, expected, rel_tol=1e-12)
        assert self.state.sepset_beliefs[(0, 1)].entries == {(0,): 1.0, (1,): 3.0}
        assert self.state.beliefs[1].entries == {
            (0, 0): 0.125,
            (0, 1): 0.125,
            (1, 0): 0.375,
            (1, 1): 0.375,
        }
        assert self.state.residuals[(0, 1)] == residual
        assert self.state.residuals[(1, 0)] == math.inf
        assert self.state.stats.messages == 1

    def test_source_belief_is_untouched(self):
        before = self.state.beliefs[0]
        self.state.pass_message(0, 1)
        assert self.state.beliefs[0] is before

    def test_repeat_message_has_zero_residual(self):
        self.state.pass_message(0, 1)
        assert self.state.pass_message(0, 1) == 0.0

    def test_unknown_edge_rejected(self):
        with pytest.raises(ValueError, match="no sepset"):
            self.state.pass_message(0, 2)


class TestTreeExactness:
    def test_sum_marginals_match_dense_joint(self):
        graph, factors = chain_setup(seed=99)
        state = InferenceState(graph, factors, InferenceOptions(semiring="sum"))
        posterior = state.run()
        assert posterior.converged
        # Convergence on a tree needs O(edges): the initial sweep plus a
        # few deliver-and-certify passes per directed edge.
        assert posterior.stats.messages <= 4 * len(state.residuals)
        joint = dense_joint([DenseFactor.from_sparse(f) for f in factors])
        for variable, marginal in posterior.marginals.items():
            want = joint.marginalize([variable], "sum").normalize("sum")
            for key, value in want.values.items():
                assert math.isclose(marginal[key], value, rel_tol=1e-9)

    def test_max_marginals_and_decoding_match_dense_joint(self):
        graph, factors = chain_setup(seed=7)
        state = InferenceState(graph, factors, InferenceOptions(semiring="max"))
        posterior = state.run()
        assert posterior.converged
        joint = dense_joint([DenseFactor.from_sparse(f) for f in factors])
        best = dict(zip(joint.scope, joint.argmax()))
        assert posterior.assignment == best
        for variable, marginal in posterior.marginals.items():
            want = joint.marginalize([variable], "max").normalize("max")
            for key, value in want.values.items():
                assert math.isclose(marginal[key], value, rel_tol=1e-9)

    def test_calibrated_after_convergence(self):
        graph, factors = chain_setup(seed=3)
        state = InferenceState(graph, factors, InferenceOptions(semiring="sum"))
        before = state.check_calibration(tol=1e-9)
        assert not before.calibrated  # clusters have not talked yet
        state.run()
        after = state.check_calibration(tol=1e-9)
        assert isinstance(after, CalibrationReport)
        assert after.calibrated
        assert set(after.per_edge) == {(0, 1), (1, 2)}
        assert after.max_divergence <= 1e-9


class TestRunControl:
    def test_budget_exhaustion_is_not_an_error(self):
        graph, factors = chain_setup()
        state = InferenceState(
            graph, factors, InferenceOptions(semiring="sum", max_messages=3)
        )
        posterior = state.run()
        assert not posterior.converged
        assert posterior.stats.messages == 3

    def test_rerun_after_convergence_sends_nothing(self):
        graph, factors = chain_setup()
        state = InferenceState(graph, factors, InferenceOptions(semiring="sum"))
        first = state.run()
        again = state.run()
        assert again.stats.messages == first.stats.messages
        assert again.assignment == first.assignment

    def test_first_message_goes_out_on_the_lowest_edge(self):
        graph, factors = chain_setup()
        state = InferenceState(
            graph, factors, InferenceOptions(semiring="sum", max_messages=1)
        )
        state.run()
        touched = [e for e, r in state.residuals.items() if r != math.inf]
        assert touched == [(0, 1)]

    def test_edgeless_graph_converges_immediately(self):
        graph = ClusterGraph((Cluster(0, frozenset({A})),), ())
        state = InferenceState(
            graph,
            [SparseTable((A,), (2,), {(0,): 0.5, (1,): 1.5})],
            InferenceOptions(semiring="sum"),
        )
        posterior = state.run()
        assert posterior.converged
        assert posterior.stats.messages == 0
        assert posterior.assignment == {A: 1}

    def test_contradiction_escapes_run(self):
        clusters = (Cluster(0, frozenset({A, B})), Cluster(1, frozenset({A, C})))
        graph = ClusterGraph(
            clusters, (Sepset((0, 1), frozenset({A})),), kind="custom"
        )
        f0 = SparseTable((A, B), (2, 3), {(0, 0): 1.0, (0, 2): 1.0})  # pins A=0
        f1 = SparseTable((A, C), (2, 2), {(1, 0): 1.0, (1, 1): 1.0})  # pins A=1
        state = InferenceState(graph, [f0, f1], InferenceOptions(semiring="max"))
        with pytest.raises(ContradictionError, match="0->1"):
            state.run()

    def test_round_robin_schedule_matches_on_trees(self):
        graph, factors = chain_setup(seed=21)
        residual = InferenceState(
            graph, factors, InferenceOptions(semiring="sum")
        ).run()
        swept = InferenceState(
            graph, factors, InferenceOptions(semiring="sum", schedule="round-robin")
        ).run()
        assert swept.converged
        assert swept.stats.sweeps >= 1
        for variable in residual.marginals:
            assert residual.marginals[variable].allclose(
                swept.marginals[variable], rel_tol=1e-9
            )


class TestDamping:
    def test_damped_tree_reaches_the_same_fixed_point(self):
        graph, factors = chain_setup(seed=17)
        plain = InferenceState(graph, factors).run()
        damped = InferenceState(
            graph, factors, InferenceOptions(damping=0.5, threshold=1e-12)
        ).run()
        assert damped.converged
        assert damped.assignment == plain.assignment
        for variable in plain.marginals:
            assert plain.marginals[variable].allclose(
                damped.marginals[variable], rel_tol=1e-4
            )

    def test_damping_only_delays_convergence(self):
        graph, factors = chain_setup(seed=17)
        plain = InferenceState(graph, factors).run()
        damped = InferenceState(
            graph, factors, InferenceOptions(damping=0.5)
        ).run()
        # Mixing approaches each message geometrically instead of jumping
        # straight to it, so the same tree needs more passes.
        assert damped.stats.messages > plain.stats.messages

    def test_contradiction_still_escapes_when_damped(self):
        clusters = (Cluster(0, frozenset({A, B})), Cluster(1, frozenset({A, C})))
        graph = ClusterGraph(
            clusters, (Sepset((0, 1), frozenset({A})),), kind="custom"
        )
        f0 = SparseTable((A, B), (2, 3), {(0, 0): 1.0, (0, 2): 1.0})
        f1 = SparseTable((A, C), (2, 2), {(1, 0): 1.0, (1, 1): 1.0})
        state = InferenceState(
            graph, [f0, f1], InferenceOptions(damping=0.5)
        )
        with pytest.raises(ContradictionError):
            state.run()

    def test_damped_runs_are_deterministic(self):
        graph, factors = chain_setup(seed=5)
        options = InferenceOptions(damping=0.3)
        runs = [InferenceState(graph, factors, options).run() for _ in range(2)]
        assert runs[0].assignment == runs[1].assignment
        assert runs[0].stats.messages == runs[1].stats.messages


class TestLoopyColoring:
    def _biased_factors(self, seven_cliques, delta=0.05):
        factors = []
        assigned = set()
        for cluster in seven_cliques:
            table = permutation_factor(cluster.sorted_vars(), 4)
            for variable in cluster.sorted_vars():
                if variable in assigned:
                    continue
                assigned.add(variable)
                rng = random.Random(variable.id)
                preference = list(range(4))
                rng.shuffle(preference)
                weights = {
                    (label,): 1.0 + delta * preference[label] for label in range(4)
                }
                table = table.multiply(
                    SparseTable((variable,), (4,), weights)
                )
            factors.append(table)
        return factors

    def test_symmetric_potentials_leave_labels_tied(
        self, seven_graph, seven_cliques
    ):
        state = InferenceState(
            seven_graph, seven_coloring_factors(seven_cliques)
        )
        posterior = state.run()
        assert posterior.converged
        # Nothing breaks the label symmetry, so every label survives
        # in every marginal and decoding cannot pick a proper coloring.
        for marginal in posterior.marginals.values():
            assert len(marginal) == 4

    def test_biased_potentials_decode_a_proper_coloring(
        self, seven_graph, seven_cliques
    ):
        factors = self._biased_factors(seven_cliques)
        state = InferenceState(seven_graph, factors)
        posterior = state.run()
        assert posterior.converged
        for cluster in seven_cliques:
            labels = [posterior.assignment[v] for v in cluster.sorted_vars()]
            assert len(set(labels)) == len(labels)

    def test_runs_are_deterministic(self, seven_graph, seven_cliques):
        factors = self._biased_factors(seven_cliques)
        runs = [
            InferenceState(seven_graph, factors).run() for _ in range(2)
        ]
        assert runs[0].assignment == runs[1].assignment
        assert runs[0].stats.messages == runs[1].stats.messages
        for variable in runs[0].marginals:
            assert runs[0].marginals[variable] == runs[1].marginals[variable]
