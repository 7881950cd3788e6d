from __future__ import annotations

import json

import numpy as np
import pytest

from markovsafe.invariant import maximal_invariant_set
from markovsafe.markov import (
    Graph,
    is_ergodic,
    is_reversible,
    metropolis_hastings,
    respects_graph,
    spectral_gap_rho,
    validate_chain,
)
from markovsafe.polytope import Polyhedron
from markovsafe.solver_core import SpectralModel, Status, symmetric_eigenvalues
from markovsafe.synthesis import (
    FixedDModel,
    InfeasibleAtLambdaOne,
    Mode,
    Objective,
    SynthesisProblem,
    SynthesisResult,
    check_target,
    fixed_d_lmi_feasible,
    objective_self_loop_mass,
    objective_transition_frequency,
    reversible_parametrization,
    synthesize,
)

from conftest import M3


def random_symmetric_graph(rng, n, p=0.4):
    A = np.triu((rng.random((n, n)) < p).astype(int), 1)
    A = A + A.T + np.eye(n, dtype=int)
    for i in range(n - 1):
        A[i, i + 1] = A[i + 1, i] = 1
    perm = rng.permutation(n)
    return Graph(A[np.ix_(perm, perm)])


def random_target(rng, n):
    v = rng.dirichlet(np.ones(n)) + 0.2 / n
    return v / v.sum()


def check_result(res: SynthesisResult, problem: SynthesisProblem):
    ch = validate_chain(res.chain.M)
    v = problem.v
    for name, val in res.residuals.items():
        if name == "reversibility" and res.mode_used is Mode.FIXED_D:
            continue  # not a constraint of the fixed-D route
        assert val <= 1e-7, name
    assert respects_graph(ch, problem.graph)
    assert np.abs(ch.M @ v - v).max() <= 1e-8
    rho = spectral_gap_rho(ch.M, v)
    assert rho == pytest.approx(res.rho_achieved, abs=1e-12)
    assert rho <= res.lambda_star + 1e-6
    if res.lambda_star < 1:
        assert is_ergodic(ch)
    if res.mode_used is Mode.REVERSIBLE:
        assert is_reversible(ch, v, 1e-7)
        r = np.sqrt(v)
        S = ch.M * (r[None, :] / r[:, None]) - np.outer(r, r)
        eig = symmetric_eigenvalues(0.5 * (S + S.T))
        assert eig[0] >= -res.lambda_star - 1e-6 and eig[-1] <= res.lambda_star + 1e-6


class TestObjectives:
    def test_identity(self):
        assert objective_transition_frequency(np.eye(3), np.full(3, 1 / 3)) == 0.0

    def test_rank_one(self):
        assert objective_transition_frequency(np.full((3, 3), 1 / 3), np.full(3, 1 / 3)) == pytest.approx(2 / 3)

    def test_three_state(self):
        v = [0.375, 0.375, 0.25]
        assert objective_transition_frequency(M3, v) == pytest.approx(0.6)
        assert objective_self_loop_mass(M3, v) == pytest.approx(0.4)


class TestSynthesize:
    def test_complete_three_graph(self):
        prob = SynthesisProblem(Graph.complete(3), np.full(3, 1 / 3))
        res = synthesize(prob)
        assert res.lambda_star <= 1e-4
        assert np.abs(res.chain.M - 1 / 3).max() <= 1e-4
        check_result(res, prob)

    def test_single_node(self):
        prob = SynthesisProblem(Graph(np.ones((1, 1), int)), np.ones(1))
        res = synthesize(prob)
        np.testing.assert_array_equal(res.chain.M, [[1.0]])
        assert res.lambda_star == 0.0

    def test_two_node_path(self):
        prob = SynthesisProblem(Graph.path(2), np.full(2, 0.5))
        res = synthesize(prob)
        assert res.lambda_star <= 1e-4
        np.testing.assert_allclose(res.chain.M, np.full((2, 2), 0.5), atol=1e-4)
        check_result(res, prob)

    def test_two_node_path_one_parameter_family(self):
        # M = [[a, 1-a], [1-a, a]] has rho = |2a - 1|; bounding a from below pins the optimum
        prob = SynthesisProblem(Graph.path(2), np.full(2, 0.5), entry_bounds=((0, 0, 0.8, np.inf),), lambda_tol=1e-5)
        res = synthesize(prob)
        assert res.lambda_star == pytest.approx(0.6, abs=2e-5)
        check_result(res, prob)

    def test_objective_max_self_loop(self):
        graph = Graph.path(3)
        v = np.array([0.5, 0.3, 0.2])
        plain = synthesize(SynthesisProblem(graph, v))
        obj = synthesize(SynthesisProblem(graph, v, objective=Objective.MAX_SELF_LOOP_MASS))
        check_result(obj, SynthesisProblem(graph, v))
        assert obj.objective_value == pytest.approx(objective_self_loop_mass(obj.chain.M, v))
        assert obj.lambda_star <= plain.lambda_star + 2 * 1e-4

    def test_fixed_d_mode(self):
        prob = SynthesisProblem(Graph.complete(3), np.array([0.5, 0.3, 0.2]), mode=Mode.FIXED_D)
        res = synthesize(prob)
        assert res.mode_used is Mode.FIXED_D
        assert res.lambda_star <= 1e-4
        check_result(res, prob)

    def test_fallback_to_fixed_d(self):
        # a directed 3-cycle has no two-way edges, so the only reversible candidate is I,
        # which the self-loop bounds exclude
        A = np.eye(3, dtype=int) + np.roll(np.eye(3, dtype=int), 1, axis=0)
        graph = Graph(A)
        bounds = tuple((i, i, 0.0, 0.5) for i in range(3))
        prob = SynthesisProblem(graph, np.full(3, 1 / 3), entry_bounds=bounds)
        res = synthesize(prob)
        assert res.mode_used is Mode.FIXED_D
        assert res.lambda_star < 1
        check_result(res, prob)

    def test_infeasible_at_one(self):
        bounds = ((0, 1, 0.9, 1.0), (1, 0, 0.9, 1.0))
        prob = SynthesisProblem(Graph.path(2), np.array([0.8, 0.2]), entry_bounds=bounds)
        with pytest.raises(InfeasibleAtLambdaOne):
            synthesize(prob)

    def test_baseline_dominance(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            n = int(rng.integers(3, 9))
            prob = SynthesisProblem(random_symmetric_graph(rng, n), random_target(rng, n))
            res = synthesize(prob, use_baseline=False)
            mh = spectral_gap_rho(metropolis_hastings(prob.graph, prob.v).M, prob.v)
            assert res.rho_achieved <= mh + 1e-6
            assert res.baseline_rho == pytest.approx(mh)
            check_result(res, prob)

    def test_bisection_is_a_step_function(self):
        rng = np.random.default_rng(4)
        prob = SynthesisProblem(random_symmetric_graph(rng, 5), random_target(rng, 5))
        res = synthesize(prob, use_baseline=False)
        feasible = [lam for lam, verdict in res.history if verdict == "feasible"]
        infeasible = [lam for lam, verdict in res.history if verdict == "infeasible"]
        assert infeasible and feasible
        assert max(infeasible) < min(feasible)
        assert min(feasible) - max(infeasible) <= prob.lambda_tol
        # an independent model agrees on a grid of levels
        model = SpectralModel(reversible_parametrization(prob.graph, prob.v).template)
        verdicts = [model.solve(lam).status for lam in np.linspace(0, 1, 11)]
        flags = [s is Status.FEASIBLE for s in verdicts if s is not Status.NUMERICAL_FAILURE]
        assert flags == sorted(flags)

    def test_feeds_invariant_set(self):
        rng = np.random.default_rng(7)
        n = 5
        prob = SynthesisProblem(random_symmetric_graph(rng, n), random_target(rng, n))
        res = synthesize(prob)
        safe = Polyhedron(np.eye(n), prob.v + 0.05, True)
        check_target(prob.v, safe)
        assert maximal_invariant_set(res.chain, safe).converged


class TestFixedD:
    def test_rank_one_at_zero(self):
        v = np.array([0.5, 0.3, 0.2])
        out = fixed_d_lmi_feasible(Graph.complete(3), v, np.diag(1 / v), 0.0)
        assert out.feasible
        np.testing.assert_allclose(out.M, np.outer(v, np.ones(3)), atol=1e-5)

    def test_two_node_half(self):
        v = np.full(2, 0.5)
        out = fixed_d_lmi_feasible(Graph.path(2), v, np.diag(1 / v), 0.5)
        assert out.feasible
        assert spectral_gap_rho(out.M, v) <= 0.5 + 1e-6

    def test_witnesses_pass_eigenvalue_check(self):
        rng = np.random.default_rng(2)
        graph = random_symmetric_graph(rng, 5)
        v = random_target(rng, 5)
        model = FixedDModel(graph, v)
        for lam in (0.3, 0.6, 0.9, 1.0):
            out = model.solve(lam)
            if out.feasible:
                assert spectral_gap_rho(out.M, v) <= lam + 1e-6
                assert validate_chain(out.M, tol=1e-7)

    def test_bounds_are_respected(self):
        v = np.full(2, 0.5)
        model = FixedDModel(Graph.path(2), v, entry_bounds=((0, 0, 0.8, 1.0),))
        assert not model.solve(0.5).feasible
        out = model.solve(0.7)
        assert out.feasible and out.M[0, 0] >= 0.8 - 1e-7


class TestProblemValidation:
    def test_rejects_bad_v(self):
        with pytest.raises(ValueError):
            SynthesisProblem(Graph.complete(3), np.array([0.5, 0.5, 0.0]))
        with pytest.raises(ValueError):
            SynthesisProblem(Graph.complete(3), np.array([0.5, 0.5, 0.5]))
        with pytest.raises(ValueError):
            SynthesisProblem(Graph.complete(3), np.array([0.5, 0.5]))

    def test_rejects_non_primitive_graph(self):
        with pytest.raises(ValueError, match="primitive"):
            SynthesisProblem(Graph(np.array([[0, 1], [1, 0]])), np.full(2, 0.5))

    def test_rejects_singular_d(self):
        with pytest.raises(ValueError):
            SynthesisProblem(Graph.complete(2), np.full(2, 0.5), mode=Mode.FIXED_D, D=np.zeros((2, 2)))

    def test_check_target(self):
        with pytest.raises(ValueError):
            check_target([0.5, 0.5], Polyhedron(np.eye(2), [0.5, 0.6], True))
        check_target([0.5, 0.5], Polyhedron(np.eye(2), [0.6, 0.6], True))

    def test_round_trips(self):
        prob = SynthesisProblem(Graph.path(2), np.full(2, 0.5), entry_bounds=((0, 0, 0.8, np.inf),),
                                objective=Objective.MIN_TRANSITION_FREQUENCY)
        back = SynthesisProblem.from_dict(json.loads(json.dumps(prob.to_dict())))
        assert back.entry_bounds == prob.entry_bounds and back.objective is prob.objective
        res = synthesize(prob)
        again = SynthesisResult.from_dict(json.loads(json.dumps(res.to_dict())))
        np.testing.assert_array_equal(again.chain.M, res.chain.M)
        assert again.residuals == res.residuals and again.lambda_star == res.lambda_star
