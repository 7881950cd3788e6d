from __future__ import annotations

import json
import time
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from markovsafe.invariant import (
    FiniteDeterminationWarning,
    InvarianceStatus,
    InvariantSetResult,
    Status,
    certify_invariance,
    default_cap,
    first_violation,
    k_estimate,
    maximal_invariant_set,
    membership,
    membership_stepwise,
    verify_result,
)
from markovsafe.markov import propagate, stationary, validate_chain
from markovsafe.polytope import Polyhedron, contains_on_simplex, simplex_certificate_residual

from conftest import M3
from oracles import random_ergodic_chain, random_safe_set, sample_distributions, simulate_worst_slack

seeds = st.integers(0, 2**32 - 1)


def _instance(seed, n=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(3, 7))
    ch = random_ergodic_chain(rng, n)
    v = stationary(ch).v
    safe = random_safe_set(rng, v, extra_rows=int(rng.integers(0, 3)))
    return rng, ch, v, safe


class TestMaximalInvariantSet:
    def test_three_state_terminates_at_one(self, m3, box_safe):
        start = time.perf_counter()
        res = maximal_invariant_set(m3, box_safe)
        assert time.perf_counter() - start < 1.0
        assert res.status is Status.CONVERGED and res.t_star == 1
        assert res.stacked.num_rows == 6
        np.testing.assert_allclose(res.stacked.G[3:], M3)
        assert verify_result(res) <= 1e-8

    def test_whole_simplex(self, m3):
        res = maximal_invariant_set(m3, Polyhedron(np.ones((1, 3)), [1.0], True))
        assert res.t_star == 0

    def test_empty_safe_set(self, m3):
        res = maximal_invariant_set(m3, Polyhedron(np.ones((1, 3)), [0.5], True))
        assert res.status is Status.EMPTY
        assert not membership(res, [1 / 3] * 3)

    def test_cap_reached(self, m3, box_safe):
        res = maximal_invariant_set(m3, box_safe, cap=0)
        assert res.status is Status.CAP_REACHED and res.t_star is None
        assert res.to_dict()["guarantee"] == "only the next 0 steps"
        with pytest.raises(ValueError):
            membership(res, [0.375, 0.375, 0.25])

    def test_requires_simplex_flag(self, m3):
        with pytest.raises(ValueError):
            maximal_invariant_set(m3, Polyhedron(np.eye(3), np.ones(3), False))

    def test_boundary_stationary_point_warns(self, m3):
        safe = Polyhedron(np.eye(3), [0.375, 0.5, 0.5], True)  # v_1 sits on the boundary
        with pytest.warns(FiniteDeterminationWarning):
            maximal_invariant_set(m3, safe, cap=20)

    def test_non_ergodic_warns(self):
        ch = validate_chain(np.eye(3))
        with pytest.warns(FiniteDeterminationWarning):
            res = maximal_invariant_set(ch, Polyhedron(np.eye(3), np.full(3, 0.6), True))
        assert res.t_star == 0

    def test_prune_gives_same_set(self):
        rng, ch, v, safe = _instance(11, n=4)
        full = maximal_invariant_set(ch, safe)
        pruned = maximal_invariant_set(ch, safe, prune=True)
        assert pruned.converged and pruned.stacked.num_rows <= full.stacked.num_rows
        assert contains_on_simplex(full.stacked, pruned.stacked).holds
        assert contains_on_simplex(pruned.stacked, full.stacked).holds
        assert verify_result(pruned) <= 1e-8

    def test_default_cap(self, m3, box_safe):
        assert default_cap(m3, box_safe) == 1000

    @given(seeds)
    def test_random_instances(self, seed):
        rng, ch, v, safe = _instance(seed)
        res = maximal_invariant_set(ch, safe)
        assert res.converged
        K = k_estimate(ch, safe).K
        assert res.t_star <= K
        m = safe.num_rows
        assert res.stacked.num_rows == (res.t_star + 1) * m
        assert verify_result(res) <= 1e-8
        assert certify_invariance(ch, res.stacked).status is InvarianceStatus.INVARIANT
        # monotone stack: O_t+1 inside O_t
        if res.t_star >= 1:
            assert contains_on_simplex(res.stacked, res.stacked.rows(np.arange(res.t_star * m))).holds

    @given(seeds)
    def test_soundness_and_maximality(self, seed):
        rng, ch, v, safe = _instance(seed, n=4)
        res = maximal_invariant_set(ch, safe)
        X = sample_distributions(rng, v, 300)
        horizon = 10 * res.t_star + 100
        worst = simulate_worst_slack(ch.M, safe.G, safe.g, X, horizon)
        early = simulate_worst_slack(ch.M, safe.G, safe.g, X, res.t_star)
        for x, w, e in zip(X, worst, early):
            if membership(res, x):
                assert w <= 1e-8
            else:
                k, row = first_violation(res, x)
                assert k <= res.t_star
                xk = propagate(ch, x, k)
                assert safe.G[row] @ xk - safe.g[row] > 1e-9
                assert e > 1e-9


class TestMembership:
    def test_stationary_member(self, m3, box_safe):
        res = maximal_invariant_set(m3, box_safe)
        assert membership(res, [0.375, 0.375, 0.25])

    def test_two_evaluation_orders_agree(self, m3, box_safe):
        res = maximal_invariant_set(m3, box_safe)
        x0 = [0.6, 0.2, 0.2]
        assert membership(res, x0) == membership_stepwise(res, x0)
        # x1 = M x0 = [0.52, 0.34, 0.14] is safe, and so is x0
        assert membership(res, x0)
        rng = np.random.default_rng(0)
        for x in rng.dirichlet(np.ones(3), 500):
            assert membership(res, x) == membership_stepwise(res, x)

    def test_violating_x0(self, m3, box_safe):
        res = maximal_invariant_set(m3, box_safe)
        assert not membership(res, [0.1, 0.1, 0.8])
        assert first_violation(res, [0.1, 0.1, 0.8]) == (0, 2)

    def test_rejects_non_distribution(self, m3, box_safe):
        res = maximal_invariant_set(m3, box_safe)
        with pytest.raises(ValueError):
            membership(res, [0.5, 0.5, 0.5])


class TestCertifyInvariance:
    def test_whole_simplex(self, m3):
        res = certify_invariance(m3, Polyhedron(np.ones((1, 3)), [1.0], True))
        assert res.status is InvarianceStatus.INVARIANT
        np.testing.assert_array_equal(res.certificate.Y, [[0.0]])

    def test_three_state_sets(self, m3, box_safe):
        assert certify_invariance(m3, box_safe).status is InvarianceStatus.NOT_INVARIANT
        O1 = maximal_invariant_set(m3, box_safe).stacked
        res = certify_invariance(m3, O1)
        assert res.status is InvarianceStatus.INVARIANT
        image = Polyhedron(O1.G @ M3, O1.g, True)
        assert simplex_certificate_residual(res.certificate.Y, O1, image) <= 1e-8

    def test_empty(self, m3):
        res = certify_invariance(m3, Polyhedron(np.ones((1, 3)), [0.2], True))
        assert res.status is InvarianceStatus.EMPTY and res.invariant


class TestKEstimate:
    def test_three_state(self, m3, box_safe):
        est = k_estimate(m3, box_safe)
        assert est.epsilon == pytest.approx(0.125)
        assert est.g_norm == 1.0
        assert est.rho == pytest.approx(0.7)
        assert est.K == 6

    def test_rank_one(self):
        ch = validate_chain(np.full((3, 3), 1 / 3))
        assert k_estimate(ch, Polyhedron(np.eye(3), np.full(3, 0.5), True)).K == 1

    def test_rejects_unsafe_stationary(self, m3):
        with pytest.raises(ValueError):
            k_estimate(m3, Polyhedron(np.eye(3), [0.3, 0.5, 0.5], True))

    def test_rejects_non_stationary_v(self, m3, box_safe):
        with pytest.raises(ValueError):
            k_estimate(m3, box_safe, v=[0.4, 0.3, 0.3])

    def test_bounds_t_star_on_100_instances(self):
        for seed in range(100):
            _, ch, _, safe = _instance(seed)
            res = maximal_invariant_set(ch, safe)
            assert res.converged and res.t_star <= k_estimate(ch, safe).K


class TestSerialization:
    def test_round_trip(self, m3, box_safe):
        res = maximal_invariant_set(m3, box_safe)
        back = InvariantSetResult.from_dict(json.loads(json.dumps(res.to_dict())))
        assert back.t_star == 1
        np.testing.assert_array_equal(back.stacked.G, res.stacked.G)
        assert verify_result(back) <= 1e-8
        assert len(back.history) == 2

    def test_history_csv(self, m3, box_safe):
        csv = maximal_invariant_set(m3, box_safe).history_csv().splitlines()
        assert csv[0] == "t,rows,verdict,lp_count,failing_row"
        assert csv[1].startswith("0,3,false")
        assert csv[2].startswith("1,6,true")

    def test_missing_field(self):
        with pytest.raises(ValueError, match="status"):
            InvariantSetResult.from_dict({})
