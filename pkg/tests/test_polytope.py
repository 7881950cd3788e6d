from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from markovsafe.polytope import (
    ContainmentCertificate,
    Polyhedron,
    Verdict,
    contains_general,
    contains_on_simplex,
    general_certificate_residual,
    is_bounded,
    nonempty,
    nonempty_on_simplex,
    normalize_conical,
    preimage,
    remove_redundant,
    simplex_certificate_residual,
)

from conftest import M3, BOX_G, BOX_g
from oracles import contains_by_vertices

seeds = st.integers(0, 2**32 - 1)


def _random_simplex_set(rng, n, rows):
    G = rng.normal(size=(rows, n))
    x = rng.dirichlet(np.ones(n))
    g = G @ x + rng.uniform(0.0, 0.5, rows)  # x is inside, so the set meets the simplex
    return Polyhedron(G, g, True)


def _random_bounded_3d(rng, center, spread):
    dirs = rng.normal(size=(6, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    G = np.vstack([np.eye(3), -np.eye(3), dirs])
    g = G @ center + rng.uniform(*spread, len(G))
    return Polyhedron(G, g)


class TestPreimage:
    def test_identity_map(self):
        P = Polyhedron(np.eye(3), np.ones(3))
        Q = preimage(P, np.eye(3))
        np.testing.assert_array_equal(Q.G, P.G)
        np.testing.assert_array_equal(Q.g, P.g)

    def test_m3_rows(self):
        Q = preimage(Polyhedron(BOX_G, BOX_g), M3)
        np.testing.assert_array_equal(Q.G, M3)
        np.testing.assert_array_equal(Q.g, BOX_g)

    def test_membership_cross_check(self):
        rng = np.random.default_rng(0)
        P = Polyhedron(rng.normal(size=(5, 3)), rng.uniform(0, 1, 5))
        A = rng.normal(size=(3, 3))
        Q = preimage(P, A)
        for x in rng.normal(size=(1000, 3)):
            assert Q.contains(x) == P.contains(A @ x)

    @given(seeds)
    def test_composition(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 6))
        P = Polyhedron(rng.normal(size=(4, n)), rng.normal(size=4))
        A, B = rng.normal(size=(n, n)), rng.normal(size=(n, n))
        lhs, rhs = preimage(preimage(P, A), B), preimage(P, A @ B)
        np.testing.assert_allclose(lhs.G, rhs.G, atol=1e-12 * max(1.0, np.abs(rhs.G).max()))
        np.testing.assert_array_equal(lhs.g, rhs.g)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            preimage(Polyhedron(np.eye(3), np.ones(3)), np.eye(2))


class TestNormalizeConical:
    def test_formula(self):
        P = normalize_conical(Polyhedron(BOX_G, BOX_g, True))
        np.testing.assert_allclose(P.G, np.eye(3) - BOX_g[:, None])
        np.testing.assert_array_equal(P.g, np.zeros(3))

    def test_membership_preserved(self):
        rng = np.random.default_rng(1)
        P = Polyhedron(BOX_G, BOX_g, True)
        Q = normalize_conical(P)
        for x in rng.dirichlet(np.ones(3), 1000):
            assert np.all(P.G @ x <= P.g) == np.all(Q.G @ x <= 1e-15)

    def test_idempotent(self):
        P = normalize_conical(Polyhedron(BOX_G, BOX_g, True))
        Q = normalize_conical(P)
        np.testing.assert_array_equal(P.G, Q.G)
        np.testing.assert_array_equal(P.g, Q.g)

    def test_rejects_unrestricted(self):
        with pytest.raises(ValueError):
            normalize_conical(Polyhedron(BOX_G, BOX_g, False))


class TestNonempty:
    def test_box(self):
        res = nonempty_on_simplex(Polyhedron(np.eye(3), np.ones(3)))
        assert res.verdict is Verdict.TRUE
        assert abs(res.witness.sum() - 1) < 1e-9 and res.witness.min() >= -1e-9

    def test_mass_cap(self):
        assert nonempty_on_simplex(Polyhedron(np.ones((1, 3)), [0.5])).verdict is Verdict.FALSE

    def test_three_state(self):
        P = Polyhedron(BOX_G, BOX_g, True)
        res = nonempty_on_simplex(P)
        assert res.verdict is Verdict.TRUE
        assert P.contains(res.witness, tol=1e-8)
        assert P.contains(np.array([0.5, 0.25, 0.25]))

    def test_general(self):
        assert nonempty(Polyhedron(np.array([[1.0], [-1.0]]), [1.0, -2.0])).verdict is Verdict.FALSE
        assert nonempty(Polyhedron(np.array([[1.0], [-1.0]]), [2.0, -1.0])).verdict is Verdict.TRUE


class TestContainsOnSimplex:
    def test_reflexive_identity_certificate(self):
        P = Polyhedron(np.random.default_rng(2).normal(size=(4, 3)), np.ones(4), True)
        res = contains_on_simplex(P, P)
        assert res.holds
        np.testing.assert_allclose(res.certificate.Y, np.eye(4))

    def test_simplex_tautology(self):
        inner = Polyhedron(BOX_G, BOX_g, True)
        res = contains_on_simplex(inner, Polyhedron(np.ones((1, 3)), [1.0], True))
        assert res.holds
        np.testing.assert_array_equal(res.certificate.Y, np.zeros((1, 3)))

    def test_three_state_stopping_tests(self):
        X = Polyhedron(BOX_G, BOX_g, True)
        O1 = X.stack(preimage(X, M3))
        assert contains_on_simplex(O1, preimage(X, M3 @ M3)).holds
        res = contains_on_simplex(X, preimage(X, M3))
        assert res.verdict is Verdict.FALSE
        assert res.certificate is None

    def test_empty_inner_rejected(self):
        with pytest.raises(ValueError):
            contains_on_simplex(Polyhedron(np.ones((1, 3)), [0.5], True), Polyhedron(np.eye(3), np.ones(3), True))

    @given(seeds)
    def test_sampling_falsifier_and_certificate(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 5))
        inner = _random_simplex_set(rng, n, int(rng.integers(1, 4)))
        outer = _random_simplex_set(rng, n, int(rng.integers(1, 4)))
        res = contains_on_simplex(inner, outer, exhaustive=True)
        assert res.verdict is not Verdict.UNKNOWN
        X = rng.dirichlet(np.ones(n), 10_000)
        X = X[np.all(X @ inner.G.T <= inner.g, axis=1)]
        escapes = (X @ outer.G.T - outer.g).max(axis=1, initial=-np.inf) > 1e-6 if len(X) else np.zeros(0, bool)
        if escapes.any():
            assert res.verdict is Verdict.FALSE
        if res.holds:
            Y = res.certificate.Y
            assert Y.min() >= -1e-12
            assert simplex_certificate_residual(Y, inner, outer) <= 1e-8

    @given(seeds)
    def test_transitive(self, seed):
        rng = np.random.default_rng(seed)
        n = 3
        A = _random_simplex_set(rng, n, 3)
        B = Polyhedron(A.G, A.g + rng.uniform(0, 0.3, 3), True)
        C = Polyhedron(B.G[:2], B.g[:2] + rng.uniform(0, 0.3, 2), True)
        ab, bc, ac = contains_on_simplex(A, B), contains_on_simplex(B, C), contains_on_simplex(A, C)
        assert ab.holds and bc.holds
        assert ac.holds


class TestContainsGeneral:
    def test_unit_box_in_double_box(self):
        G = np.vstack([np.eye(2), -np.eye(2)])
        res = contains_general(Polyhedron(G, np.ones(4)), Polyhedron(G, 2 * np.ones(4)))
        assert res.holds
        assert general_certificate_residual(res.certificate.Y, Polyhedron(G, np.ones(4)), Polyhedron(G, 2 * np.ones(4))) <= 1e-8

    def test_disjoint_box(self):
        G = np.vstack([np.eye(2), -np.eye(2)])
        shifted = Polyhedron(G, np.array([6.0, 6.0, -4.0, -4.0]))
        assert contains_general(Polyhedron(G, np.ones(4)), shifted).verdict is Verdict.FALSE

    def test_vertex_oracle_50_pairs(self):
        rng = np.random.default_rng(3)
        verdicts = []
        for _ in range(50):
            c = rng.normal(size=3)
            inner = _random_bounded_3d(rng, c, (0.3, 1.0))
            outer = _random_bounded_3d(rng, c + rng.normal(scale=0.3, size=3), (0.5, 2.0))
            res = contains_general(inner, outer)
            expected = contains_by_vertices(inner.G, inner.g, outer.G, outer.g)
            assert res.holds == expected
            if res.holds:
                assert general_certificate_residual(res.certificate.Y, inner, outer) <= 1e-8
            verdicts.append(expected)
        assert 0 < sum(verdicts) < 50  # both outcomes exercised

    def test_empty_inner_is_vacuous(self):
        inner = Polyhedron(np.array([[1.0], [-1.0]]), [0.0, -1.0])
        res = contains_general(inner, Polyhedron(np.array([[1.0]]), [-5.0]))
        assert res.holds and res.vacuous and res.certificate is None

    def test_unbounded_inner_rejected(self):
        half = Polyhedron(np.array([[1.0, 0.0]]), [1.0])
        assert is_bounded(half) is False
        with pytest.raises(ValueError):
            contains_general(half, Polyhedron(np.array([[1.0, 0.0]]), [2.0]))

    @given(seeds)
    def test_reflexive(self, seed):
        rng = np.random.default_rng(seed)
        P = _random_bounded_3d(rng, rng.normal(size=3), (0.2, 1.0))
        assert contains_general(P, P).holds


class TestRedundancyAndSerialization:
    @given(seeds)
    def test_remove_redundant_keeps_the_set(self, seed):
        rng = np.random.default_rng(seed)
        P = _random_simplex_set(rng, 3, 5)
        Q = remove_redundant(P)
        assert Q.num_rows <= P.num_rows
        assert contains_on_simplex(P, Q).holds and contains_on_simplex(Q, P).holds

    def test_round_trip(self):
        P = Polyhedron(BOX_G, BOX_g, True)
        Q = Polyhedron.from_dict(P.to_dict())
        np.testing.assert_array_equal(P.G, Q.G)
        assert Q.on_simplex
        empty = Polyhedron.from_dict(Polyhedron(np.zeros((0, 4)), np.zeros(0), True).to_dict())
        assert empty.G.shape == (0, 4)

    def test_sparse_certificate_round_trip(self):
        Y = np.zeros((6, 6))
        Y[1, 0] = 0.5
        cert = ContainmentCertificate(Y, 0.0)
        data = cert.to_dict()
        assert "Y_sparse" in data
        np.testing.assert_array_equal(ContainmentCertificate.from_dict(data).Y, Y)
        dense = ContainmentCertificate(np.ones((2, 2)), 0.0).to_dict()
        assert "Y" in dense

    def test_validation(self):
        with pytest.raises(ValueError):
            Polyhedron(np.eye(2), np.ones(3))
        with pytest.raises(ValueError):
            Polyhedron(np.eye(2), [np.nan, 1.0])
        with pytest.raises(ValueError):
            Polyhedron.from_dict({"G": [[1.0]]})
