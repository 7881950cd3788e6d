"""Halfspace polyhedra, preimages and LP-certified containment.

A :class:`Polyhedron` is ``{x : G x <= g}``, optionally intersected with the
probability simplex. Containment is decided row by row: each row of the
multiplier matrix ``Y`` is an independent small LP, and the assembled ``Y`` is
re-verified with plain matrix arithmetic before a positive verdict is
returned.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .solver_core import LP_FEAS_TOL, LpFeasibilityProblem, Status, lp_feasible, lp_minimize

MEMBERSHIP_TOL = 1e-9


class Verdict(enum.Enum):
    TRUE = "true"
    FALSE = "false"
    UNKNOWN = "unknown"


@dataclass(frozen=True, eq=False)
class Polyhedron:
    G: np.ndarray
    g: np.ndarray
    on_simplex: bool = False

    def __post_init__(self):
        G = np.asarray(self.G, dtype=float)
        g = np.asarray(self.g, dtype=float).reshape(-1)
        if G.ndim == 1:
            G = G.reshape(len(g), -1) if len(g) else G.reshape(0, len(G))
        if G.ndim != 2 or G.shape[0] != len(g):
            raise ValueError(f"G has shape {G.shape} but g has length {len(g)}")
        if not (np.all(np.isfinite(G)) and np.all(np.isfinite(g))):
            raise ValueError("polyhedron data must be finite")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "on_simplex", bool(self.on_simplex))

    @property
    def dim(self) -> int:
        return self.G.shape[1]

    @property
    def num_rows(self) -> int:
        return self.G.shape[0]

    def slack(self, x) -> np.ndarray:
        """``G x - g``; nonpositive entries are satisfied rows."""
        return self.G @ np.asarray(x, dtype=float) - self.g

    def contains(self, x, tol: float = MEMBERSHIP_TOL) -> bool:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"point has shape {x.shape}, expected ({self.dim},)")
        if self.on_simplex and (x.min(initial=0.0) < -tol or abs(x.sum() - 1.0) > tol):
            return False
        return bool(np.all(self.slack(x) <= tol))

    def stack(self, other: "Polyhedron") -> "Polyhedron":
        if other.dim != self.dim:
            raise ValueError("cannot stack polyhedra of different dimension")
        return Polyhedron(np.vstack([self.G, other.G]), np.concatenate([self.g, other.g]), self.on_simplex)

    def rows(self, idx) -> "Polyhedron":
        idx = np.asarray(idx, dtype=int)
        return Polyhedron(self.G[idx].reshape(len(idx), self.dim), self.g[idx], self.on_simplex)

    def to_dict(self) -> dict:
        return {"n": self.dim, "G": self.G.tolist(), "g": self.g.tolist(), "on_simplex": self.on_simplex}

    @classmethod
    def from_dict(cls, data: dict) -> "Polyhedron":
        try:
            G, g = data["G"], data["g"]
        except KeyError as exc:
            raise ValueError(f"polyhedron JSON is missing field {exc.args[0]!r}") from None
        G = np.asarray(G, dtype=float)
        if G.size == 0:
            G = np.zeros((0, int(data.get("n", 0))))
        return cls(G, g, bool(data.get("on_simplex", False)))


@dataclass(frozen=True, eq=False)
class ContainmentCertificate:
    """Nonnegative multipliers proving containment.

    ``form`` is ``"simplex"`` for ``Y (G - g 1^T) >= H - h 1^T`` or
    ``"general"`` for ``Y G1 = G2, Y g1 <= g2``.
    """

    Y: np.ndarray
    residual: float
    form: str = "simplex"

    def to_dict(self) -> dict:
        out = {"residual": self.residual, "form": self.form, "shape": list(self.Y.shape)}
        nz = np.argwhere(self.Y != 0)
        if len(nz) * 3 < self.Y.size:
            # mostly-zero multipliers (shift certificates) go out as (row, col, value) triplets
            out["Y_sparse"] = [[int(i), int(j), float(self.Y[i, j])] for i, j in nz]
        else:
            out["Y"] = self.Y.tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ContainmentCertificate":
        if "Y_sparse" in data:
            Y = np.zeros(tuple(data["shape"]))
            for i, j, val in data["Y_sparse"]:
                Y[int(i), int(j)] = val
        else:
            Y = np.asarray(data["Y"], dtype=float)
            if Y.size == 0 and "shape" in data:
                Y = Y.reshape(tuple(data["shape"]))
        return cls(Y, float(data["residual"]), data.get("form", "simplex"))


@dataclass(frozen=True, eq=False)
class ContainmentResult:
    verdict: Verdict
    certificate: Optional[ContainmentCertificate] = None
    failing_row: Optional[int] = None
    vacuous: bool = False
    lp_count: int = 0
    message: str = ""

    @property
    def holds(self) -> bool:
        return self.verdict is Verdict.TRUE


@dataclass(frozen=True, eq=False)
class NonemptyResult:
    verdict: Verdict
    witness: Optional[np.ndarray] = None


def conical_rows(P: Polyhedron) -> np.ndarray:
    """``G - g 1^T``; on the simplex ``G x <= g`` iff this times ``x`` is ``<= 0``."""
    return P.G - np.outer(P.g, np.ones(P.dim))


def normalize_conical(P: Polyhedron) -> Polyhedron:
    if not P.on_simplex:
        raise ValueError("conical normalization is only valid on the probability simplex")
    return Polyhedron(conical_rows(P), np.zeros(P.num_rows), True)


def preimage(P: Polyhedron, A) -> Polyhedron:
    """``{x : A x in P}`` as ``P(G A, g)``."""
    A = np.asarray(A, dtype=float)
    if A.shape != (P.dim, P.dim):
        raise ValueError(f"map has shape {A.shape}, expected ({P.dim}, {P.dim})")
    return Polyhedron(P.G @ A, P.g, P.on_simplex)


def simplex_certificate_residual(Y, inner: Polyhedron, outer: Polyhedron) -> float:
    """Worst violation of ``Y >= 0`` and ``Y (G - g1^T) >= H - h1^T``."""
    Y = np.asarray(Y, dtype=float).reshape(outer.num_rows, inner.num_rows)
    gap = conical_rows(outer) - Y @ conical_rows(inner)
    return float(max(gap.max(initial=0.0), (-Y).max(initial=0.0), 0.0))


def general_certificate_residual(Y, inner: Polyhedron, outer: Polyhedron) -> float:
    """Worst violation of ``Y >= 0``, ``Y G1 = G2`` and ``Y g1 <= g2``."""
    Y = np.asarray(Y, dtype=float).reshape(outer.num_rows, inner.num_rows)
    eq = np.abs(Y @ inner.G - outer.G).max(initial=0.0)
    ineq = (Y @ inner.g - outer.g).max(initial=0.0)
    return float(max(eq, ineq, (-Y).max(initial=0.0), 0.0))


def _check_dims(inner: Polyhedron, outer: Polyhedron):
    if inner.dim != outer.dim:
        raise ValueError(f"dimension mismatch: inner is in R^{inner.dim}, outer in R^{outer.dim}")


def nonempty_on_simplex(P: Polyhedron, feas_tol: float = LP_FEAS_TOL) -> NonemptyResult:
    n = P.dim
    A = np.vstack([P.G, np.ones((1, n))])
    b = np.concatenate([P.g, [1.0]])
    sense = ("<=",) * P.num_rows + ("=",)
    out = lp_feasible(LpFeasibilityProblem(A, b, sense, np.ones(n, dtype=bool)), feas_tol)
    if out.status is Status.FEASIBLE:
        return NonemptyResult(Verdict.TRUE, out.witness)
    if out.status is Status.INFEASIBLE:
        return NonemptyResult(Verdict.FALSE)
    return NonemptyResult(Verdict.UNKNOWN)


def nonempty(P: Polyhedron, feas_tol: float = LP_FEAS_TOL) -> NonemptyResult:
    """Nonemptiness of ``P`` in R^n, ignoring ``on_simplex``."""
    prob = LpFeasibilityProblem(P.G, P.g, ("<=",) * P.num_rows, np.zeros(P.dim, dtype=bool))
    out = lp_feasible(prob, feas_tol)
    verdict = {Status.FEASIBLE: Verdict.TRUE, Status.INFEASIBLE: Verdict.FALSE}.get(out.status, Verdict.UNKNOWN)
    return NonemptyResult(verdict, out.witness)


def is_bounded(P: Polyhedron, feas_tol: float = LP_FEAS_TOL) -> Optional[bool]:
    """Whether the recession cone ``{d : G d <= 0}`` is trivial; ``None`` if undecided."""
    n = P.dim
    # Recession directions restricted to the unit box; any nonzero optimum means unbounded.
    A = np.vstack([P.G, np.eye(n), -np.eye(n)])
    b = np.concatenate([np.zeros(P.num_rows), np.ones(2 * n)])
    prob = LpFeasibilityProblem(A, b, ("<=",) * len(b), np.zeros(n, dtype=bool))
    for j in range(n):
        for sign in (1.0, -1.0):
            c = np.zeros(n)
            c[j] = -sign
            out, value = lp_minimize(c, prob, feas_tol)
            if not out.feasible or value is None:
                return None
            if -value > 1e-9:
                return False
    return True


def _matching_rows(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    """For each target row, index of an identical source row or -1."""
    if not len(source) or not len(target):
        return np.full(len(target), -1)
    same = np.all(np.abs(target[:, None, :] - source[None, :, :]) <= 1e-15, axis=2)
    return np.where(same.any(axis=1), same.argmax(axis=1), -1)


def contains_on_simplex(
    inner: Polyhedron,
    outer: Polyhedron,
    feas_tol: float = LP_FEAS_TOL,
    check_nonempty: bool = True,
    exhaustive: bool = False,
) -> ContainmentResult:
    """Decide ``simplex ∩ inner ⊆ outer`` with a simplex-form certificate.

    Row ``i`` of ``Y`` solves ``y >= 0, (G - g1^T)^T y >= (H - h1^T)_i``.
    Zero rows get ``y = 0``, rows that literally appear in the inner system
    get a unit vector and other nonpositive rows get ``y = 0``; none of these
    needs an LP. Unless ``exhaustive`` is set the search stops at the first row with
    no multiplier.

    With ``check_nonempty`` the inner set is first checked to be nonempty, as
    the converse direction of the certificate requires it. Skipping the check
    is safe for positive verdicts: a valid ``Y`` proves containment regardless.
    """
    _check_dims(inner, outer)
    if check_nonempty:
        ne = nonempty_on_simplex(inner, feas_tol)
        if ne.verdict is Verdict.FALSE:
            raise ValueError("inner set has empty intersection with the probability simplex")
        if ne.verdict is Verdict.UNKNOWN:
            return ContainmentResult(Verdict.UNKNOWN, message="nonemptiness check failed")

    C = conical_rows(inner)
    H = conical_rows(outer)
    m1, m2 = inner.num_rows, outer.num_rows
    Y = np.zeros((m2, m1))
    match = _matching_rows(C, H)
    lp_count = 0
    first_fail = None
    for i in range(m2):
        if not np.any(H[i]):
            continue
        if match[i] >= 0:
            Y[i, match[i]] = 1.0
            continue
        if np.all(H[i] <= 0.0):
            continue
        lp_count += 1
        prob = LpFeasibilityProblem(C.T, H[i], (">=",) * len(H[i]), np.ones(m1, dtype=bool))
        out = lp_feasible(prob, feas_tol)
        if out.status is Status.INFEASIBLE:
            if first_fail is None:
                first_fail = i
            if not exhaustive:
                break
            continue
        if out.status is not Status.FEASIBLE:
            return ContainmentResult(Verdict.UNKNOWN, failing_row=i, lp_count=lp_count, message=out.message)
        Y[i] = np.maximum(out.witness, 0.0)
    if first_fail is not None:
        return ContainmentResult(Verdict.FALSE, failing_row=first_fail, lp_count=lp_count)

    residual = simplex_certificate_residual(Y, inner, outer)
    if residual > feas_tol:
        return ContainmentResult(
            Verdict.UNKNOWN, lp_count=lp_count, message=f"certificate residual {residual:.2e} exceeds tolerance"
        )
    return ContainmentResult(Verdict.TRUE, ContainmentCertificate(Y, residual, "simplex"), lp_count=lp_count)


def contains_general(inner: Polyhedron, outer: Polyhedron, feas_tol: float = LP_FEAS_TOL) -> ContainmentResult:
    """Decide ``inner ⊆ outer`` in R^n via ``Y >= 0, Y G1 = G2, Y g1 <= g2``.

    The inner polyhedron must be bounded. An empty inner set is contained in
    anything; that case is reported as ``TRUE`` with ``vacuous=True`` and no
    certificate.
    """
    _check_dims(inner, outer)
    ne = nonempty(inner, feas_tol)
    if ne.verdict is Verdict.UNKNOWN:
        return ContainmentResult(Verdict.UNKNOWN, message="nonemptiness check failed")
    if ne.verdict is Verdict.FALSE:
        return ContainmentResult(Verdict.TRUE, vacuous=True)
    bounded = is_bounded(inner, feas_tol)
    if bounded is None:
        return ContainmentResult(Verdict.UNKNOWN, message="boundedness check failed")
    if not bounded:
        raise ValueError("inner polyhedron is unbounded")

    m1, n = inner.G.shape
    Y = np.zeros((outer.num_rows, m1))
    A = np.vstack([inner.G.T, inner.g[None, :]])
    sense = ("=",) * n + ("<=",)
    lp_count = 0
    for i in range(outer.num_rows):
        lp_count += 1
        b = np.concatenate([outer.G[i], [outer.g[i]]])
        out = lp_feasible(LpFeasibilityProblem(A, b, sense, np.ones(m1, dtype=bool)), feas_tol)
        if out.status is Status.INFEASIBLE:
            return ContainmentResult(Verdict.FALSE, failing_row=i, lp_count=lp_count)
        if out.status is not Status.FEASIBLE:
            return ContainmentResult(Verdict.UNKNOWN, failing_row=i, lp_count=lp_count, message=out.message)
        Y[i] = np.maximum(out.witness, 0.0)
    residual = general_certificate_residual(Y, inner, outer)
    if residual > feas_tol:
        return ContainmentResult(Verdict.UNKNOWN, lp_count=lp_count, message=f"certificate residual {residual:.2e}")
    return ContainmentResult(Verdict.TRUE, ContainmentCertificate(Y, residual, "general"), lp_count=lp_count)


def remove_redundant(P: Polyhedron, feas_tol: float = LP_FEAS_TOL) -> Polyhedron:
    """Drop rows implied (on the simplex) by the remaining rows.

    Rows are visited in reverse so later blocks of a stacked system go first.
    """
    if not P.on_simplex:
        raise ValueError("redundancy removal is implemented for simplex-restricted sets only")
    keep = list(range(P.num_rows))
    for i in reversed(range(P.num_rows)):
        rest = [j for j in keep if j != i]
        res = contains_on_simplex(P.rows(rest), P.rows([i]), feas_tol, check_nonempty=False)
        if res.holds:
            keep = rest
    return P.rows(keep)
