"""Maximal positively invariant subsets of ``simplex ∩ {G x <= g}``.

The iteration keeps the stacked system ``[G; G M; ...; G M^t] x <= [g; ...; g]``
and stops as soon as a multiplier certificate shows that the stack already
implies the next block ``G M^(t+1) x <= g``.
"""

from __future__ import annotations

import enum
import io
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .markov import MarkovChain, NotErgodic, check_distribution, is_ergodic, spectral_gap_rho, stationary
from .polytope import (
    MEMBERSHIP_TOL,
    ContainmentCertificate,
    Polyhedron,
    Verdict,
    conical_rows,
    contains_on_simplex,
    nonempty_on_simplex,
    remove_redundant,
    simplex_certificate_residual,
)
from .solver_core import LP_FEAS_TOL, SolverError

log = logging.getLogger(__name__)

CERT_TOL = 1e-8
DEFAULT_CAP = 1000


class FiniteDeterminationWarning(UserWarning):
    """The stationary point is not strictly inside the safe set."""


class Status(enum.Enum):
    CONVERGED = "converged"
    CAP_REACHED = "iteration_cap_reached"
    EMPTY = "empty_constraint_set"


class InvarianceStatus(enum.Enum):
    INVARIANT = "invariant"
    NOT_INVARIANT = "not_invariant"
    EMPTY = "empty"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class IterationRecord:
    t: int
    rows: int
    verdict: str
    lp_count: int
    failing_row: Optional[int] = None


@dataclass(frozen=True, eq=False)
class InvariantSetResult:
    """Outcome of :func:`maximal_invariant_set`.

    ``t`` is ``t*`` when converged and the number of completed iterations
    when the cap was hit; a capped stack only guarantees safety for the next
    ``t`` steps.
    """

    status: Status
    t: int
    stacked: Polyhedron
    base: Polyhedron
    M: np.ndarray
    stop_certificate: Optional[ContainmentCertificate] = None
    invariance_certificate: Optional[ContainmentCertificate] = None
    history: List[IterationRecord] = field(default_factory=list)
    pruned: bool = False

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED

    @property
    def t_star(self) -> Optional[int]:
        return self.t if self.converged else None

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "t_star": self.t_star,
            "t_reached": self.t,
            "guarantee": (
                "all future steps" if self.converged
                else f"only the next {self.t} steps" if self.status is Status.CAP_REACHED
                else "no safe initial distribution"
            ),
            "stacked": self.stacked.to_dict(),
            "base": self.base.to_dict(),
            "M": self.M.tolist(),
            "stop_certificate": None if self.stop_certificate is None else self.stop_certificate.to_dict(),
            "invariance_certificate": (
                None if self.invariance_certificate is None else self.invariance_certificate.to_dict()
            ),
            "history": [rec.__dict__ for rec in self.history],
            "pruned": self.pruned,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "InvariantSetResult":
        try:
            status = Status(data["status"])
            cert = data.get("stop_certificate")
            inv = data.get("invariance_certificate")
            return cls(
                status=status,
                t=int(data["t_reached"]),
                stacked=Polyhedron.from_dict(data["stacked"]),
                base=Polyhedron.from_dict(data["base"]),
                M=np.asarray(data["M"], dtype=float),
                stop_certificate=None if cert is None else ContainmentCertificate.from_dict(cert),
                invariance_certificate=None if inv is None else ContainmentCertificate.from_dict(inv),
                history=[IterationRecord(**rec) for rec in data.get("history", [])],
                pruned=bool(data.get("pruned", False)),
            )
        except KeyError as exc:
            raise ValueError(f"invariant-set JSON is missing field {exc.args[0]!r}") from None

    def history_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,rows,verdict,lp_count,failing_row\n")
        for rec in self.history:
            fr = "" if rec.failing_row is None else rec.failing_row
            buf.write(f"{rec.t},{rec.rows},{rec.verdict},{rec.lp_count},{fr}\n")
        return buf.getvalue()


@dataclass(frozen=True)
class KEstimate:
    epsilon: float
    g_norm: float
    rho: float
    K: Optional[int]  # None when the estimate is unbounded

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def k_estimate(chain: MarkovChain, safe: Polyhedron, v=None) -> KEstimate:
    """Iteration-count estimate ``ceil(log(eps / |||G|||_inf) / log(rho))``.

    ``eps = min(g - G v)`` and ``rho = rho(M - v 1^T)``. It is a rough and
    usually pessimistic diagnostic; nothing stops on it. A rank-one chain
    (``rho = 0``) gets ``K = 1``, and so does any case where the log ratio
    is nonpositive.
    """
    if v is None:
        v = stationary(chain).v
    v = check_distribution(v, chain.n, name="v")
    slack = safe.g - safe.G @ v
    if safe.num_rows and slack.min() <= 0:
        raise ValueError(f"estimate needs G v < g strictly; smallest margin is {slack.min():.3e}")
    if np.abs(chain.M @ v - v).max() > 1e-8:
        raise ValueError("v is not stationary for this chain")
    rho = spectral_gap_rho(chain.M, v)
    if rho >= 1.0 - 1e-12:
        raise ValueError(f"estimate needs rho < 1, got {rho:.12g}")
    eps = float(slack.min()) if safe.num_rows else math.inf
    g_norm = float(np.abs(safe.G).sum(axis=1).max()) if safe.num_rows else 0.0
    if rho <= 1e-14 or g_norm == 0.0 or eps >= g_norm:
        return KEstimate(eps, g_norm, rho, 1)
    K = math.ceil(math.log(eps / g_norm) / math.log(rho))
    return KEstimate(eps, g_norm, rho, max(K, 1))


def _stationary_margin(chain: MarkovChain, safe: Polyhedron):
    """Stationary vector and ``min(g - G v)``, or ``(None, None)`` for non-ergodic chains."""
    if not is_ergodic(chain):
        return None, None
    v = stationary(chain).v
    # rows that hold on the whole simplex can never bind
    live = np.any(conical_rows(safe) > 0, axis=1)
    margin = float((safe.g - safe.G @ v)[live].min()) if live.any() else math.inf
    return v, margin


def default_cap(chain: MarkovChain, safe: Polyhedron) -> int:
    try:
        K = k_estimate(chain, safe).K
    except (ValueError, NotErgodic):
        return DEFAULT_CAP
    return max(2 * K, DEFAULT_CAP)


def maximal_invariant_set(
    chain: MarkovChain,
    safe: Polyhedron,
    cap: Optional[int] = None,
    feas_tol: float = LP_FEAS_TOL,
    prune: bool = False,
) -> InvariantSetResult:
    """Largest positively invariant subset of ``simplex ∩ safe`` under ``x -> M x``.

    Args:
        chain: validated Markov chain.
        safe: safety constraints; must have ``on_simplex`` set.
        cap: maximum number of iterations. Defaults to ``max(2 K, 1000)``
            when the iteration estimate is available and 1000 otherwise.
        feas_tol: LP and certificate tolerance.
        prune: drop redundant rows after each appended block. The set is
            unchanged, only its description shrinks.

    Raises:
        SolverError: an LP could not be decided.
    """
    if not safe.on_simplex:
        raise ValueError("safety set must be restricted to the probability simplex (on_simplex=True)")
    if safe.dim != chain.n:
        raise ValueError(f"safety set lives in R^{safe.dim} but chain has {chain.n} states")
    M = chain.M

    ne = nonempty_on_simplex(safe, feas_tol)
    if ne.verdict is Verdict.UNKNOWN:
        raise SolverError("could not decide whether the safety set meets the simplex")
    if ne.verdict is Verdict.FALSE:
        return InvariantSetResult(Status.EMPTY, 0, safe, safe, M)

    v, margin = _stationary_margin(chain, safe)
    if v is None:
        warnings.warn("chain is not ergodic; finite termination is not guaranteed", FiniteDeterminationWarning)
    elif margin <= 0:
        warnings.warn(
            f"stationary distribution is not strictly safe (min margin {margin:.3e}); "
            "finite termination is not guaranteed",
            FiniteDeterminationWarning,
        )
    if cap is None:
        cap = default_cap(chain, safe)

    stacked = safe
    block = safe.G
    history: List[IterationRecord] = []
    t = 0
    while True:
        block = block @ M
        nxt = Polyhedron(block, safe.g, True)
        res = contains_on_simplex(stacked, nxt, feas_tol, check_nonempty=False)
        history.append(IterationRecord(t, stacked.num_rows, res.verdict.value, res.lp_count, res.failing_row))
        log.debug("t=%d rows=%d verdict=%s", t, stacked.num_rows, res.verdict.value)
        if res.verdict is Verdict.UNKNOWN:
            raise SolverError(f"stopping test at t={t} undecided: {res.message}")
        if res.holds:
            inv = _invariance_from_stop(stacked, res.certificate, M, safe.num_rows, feas_tol, prune)
            return InvariantSetResult(
                Status.CONVERGED, t, stacked, safe, M, res.certificate, inv, history, prune
            )
        if t >= cap:
            return InvariantSetResult(Status.CAP_REACHED, t, stacked, safe, M, None, None, history, prune)
        stacked = stacked.stack(nxt)
        if prune:
            stacked = remove_redundant(stacked, feas_tol)
        t += 1


def _invariance_from_stop(stacked, stop_cert, M, m, feas_tol, pruned):
    """Certificate that ``simplex ∩ stacked`` maps into itself.

    Without pruning, block k of ``stacked @ M`` is block k+1 of ``stacked`` for
    every block but the last, and the last is exactly what the stopping test
    certified. So the certificate is a shift plus the stopping multipliers.
    """
    image = Polyhedron(stacked.G @ M, stacked.g, True)
    if pruned:
        res = contains_on_simplex(stacked, image, feas_tol, check_nonempty=False)
        return res.certificate if res.holds else None
    rows = stacked.num_rows
    Y = np.zeros((rows, rows))
    Y[: rows - m, m:] = np.eye(rows - m)
    Y[rows - m:] = stop_cert.Y
    residual = simplex_certificate_residual(Y, stacked, image)
    if residual > feas_tol:
        res = contains_on_simplex(stacked, image, feas_tol, check_nonempty=False)
        return res.certificate if res.holds else None
    return ContainmentCertificate(Y, residual, "simplex")


def membership(result: InvariantSetResult, x0, tol: float = MEMBERSHIP_TOL) -> bool:
    """Whether ``x0`` stays safe forever, i.e. lies in the computed maximal set."""
    if result.status is Status.CAP_REACHED:
        raise ValueError("membership needs a converged result; the iteration cap was reached")
    x0 = check_distribution(x0, result.stacked.dim)
    if result.status is Status.EMPTY:
        return False
    return bool(np.all(result.stacked.slack(x0) <= tol))


def membership_stepwise(result: InvariantSetResult, x0, tol: float = MEMBERSHIP_TOL) -> bool:
    """Same verdict as :func:`membership`, by simulating ``x[0..t*]`` and testing each."""
    if result.status is Status.CAP_REACHED:
        raise ValueError("membership needs a converged result; the iteration cap was reached")
    x = check_distribution(x0, result.stacked.dim).copy()
    if result.status is Status.EMPTY:
        return False
    for k in range(result.t + 1):
        if np.any(result.base.slack(x) > tol):
            return False
        x = result.M @ x
    return True


def first_violation(result: InvariantSetResult, x0, tol: float = MEMBERSHIP_TOL):
    """``(k, row)`` of the first stacked row violated by ``x0``, or ``None``.

    Row ``r`` of the unpruned stack is constraint ``r % m`` at step ``r // m``.
    """
    slack = result.stacked.slack(check_distribution(x0, result.stacked.dim))
    bad = np.flatnonzero(slack > tol)
    if not len(bad):
        return None
    m = result.base.num_rows
    r = int(bad[0])
    return r // m, r % m


@dataclass(frozen=True, eq=False)
class InvarianceResult:
    status: InvarianceStatus
    certificate: Optional[ContainmentCertificate] = None

    @property
    def invariant(self) -> bool:
        return self.status in (InvarianceStatus.INVARIANT, InvarianceStatus.EMPTY)


def certify_invariance(chain: MarkovChain, P: Polyhedron, feas_tol: float = LP_FEAS_TOL) -> InvarianceResult:
    """Check ``Y (G - g1^T) >= (G - g1^T) M`` for some ``Y >= 0``."""
    if P.dim != chain.n:
        raise ValueError(f"polyhedron lives in R^{P.dim} but chain has {chain.n} states")
    Ps = Polyhedron(P.G, P.g, True)
    ne = nonempty_on_simplex(Ps, feas_tol)
    if ne.verdict is Verdict.FALSE:
        return InvarianceResult(InvarianceStatus.EMPTY)
    if ne.verdict is Verdict.UNKNOWN:
        return InvarianceResult(InvarianceStatus.UNKNOWN)
    res = contains_on_simplex(Ps, Polyhedron(P.G @ chain.M, P.g, True), feas_tol, check_nonempty=False)
    if res.verdict is Verdict.TRUE:
        return InvarianceResult(InvarianceStatus.INVARIANT, res.certificate)
    if res.verdict is Verdict.FALSE:
        return InvarianceResult(InvarianceStatus.NOT_INVARIANT)
    return InvarianceResult(InvarianceStatus.UNKNOWN)


def verify_result(result: InvariantSetResult, tol: float = CERT_TOL) -> float:
    """Re-check both recorded certificates from scratch; returns the worst residual."""
    if not result.converged:
        raise ValueError("only converged results carry certificates")
    stacked = result.stacked
    nxt = Polyhedron(result.base.G @ np.linalg.matrix_power(result.M, result.t + 1), result.base.g, True)
    worst = simplex_certificate_residual(result.stop_certificate.Y, stacked, nxt)
    if result.invariance_certificate is None:
        return math.inf
    image = Polyhedron(stacked.G @ result.M, stacked.g, True)
    worst = max(worst, simplex_certificate_residual(result.invariance_certificate.Y, stacked, image))
    return worst
