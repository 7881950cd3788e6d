"""Fast-mixing Markov chain synthesis on a prescribed graph.

Given a graph and a target stationary distribution ``v > 0``, find the
smallest ``lam`` for which a Markov matrix exists with

    M >= 0,  1^T M = 1^T,  M v = v,  zero entries off the graph,
    spectrum of M - v 1^T inside the disc of radius lam.

Two routes are offered. The default restricts to reversible chains, where the
spectral condition is ``-lam I <= Q^-1 M Q - r r^T <= lam I`` with
``r = sqrt(v)`` and ``Q = diag(r)``. The fixed-D route handles general chains
through the block LMI

    [[lam^2 P, (M - v1^T)^T D^T], [D (M - v1^T), D + D^T - P]] >= 0

with ``D`` held fixed (``diag(v)^-1`` by default) and ``P >= 0`` free.
Both are driven by bisection on ``lam``; every accepted point is re-checked
with an independent eigenvalue computation.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .markov import (
    Graph,
    MarkovChain,
    detailed_balance_residual,
    is_primitive,
    metropolis_hastings,
    spectral_gap_rho,
    validate_chain,
)
from .polytope import Polyhedron
from .solver_core import (
    DEFAULT_SOLVERS,
    SPECTRAL_FEAS_TOL,
    SolverError,
    SpectralFeasibilityProblem,
    SpectralModel,
    Status,
    run_conic,
    verify_spectral_witness,
)

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-7
RHO_CHECK_TOL = 1e-6


class InfeasibleAtLambdaOne(ValueError):
    """No chain satisfies the linear constraints at all."""


class Mode(enum.Enum):
    REVERSIBLE = "reversible"
    FIXED_D = "fixed_d"


class Objective(enum.Enum):
    NONE = "none"
    MIN_TRANSITION_FREQUENCY = "min_transition_frequency"
    MAX_SELF_LOOP_MASS = "max_self_loop_mass"


EntryBound = Tuple[int, int, float, float]


@dataclass(frozen=True, eq=False)
class SynthesisProblem:
    """Inputs to :func:`synthesize`.

    ``entry_bounds`` holds ``(i, j, lower, upper)`` bounds on ``M[i, j]``; use
    ``-inf``/``inf`` for a missing side.
    """

    graph: Graph
    v: np.ndarray
    mode: Mode = Mode.REVERSIBLE
    objective: Objective = Objective.NONE
    lambda_tol: float = 1e-4
    D: Optional[np.ndarray] = None
    entry_bounds: Tuple[EntryBound, ...] = ()
    fallback: bool = True

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float).reshape(-1)
        n = self.graph.n
        if v.shape != (n,):
            raise ValueError(f"v has length {len(v)} but the graph has {n} nodes")
        if np.any(v <= 0):
            raise ValueError(f"v must be strictly positive (entry {int(v.argmin())} is {v.min():.3e})")
        if abs(v.sum() - 1.0) > 1e-9:
            raise ValueError(f"v must sum to one, sums to {v.sum():.12g}")
        if not is_primitive(self.graph.adjacency.T):
            raise ValueError("graph admits no primitive Markov matrix (no common path length between all node pairs)")
        if not 0 < self.lambda_tol < 1:
            raise ValueError("lambda_tol must lie in (0, 1)")
        D = self.D
        if D is not None:
            D = np.asarray(D, dtype=float)
            if D.shape != (n, n):
                raise ValueError(f"D has shape {D.shape}, expected ({n}, {n})")
            if abs(np.linalg.det(D)) < 1e-300 or np.linalg.cond(D) > 1e12:
                raise ValueError("D must be nonsingular")
        bounds = []
        for b in self.entry_bounds:
            i, j, lo, hi = b
            if not (0 <= int(i) < n and 0 <= int(j) < n):
                raise ValueError(f"entry bound index ({i}, {j}) out of range")
            if float(lo) > float(hi):
                raise ValueError(f"entry bound ({i}, {j}) has lower {lo} > upper {hi}")
            bounds.append((int(i), int(j), float(lo), float(hi)))
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "objective", Objective(self.objective))
        object.__setattr__(self, "entry_bounds", tuple(bounds))

    @property
    def n(self) -> int:
        return self.graph.n

    def default_D(self) -> np.ndarray:
        return np.diag(1.0 / self.v) if self.D is None else self.D

    def to_dict(self) -> dict:
        return {
            "graph": self.graph.to_dict(),
            "v": self.v.tolist(),
            "mode": self.mode.value,
            "objective": self.objective.value,
            "lambda_tol": self.lambda_tol,
            "D": None if self.D is None else self.D.tolist(),
            "entry_bounds": [list(b) for b in self.entry_bounds],
            "fallback": self.fallback,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SynthesisProblem":
        try:
            return cls(
                graph=Graph.from_dict(data["graph"]),
                v=np.asarray(data["v"], dtype=float),
                mode=Mode(data.get("mode", "reversible")),
                objective=Objective(data.get("objective", "none")),
                lambda_tol=float(data.get("lambda_tol", 1e-4)),
                D=None if data.get("D") is None else np.asarray(data["D"], dtype=float),
                entry_bounds=tuple(tuple(b) for b in data.get("entry_bounds", [])),
                fallback=bool(data.get("fallback", True)),
            )
        except KeyError as exc:
            raise ValueError(f"synthesis problem JSON is missing field {exc.args[0]!r}") from None


@dataclass(frozen=True, eq=False)
class SynthesisResult:
    chain: MarkovChain
    lambda_star: float
    rho_achieved: float
    residuals: dict
    baseline_rho: Optional[float]
    mode_used: Mode
    bracket: Tuple[float, float]
    certified: bool
    objective_value: Optional[float] = None
    history: List[Tuple[float, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "M": self.chain.M.tolist(),
            "convention": "column-stochastic",
            "lambda_star": self.lambda_star,
            "rho_achieved": self.rho_achieved,
            "residuals": dict(self.residuals),
            "baseline_rho": self.baseline_rho,
            "mode_used": self.mode_used.value,
            "bracket": list(self.bracket),
            "certified": self.certified,
            "objective_value": self.objective_value,
            "history": [[lam, verdict] for lam, verdict in self.history],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SynthesisResult":
        return cls(
            chain=validate_chain(np.asarray(data["M"], dtype=float), tol=1e-7),
            lambda_star=float(data["lambda_star"]),
            rho_achieved=float(data["rho_achieved"]),
            residuals=dict(data["residuals"]),
            baseline_rho=data.get("baseline_rho"),
            mode_used=Mode(data["mode_used"]),
            bracket=tuple(data["bracket"]),
            certified=bool(data["certified"]),
            objective_value=data.get("objective_value"),
            history=[(float(a), str(b)) for a, b in data.get("history", [])],
        )


# ---------------------------------------------------------------------------
# objectives and residuals
# ---------------------------------------------------------------------------


def objective_transition_frequency(M, v) -> float:
    """``sum_i (1 - M_ii) v_i``: probability of leaving the current state at steady state."""
    M = np.asarray(M, dtype=float)
    v = np.asarray(v, dtype=float)
    if M.shape != (len(v), len(v)):
        raise ValueError(f"M has shape {M.shape} but v has length {len(v)}")
    return float(np.dot(1.0 - np.diag(M), v))


def objective_self_loop_mass(M, v) -> float:
    return 1.0 - objective_transition_frequency(M, v) if len(v) else 0.0


def chain_residuals(M, v, graph: Graph) -> dict:
    M = np.asarray(M, dtype=float)
    v = np.asarray(v, dtype=float)
    forbidden = ~graph.allowed_transitions()
    return {
        "stochasticity": float(np.abs(M.sum(axis=0) - 1.0).max()),
        "stationarity": float(np.abs(M @ v - v).max()),
        "sparsity": float(np.abs(M[forbidden]).max(initial=0.0)),
        "reversibility": detailed_balance_residual(M, v),
        "nonnegativity": float(max(0.0, -M.min())),
    }


def check_target(v, safe: Polyhedron) -> None:
    """Reject a target distribution that is not strictly inside the safety set."""
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise ValueError("target distribution must be strictly positive")
    margin = safe.g - safe.G @ v
    if safe.num_rows and margin.min() <= 0:
        raise ValueError(
            f"target distribution violates strict safety: row {int(margin.argmin())} margin {margin.min():.3e}"
        )


# ---------------------------------------------------------------------------
# reversible route
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ReversibleParametrization:
    """Chains ``M = F diag(v)^-1`` with ``F`` symmetric, ``F 1 = v``.

    The free parameters are the off-diagonal flows ``F_ij = F_ji`` on edges
    present in both directions; the diagonal absorbs the remainder. Every
    such ``M`` is column-stochastic, stationary at ``v`` and reversible by
    construction, so only nonnegativity, self-loop availability and entry
    bounds remain as linear constraints.
    """

    edges: np.ndarray  # (k, 2) with i < j
    v: np.ndarray
    self_loops: np.ndarray
    template: SpectralFeasibilityProblem

    def chain_from_flows(self, f) -> np.ndarray:
        v = self.v
        n = len(v)
        F = np.zeros((n, n))
        if len(self.edges):
            i, j = self.edges[:, 0], self.edges[:, 1]
            F[i, j] = f
            F[j, i] = f
        F[np.diag_indices(n)] = v - F.sum(axis=1)
        return F / v[None, :]

    def flows_from_chain(self, M) -> np.ndarray:
        if not len(self.edges):
            return np.zeros(0)
        F = np.asarray(M) * self.v[None, :]
        return 0.5 * (F[self.edges[:, 0], self.edges[:, 1]] + F[self.edges[:, 1], self.edges[:, 0]])

    def polish(self, f) -> np.ndarray:
        """Clip solver noise so that flows and diagonals are exactly nonnegative."""
        f = np.maximum(np.asarray(f, dtype=float), 0.0)
        if not len(self.edges):
            return f
        n = len(self.v)
        out = np.zeros(n)
        np.add.at(out, self.edges[:, 0], f)
        np.add.at(out, self.edges[:, 1], f)
        scale = np.ones(n)
        over = out > self.v
        scale[over] = self.v[over] / out[over]
        return f * np.minimum(scale[self.edges[:, 0]], scale[self.edges[:, 1]])


def reversible_parametrization(
    graph: Graph, v, entry_bounds: Sequence[EntryBound] = ()
) -> ReversibleParametrization:
    v = np.asarray(v, dtype=float)
    n = graph.n
    r = np.sqrt(v)
    allowed = graph.allowed_transitions()
    both = allowed & allowed.T
    edges = np.array([(i, j) for i in range(n) for j in range(i + 1, n) if both[i, j]], dtype=int).reshape(-1, 2)
    k = len(edges)

    s_basis = np.zeros((k, n, n))
    m_basis = np.zeros((k, n, n))
    for e, (i, j) in enumerate(edges):
        s_basis[e, i, j] = s_basis[e, j, i] = 1.0 / (r[i] * r[j])
        s_basis[e, i, i] = -1.0 / v[i]
        s_basis[e, j, j] = -1.0 / v[j]
        m_basis[e, i, j] = 1.0 / v[j]
        m_basis[e, j, i] = 1.0 / v[i]
        m_basis[e, i, i] = -1.0 / v[i]
        m_basis[e, j, j] = -1.0 / v[j]
    s_offset = np.eye(n) - np.outer(r, r)
    m_offset = np.eye(n)

    incidence = np.zeros((n, k))
    if k:
        incidence[edges[:, 0], np.arange(k)] = 1.0
        incidence[edges[:, 1], np.arange(k)] = 1.0
    self_loops = np.diag(allowed).copy()
    A_ub = [-np.eye(k), incidence[self_loops]]
    b_ub = [np.zeros(k), v[self_loops]]
    A_eq, b_eq = incidence[~self_loops], v[~self_loops]
    for i, j, lo, hi in entry_bounds:
        coef = m_basis[:, i, j]
        const = m_offset[i, j]
        if np.isfinite(hi):
            A_ub.append(coef[None, :])
            b_ub.append(np.array([hi - const]))
        if np.isfinite(lo):
            A_ub.append(-coef[None, :])
            b_ub.append(np.array([const - lo]))
    # with k = 0 these are zero-column rows, which still encode the bounds on the constant chain
    template = SpectralFeasibilityProblem(
        s_offset, s_basis, m_offset, m_basis, 1.0,
        np.vstack(A_ub), np.concatenate(b_ub),
        A_eq if len(b_eq) else None, b_eq if len(b_eq) else None,
    )
    return ReversibleParametrization(edges, v, self_loops, template)


def _self_loop_objective(template: SpectralFeasibilityProblem, v) -> np.ndarray:
    """Gradient of ``sum_i v_i M_ii`` with respect to the parameters."""
    return np.einsum("kii,i->k", template.m_basis, v)


# ---------------------------------------------------------------------------
# fixed-D route
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FixedDOutcome:
    status: Status
    M: Optional[np.ndarray] = None
    P: Optional[np.ndarray] = None
    rho: float = float("nan")
    message: str = ""

    @property
    def feasible(self) -> bool:
        return self.status is Status.FEASIBLE


class FixedDModel:
    """Compiled fixed-D LMI with ``lam`` as a parameter."""

    def __init__(self, graph: Graph, v, D=None, entry_bounds: Sequence[EntryBound] = (), solvers=DEFAULT_SOLVERS):
        import cvxpy as cp

        v = np.asarray(v, dtype=float)
        n = graph.n
        D = np.diag(1.0 / v) if D is None else np.asarray(D, dtype=float)
        self.v, self.graph, self.solvers, self._cp = v, graph, tuple(solvers), cp
        self._M = cp.Variable((n, n))
        self._P = cp.Variable((n, n), symmetric=True)
        self._lam2 = cp.Parameter(nonneg=True)
        self._c = cp.Parameter((n, n))
        E = self._M - np.outer(v, np.ones(n))
        off = E.T @ D.T
        Z = cp.bmat([[self._lam2 * self._P, off], [off.T, D + D.T - self._P]])
        forbidden = (~graph.allowed_transitions()).astype(float)
        cons = [
            self._M >= 0,
            cp.multiply(forbidden, self._M) == 0,
            np.ones(n) @ self._M == np.ones(n),
            self._M @ v == v,
            0.5 * (Z + Z.T) >> 0,
            self._P >> 0,
        ]
        for i, j, lo, hi in entry_bounds:
            if np.isfinite(hi):
                cons.append(self._M[i, j] <= hi)
            if np.isfinite(lo):
                cons.append(self._M[i, j] >= lo)
        self._prob = cp.Problem(cp.Minimize(cp.sum(cp.multiply(self._c, self._M))), cons)

    def solve(self, lam: float, objective=None, tol: float = RHO_CHECK_TOL) -> FixedDOutcome:
        cp = self._cp
        if not 0.0 <= lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        n = self.graph.n
        self._lam2.value = float(lam) ** 2
        self._c.value = np.zeros((n, n)) if objective is None else np.asarray(objective, dtype=float)
        status, message = run_conic(self._prob, self.solvers)
        if status == cp.INFEASIBLE:
            return FixedDOutcome(Status.INFEASIBLE, message=message)
        if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or self._M.value is None:
            return FixedDOutcome(Status.NUMERICAL_FAILURE, message=message)
        M = _clean_general(self._M.value, self.graph)
        rho = spectral_gap_rho(M, self.v)
        res = chain_residuals(M, self.v, self.graph)
        worst = max(res["stochasticity"], res["stationarity"], res["sparsity"], res["nonnegativity"])
        if rho > lam + tol or worst > RESIDUAL_TOL:
            return FixedDOutcome(
                Status.NUMERICAL_FAILURE, M, self._P.value, rho,
                f"witness failed re-check: rho {rho:.9f} vs lam {lam:.9f}, residual {worst:.2e}",
            )
        return FixedDOutcome(Status.FEASIBLE, M, self._P.value, rho)


def _clean_general(M, graph: Graph) -> np.ndarray:
    M = np.array(M, dtype=float)
    M[~graph.allowed_transitions()] = 0.0
    return np.maximum(M, 0.0)


def fixed_d_lmi_feasible(graph: Graph, v, D, lam: float, tol: float = RHO_CHECK_TOL) -> FixedDOutcome:
    """Feasibility of the fixed-D block LMI at ``lam`` jointly in ``(M, P)``.

    A feasible answer always comes with ``M`` whose ``rho(M - v 1^T)`` has
    been recomputed and found ``<= lam + tol``.
    """
    return FixedDModel(graph, v, D).solve(lam, tol=tol)


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


class _ReversibleRoute:
    def __init__(self, problem: SynthesisProblem, feas_tol: float):
        self.problem = problem
        self.param = reversible_parametrization(problem.graph, problem.v, problem.entry_bounds)
        self.model = SpectralModel(self.param.template)
        self.feas_tol = feas_tol

    def solve(self, lam, objective=None):
        c = None
        if objective is not None:
            c = -_self_loop_objective(self.param.template, self.problem.v)
        out = self.model.solve(lam, c, self.feas_tol)
        if out.status is not Status.FEASIBLE:
            return out.status, None, out.message
        f = self.param.polish(out.params)
        chk = verify_spectral_witness(self.param.template.with_lam(lam), f, self.feas_tol)
        if not chk.feasible:
            return Status.NUMERICAL_FAILURE, None, chk.message
        return Status.FEASIBLE, self.param.chain_from_flows(f), ""

    def warm_start(self, M):
        """Level at which a known reversible chain certifies feasibility, if any."""
        f = self.param.flows_from_chain(M)
        S = self.param.template.S(f)
        lam = float(np.abs(np.linalg.eigvalsh(S)).max())
        if lam > 1.0:
            return None
        chk = verify_spectral_witness(self.param.template.with_lam(lam), f, self.feas_tol)
        return (lam, self.param.chain_from_flows(f)) if chk.feasible else None


class _FixedDRoute:
    def __init__(self, problem: SynthesisProblem, feas_tol: float):
        self.problem = problem
        self.model = FixedDModel(problem.graph, problem.v, problem.default_D(), problem.entry_bounds)

    def solve(self, lam, objective=None):
        c = None
        if objective is not None:
            c = -np.diag(self.problem.v)
        out = self.model.solve(lam, c)
        return out.status, out.M, out.message

    def warm_start(self, M):
        return None


def _baseline(problem: SynthesisProblem):
    g = problem.graph
    if not (g.is_symmetric and g.has_self_loops):
        return None
    mh = metropolis_hastings(g, problem.v)
    for i, j, lo, hi in problem.entry_bounds:
        if not lo - 1e-12 <= mh.M[i, j] <= hi + 1e-12:
            return mh, spectral_gap_rho(mh.M, problem.v), False
    return mh, spectral_gap_rho(mh.M, problem.v), True


def synthesize(
    problem: SynthesisProblem, feas_tol: float = SPECTRAL_FEAS_TOL, use_baseline: bool = True
) -> SynthesisResult:
    """Minimize the mixing parameter ``lam`` by bisection on ``[0, 1]``.

    The bracket's upper end is always a level at which a witness chain passed
    the eigenvalue re-check, and that witness is what is returned. When the
    graph is symmetric with self-loops the Metropolis-Hastings chain for ``v``
    is reversible and therefore already a witness at its own mixing rate; the
    bracket starts there in reversible mode (disable with ``use_baseline``).

    If an objective is requested, the witness is replaced by the optimizer of
    that objective at the final level (at ``lam* + lambda_tol`` if the
    boundary solve fails its re-check).

    Raises:
        InfeasibleAtLambdaOne: no chain satisfies the linear constraints, and
            the fixed-D fallback (if enabled) fails too.
        SolverError: the solver could not decide the ``lam = 1`` problem.
    """
    mode = problem.mode
    try:
        return _synthesize(problem, mode, feas_tol, use_baseline)
    except InfeasibleAtLambdaOne:
        if mode is Mode.REVERSIBLE and problem.fallback:
            log.info("no reversible chain found; retrying with the fixed-D relaxation")
            return _synthesize(problem, Mode.FIXED_D, feas_tol, use_baseline)
        raise


def _synthesize(problem: SynthesisProblem, mode: Mode, feas_tol: float, use_baseline: bool) -> SynthesisResult:
    route = _ReversibleRoute(problem, feas_tol) if mode is Mode.REVERSIBLE else _FixedDRoute(problem, feas_tol)
    tol = problem.lambda_tol
    history: List[Tuple[float, str]] = []

    def test(lam):
        status, M, msg = route.solve(lam)
        history.append((lam, status.value))
        log.debug("lam=%.6f %s %s", lam, status.value, msg)
        return status, M

    status, best = test(1.0)
    if status is Status.INFEASIBLE:
        raise InfeasibleAtLambdaOne("no Markov matrix satisfies the graph, stationarity and bound constraints")
    if status is not Status.FEASIBLE:
        raise SolverError("could not decide feasibility at lam = 1")
    lo, hi = 0.0, 1.0

    base = _baseline(problem)
    baseline_rho = None if base is None else base[1]
    if use_baseline and base is not None and base[2] and mode is Mode.REVERSIBLE:
        warm = route.warm_start(base[0].M)
        if warm is not None and warm[0] < hi:
            hi, best = warm
            history.append((hi, "feasible (metropolis-hastings)"))

    status, M0 = test(0.0)
    if status is Status.FEASIBLE:
        hi, best = 0.0, M0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        status, M = test(mid)
        if status is Status.FEASIBLE:
            hi, best = mid, M
        else:
            lo = mid

    lam_star = hi
    objective_value = None
    if problem.objective is not Objective.NONE:
        for lam in (hi, min(hi + tol, 1.0)):
            status, M, _ = route.solve(lam, objective=problem.objective)
            history.append((lam, f"{status.value} (objective)"))
            if status is Status.FEASIBLE:
                best, lam_star = M, lam
                break
        else:
            log.warning("objective re-solve failed; returning the bisection witness")

    chain = validate_chain(best, tol=RESIDUAL_TOL)
    v = problem.v
    if problem.objective is Objective.MIN_TRANSITION_FREQUENCY:
        objective_value = objective_transition_frequency(chain.M, v)
    elif problem.objective is Objective.MAX_SELF_LOOP_MASS:
        objective_value = objective_self_loop_mass(chain.M, v)
    rho = spectral_gap_rho(chain.M, v)
    return SynthesisResult(
        chain=chain,
        lambda_star=float(lam_star),
        rho_achieved=float(rho),
        residuals=chain_residuals(chain.M, v, problem.graph),
        baseline_rho=None if baseline_rho is None else float(baseline_rho),
        mode_used=mode,
        bracket=(float(lo), float(hi)),
        certified=bool(lam_star < 1.0),
        objective_value=objective_value,
        history=history,
    )
