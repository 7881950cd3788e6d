"""Feasibility oracles used by the rest of the package.

Two kinds of problems are handled here:

* linear feasibility (``lp_feasible``), backed by the HiGHS simplex/IPM
  through :func:`scipy.optimize.linprog`;
* symmetric-eigenvalue-interval feasibility (``spectral_feasible``): find
  parameters ``p`` satisfying linear constraints such that the affine
  symmetric matrix ``S(p)`` has its spectrum inside ``[-lam, lam]``. This is a
  small SDP solved with cvxpy/Clarabel.

Whatever the backend reports, a witness is only returned as feasible after it
has been substituted back and re-checked here with plain numpy. A backend that
claims success on a point that fails the re-check yields ``NUMERICAL_FAILURE``,
never ``FEASIBLE``.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linprog

LP_FEAS_TOL = 1e-8
SPECTRAL_FEAS_TOL = 1e-7
DEFAULT_SOLVERS = ("CLARABEL", "CVXOPT")
# tighter than the backends' defaults: witnesses must survive an eigenvalue re-check at 1e-6 or better
SOLVER_OPTIONS = {
    "CLARABEL": {"tol_feas": 1e-10, "tol_gap_abs": 1e-10, "tol_gap_rel": 1e-10},
    "CVXOPT": {"abstol": 1e-10, "reltol": 1e-10, "feastol": 1e-10},
}

_SENSES = (">=", "<=", "=")


class SolverError(RuntimeError):
    """Raised when a backend cannot reach a verdict (iteration limit, degeneracy)."""


class Status(enum.Enum):
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    NUMERICAL_FAILURE = "numerical_failure"


# ---------------------------------------------------------------------------
# Linear feasibility
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LpFeasibilityProblem:
    """Rows ``constraint_matrix[i] @ y (sense[i]) rhs[i]`` plus sign masks.

    Variables flagged in ``nonneg_vars`` are constrained to be ``>= 0``; the
    others are free. Without a mask every variable is nonnegative.
    """

    constraint_matrix: np.ndarray
    rhs: np.ndarray
    sense: tuple
    nonneg_vars: Optional[np.ndarray] = None

    def __post_init__(self):
        b = np.asarray(self.rhs, dtype=float).reshape(-1)
        A = np.asarray(self.constraint_matrix, dtype=float)
        if self.nonneg_vars is None:
            p = A.shape[1] if A.ndim == 2 else (A.size // max(len(b), 1))
            mask = np.ones(p, dtype=bool)
        else:
            mask = np.asarray(self.nonneg_vars, dtype=bool).reshape(-1)
        A = np.zeros((len(b), len(mask))) if A.size == 0 else np.atleast_2d(A)
        sense = tuple(self.sense)
        if A.shape[0] != len(b) or len(sense) != len(b):
            raise ValueError(
                f"inconsistent LP dimensions: {A.shape[0]} rows, {len(b)} rhs, {len(sense)} senses"
            )
        if A.shape[1] != len(mask):
            raise ValueError(f"nonneg_vars has length {len(mask)}, expected {A.shape[1]}")
        bad = [s for s in sense if s not in _SENSES]
        if bad:
            raise ValueError(f"unknown constraint sense {bad[0]!r}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("LP data must be finite")
        object.__setattr__(self, "constraint_matrix", A)
        object.__setattr__(self, "rhs", b)
        object.__setattr__(self, "sense", sense)
        object.__setattr__(self, "nonneg_vars", mask)

    @property
    def num_vars(self) -> int:
        return self.constraint_matrix.shape[1]

    @property
    def num_rows(self) -> int:
        return self.constraint_matrix.shape[0]

    def residual(self, y: np.ndarray) -> float:
        """Largest constraint violation of ``y`` (0 if ``y`` satisfies everything)."""
        y = np.asarray(y, dtype=float)
        worst = 0.0
        if self.num_rows:
            lhs = self.constraint_matrix @ y
            sense = np.array(self.sense)
            diff = lhs - self.rhs
            viol = np.where(sense == "<=", diff, np.where(sense == ">=", -diff, np.abs(diff)))
            worst = max(worst, float(viol.max()))
        if self.nonneg_vars.any():
            worst = max(worst, float((-y[self.nonneg_vars]).max()))
        return max(worst, 0.0)


@dataclass(frozen=True, eq=False)
class LpOutcome:
    status: Status
    witness: Optional[np.ndarray] = None
    residual: float = float("nan")
    message: str = ""

    @property
    def feasible(self) -> bool:
        return self.status is Status.FEASIBLE


# Tried in order; later entries only run when an earlier one ends without a
# decisive status (HiGHS occasionally reports "Unknown" on degenerate LPs).
_LP_METHODS = (
    ("highs", {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}),
    ("highs-ds", {}),
    ("highs-ipm", {}),
)


def _highs(problem: LpFeasibilityProblem, objective, shift: float, method: str = "highs", options=None):
    A = problem.constraint_matrix
    b = problem.rhs
    sense = np.array(problem.sense)
    le, ge, eq = sense == "<=", sense == ">=", sense == "="
    A_ub = np.vstack([A[le], -A[ge]])
    b_ub = np.concatenate([b[le] - shift, -b[ge] - shift])
    bounds = [(0, None) if nn else (None, None) for nn in problem.nonneg_vars]
    c = np.zeros(problem.num_vars) if objective is None else np.asarray(objective, dtype=float)
    return linprog(
        c,
        A_ub=A_ub if len(b_ub) else None,
        b_ub=b_ub if len(b_ub) else None,
        A_eq=A[eq] if eq.any() else None,
        b_eq=b[eq] if eq.any() else None,
        bounds=bounds,
        method=method,
        options=options or {},
    )


def _solve_lp(problem: LpFeasibilityProblem, feas_tol: float, objective=None):
    if feas_tol <= 0:
        raise ValueError("feas_tol must be positive")
    if problem.num_rows == 0 and objective is None:
        return LpOutcome(Status.FEASIBLE, np.zeros(problem.num_vars), 0.0, "empty constraint set"), None
    if problem.num_vars == 0:
        r = problem.residual(np.zeros(0))
        if r <= feas_tol:
            return LpOutcome(Status.FEASIBLE, np.zeros(0), r, "no variables"), 0.0
        return LpOutcome(Status.INFEASIBLE, None, float("nan"), "no variables"), None

    # Second attempt tightens inequalities by feas_tol so that the backend's
    # own tolerance cannot push the witness outside ours.
    last_msg = ""
    for method, options in _LP_METHODS:
        for shift in (0.0, feas_tol):
            res = _highs(problem, objective, shift, method, options)
            last_msg = res.message
            if res.status == 2:
                if shift == 0.0:
                    return LpOutcome(Status.INFEASIBLE, None, float("nan"), res.message), None
                break
            if res.status == 3:
                return LpOutcome(Status.FEASIBLE, None, float("nan"), "unbounded objective"), np.inf
            if res.status != 0:
                break
            y = np.asarray(res.x, dtype=float)
            r = problem.residual(y)
            if r <= feas_tol:
                value = None if objective is None else float(np.dot(objective, y))
                return LpOutcome(Status.FEASIBLE, y, r, res.message), value
    return LpOutcome(Status.NUMERICAL_FAILURE, None, float("nan"), last_msg), None


def lp_feasible(problem: LpFeasibilityProblem, feas_tol: float = LP_FEAS_TOL) -> LpOutcome:
    """Decide whether the linear system has a solution.

    A returned witness always satisfies every row to within ``feas_tol``,
    checked here independently of the backend.
    """
    return _solve_lp(problem, feas_tol)[0]


def lp_minimize(objective, problem: LpFeasibilityProblem, feas_tol: float = LP_FEAS_TOL):
    """Minimize ``objective @ y`` over the feasible set.

    Returns ``(outcome, value)``; ``value`` is ``inf`` when the objective is
    unbounded below and ``None`` unless the outcome is feasible.
    """
    objective = np.asarray(objective, dtype=float).reshape(-1)
    if len(objective) != problem.num_vars:
        raise ValueError("objective length does not match the number of variables")
    return _solve_lp(problem, feas_tol, objective)


# ---------------------------------------------------------------------------
# Symmetric eigenvalues
# ---------------------------------------------------------------------------


def symmetric_eigenvalues(S) -> np.ndarray:
    """Eigenvalues of a symmetric matrix in nondecreasing order."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    scale = max(float(np.abs(S).max()) if S.size else 0.0, 1.0)
    asym = float(np.abs(S - S.T).max()) if S.size else 0.0
    if asym > 1e-12 * scale:
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    return np.linalg.eigvalsh(0.5 * (S + S.T))


# ---------------------------------------------------------------------------
# Spectral feasibility
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SpectralFeasibilityProblem:
    """Find ``p`` with ``-lam I <= S(p) <= lam I`` subject to linear constraints.

    ``S(p) = s_offset + sum_k p[k] * s_basis[k]`` must be symmetric for every
    ``p``; the same parameters also define ``M(p) = m_offset + sum_k p[k] *
    m_basis[k]``, which is what callers usually care about. Linear
    constraints are ``A_ub @ p <= b_ub`` and ``A_eq @ p == b_eq``. An optional
    ``objective`` vector turns the feasibility question into minimization of
    ``objective @ p`` over the same set.
    """

    s_offset: np.ndarray
    s_basis: np.ndarray
    m_offset: np.ndarray
    m_basis: np.ndarray
    lam: float
    A_ub: Optional[np.ndarray] = None
    b_ub: Optional[np.ndarray] = None
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    objective: Optional[np.ndarray] = None

    def __post_init__(self):
        s0 = np.atleast_2d(np.asarray(self.s_offset, dtype=float))
        n = s0.shape[0]
        if s0.shape != (n, n):
            raise ValueError("s_offset must be square")
        sb = np.asarray(self.s_basis, dtype=float).reshape(-1, n, n)
        k = sb.shape[0]
        m0 = np.asarray(self.m_offset, dtype=float).reshape(n, n)
        mb = np.asarray(self.m_basis, dtype=float).reshape(k, n, n)
        if not 0.0 <= float(self.lam) <= 1.0:
            raise ValueError(f"lam must lie in [0, 1], got {self.lam}")
        if np.abs(s0 - s0.T).max(initial=0.0) > 1e-12 or np.abs(sb - sb.transpose(0, 2, 1)).max(initial=0.0) > 1e-12:
            raise ValueError("S parametrization is not symmetric")

        def lin(A, b, name):
            if A is None:
                return np.zeros((0, k)), np.zeros(0)
            b = np.asarray(b, dtype=float).reshape(-1)
            A = np.asarray(A, dtype=float)
            if A.size != len(b) * k:
                raise ValueError(f"{name}: {A.size} coefficients do not match {len(b)} rows x {k} parameters")
            return A.reshape(len(b), k), b

        A_ub, b_ub = lin(self.A_ub, self.b_ub, "A_ub")
        A_eq, b_eq = lin(self.A_eq, self.b_eq, "A_eq")
        for name, val in (("s_offset", s0), ("s_basis", sb), ("A_ub", A_ub), ("A_eq", A_eq)):
            if not np.all(np.isfinite(val)):
                raise ValueError(f"{name} contains non-finite entries")
        c = None
        if self.objective is not None:
            c = np.asarray(self.objective, dtype=float).reshape(-1)
            if len(c) != k:
                raise ValueError("objective length does not match parameter count")
        for name, val in (
            ("s_offset", s0), ("s_basis", sb), ("m_offset", m0), ("m_basis", mb),
            ("A_ub", A_ub), ("b_ub", b_ub), ("A_eq", A_eq), ("b_eq", b_eq), ("objective", c),
        ):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def ambient_dim(self) -> int:
        return self.s_offset.shape[0]

    @property
    def num_params(self) -> int:
        return self.s_basis.shape[0]

    def S(self, p) -> np.ndarray:
        S = self.s_offset + np.tensordot(np.asarray(p, dtype=float), self.s_basis, axes=1)
        return 0.5 * (S + S.T)

    def M(self, p) -> np.ndarray:
        return self.m_offset + np.tensordot(np.asarray(p, dtype=float), self.m_basis, axes=1)

    def with_lam(self, lam: float, objective=None) -> "SpectralFeasibilityProblem":
        return SpectralFeasibilityProblem(
            self.s_offset, self.s_basis, self.m_offset, self.m_basis, lam,
            self.A_ub, self.b_ub, self.A_eq, self.b_eq, objective,
        )

    def linear_residual(self, p) -> float:
        p = np.asarray(p, dtype=float)
        r = 0.0
        if len(self.b_ub):
            r = max(r, float((self.A_ub @ p - self.b_ub).max()))
        if len(self.b_eq):
            r = max(r, float(np.abs(self.A_eq @ p - self.b_eq).max()))
        return max(r, 0.0)


@dataclass(frozen=True, eq=False)
class SpectralOutcome:
    status: Status
    params: Optional[np.ndarray] = None
    M: Optional[np.ndarray] = None
    S: Optional[np.ndarray] = None
    eig_min: float = float("nan")
    eig_max: float = float("nan")
    linear_residual: float = float("nan")
    message: str = ""

    @property
    def feasible(self) -> bool:
        return self.status is Status.FEASIBLE


def verify_spectral_witness(problem: SpectralFeasibilityProblem, p, feas_tol: float = SPECTRAL_FEAS_TOL):
    """Re-check a candidate parameter vector; returns a SpectralOutcome."""
    p = np.asarray(p, dtype=float).reshape(-1)
    S = problem.S(p)
    eig = symmetric_eigenvalues(S)
    lin = problem.linear_residual(p)
    ok = lin <= feas_tol and eig[0] >= -problem.lam - feas_tol and eig[-1] <= problem.lam + feas_tol
    status = Status.FEASIBLE if ok else Status.NUMERICAL_FAILURE
    msg = "" if ok else (
        f"witness failed re-check: linear residual {lin:.2e}, spectrum [{eig[0]:.9f}, {eig[-1]:.9f}]"
        f" vs lam {problem.lam:.9f}"
    )
    return SpectralOutcome(status, p, problem.M(p), S, float(eig[0]), float(eig[-1]), lin, msg)


def run_conic(prob, solvers=DEFAULT_SOLVERS):
    """Solve a cvxpy problem with the first backend that does not crash.

    Returns ``(status, message)``. Backend crashes (including Rust panics
    surfacing as ``BaseException``) move on to the next solver; a definite
    infeasible/optimal status is returned as soon as one backend gives it.
    """
    import cvxpy as cp

    status, message = None, "no solver attempted"
    for name in solvers:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                prob.solve(solver=name, **SOLVER_OPTIONS.get(name, {}))
        except (KeyboardInterrupt, SystemExit):
            raise
        except BaseException as exc:  # noqa: BLE001 - pyo3 panics are BaseException
            status, message = None, f"{name}: {type(exc).__name__}: {exc}"
            continue
        status, message = prob.status, f"{name}: {prob.status}"
        if status in (cp.OPTIMAL, cp.INFEASIBLE):
            break
    return status, message


class SpectralModel:
    """Compiled form of a :class:`SpectralFeasibilityProblem` template.

    ``lam`` and the objective enter as cvxpy parameters, so a bisection over
    ``lam`` compiles the conic program once and only re-solves it.
    """

    def __init__(self, problem: SpectralFeasibilityProblem, solvers=DEFAULT_SOLVERS):
        import cvxpy as cp

        self.problem = problem
        self.solvers = tuple(solvers)
        n, k = problem.ambient_dim, problem.num_params
        self._cp = cp
        if k == 0:
            self._prob = None
            return
        self._p = cp.Variable(k)
        self._lam = cp.Parameter(nonneg=True)
        self._c = cp.Parameter(k)
        X = cp.Variable((n, n), symmetric=True)
        basis = problem.s_basis.reshape(k, n * n).T
        eye = np.eye(n)
        cons = [
            cp.vec(X, order="C") == problem.s_offset.reshape(-1) + basis @ self._p,
            self._lam * eye - X >> 0,
            X + self._lam * eye >> 0,
        ]
        if len(problem.b_ub):
            cons.append(problem.A_ub @ self._p <= problem.b_ub)
        if len(problem.b_eq):
            cons.append(problem.A_eq @ self._p == problem.b_eq)
        self._prob = cp.Problem(cp.Minimize(self._c @ self._p), cons)

    def solve(self, lam: float, objective=None, feas_tol: float = SPECTRAL_FEAS_TOL) -> SpectralOutcome:
        cp = self._cp
        if feas_tol <= 0:
            raise ValueError("feas_tol must be positive")
        target = self.problem.with_lam(lam, objective)
        if self._prob is None:
            out = verify_spectral_witness(target, np.zeros(0), feas_tol)
            if out.feasible:
                return out
            return SpectralOutcome(Status.INFEASIBLE, message="no free parameters and the fixed point fails")
        self._lam.value = float(lam)
        self._c.value = np.zeros(self.problem.num_params) if objective is None else np.asarray(objective, dtype=float)
        status, message = run_conic(self._prob, self.solvers)
        if status == cp.INFEASIBLE:
            return SpectralOutcome(Status.INFEASIBLE, message=message)
        if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or self._p.value is None:
            return SpectralOutcome(Status.NUMERICAL_FAILURE, message=message)
        return verify_spectral_witness(target, self._p.value, feas_tol)


def spectral_feasible(
    problem: SpectralFeasibilityProblem,
    feas_tol: float = SPECTRAL_FEAS_TOL,
    solvers=DEFAULT_SOLVERS,
) -> SpectralOutcome:
    """Decide ``exists p: linear constraints hold and spec(S(p)) in [-lam, lam]``."""
    return SpectralModel(problem, solvers).solve(problem.lam, problem.objective, feas_tol)
