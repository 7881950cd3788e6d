"""Column-stochastic Markov chains.

Convention: ``M[i, j] = Pr(next = i | current = j)``, so columns sum to one
and distributions evolve as ``x_next = M @ x``. The JSON loader refuses
row-stochastic input unless it is explicitly asked to transpose.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

STOCHASTIC_TOL = 1e-10
NEGATIVE_TOL = 1e-12
SUPPORT_TOL = 1e-12
DENSE_EIG_LIMIT = 500


class NotStochastic(ValueError):
    pass


class NegativeEntry(ValueError):
    pass


class NotErgodic(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MarkovChain:
    M: np.ndarray

    @property
    def n(self) -> int:
        return self.M.shape[0]

    def to_dict(self) -> dict:
        return {"n": self.n, "M": self.M.tolist(), "convention": "column-stochastic"}


@dataclass(frozen=True, eq=False)
class Graph:
    """Directed graph; ``adjacency[i, j] == 1`` iff there is an edge from state i to state j."""

    adjacency: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.adjacency)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {A.shape}")
        if not np.all((A == 0) | (A == 1)):
            raise ValueError("adjacency entries must be 0 or 1")
        object.__setattr__(self, "adjacency", A.astype(np.int8))

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def is_symmetric(self) -> bool:
        return bool(np.array_equal(self.adjacency, self.adjacency.T))

    @property
    def has_self_loops(self) -> bool:
        return bool(np.all(np.diag(self.adjacency) == 1))

    def allowed_transitions(self) -> np.ndarray:
        """Boolean mask over ``M``: ``M[j, i]`` may be nonzero iff edge i -> j exists."""
        return self.adjacency.T.astype(bool)

    def to_dict(self) -> dict:
        return {"n": self.n, "adjacency": self.adjacency.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Graph":
        if "adjacency" not in data:
            raise ValueError("graph JSON is missing field 'adjacency'")
        return cls(np.asarray(data["adjacency"], dtype=int))

    @classmethod
    def complete(cls, n: int) -> "Graph":
        return cls(np.ones((n, n), dtype=int))

    @classmethod
    def path(cls, n: int) -> "Graph":
        A = np.eye(n, dtype=int)
        for i in range(n - 1):
            A[i, i + 1] = A[i + 1, i] = 1
        return cls(A)


@dataclass(frozen=True, eq=False)
class StationaryInfo:
    v: np.ndarray
    rho: float
    ergodic: bool


def validate_chain(M, tol: float = STOCHASTIC_TOL) -> MarkovChain:
    M = np.array(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] == 0:
        raise ValueError(f"Markov matrix must be square and nonempty, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("Markov matrix contains non-finite entries")
    neg = np.argwhere(M < -NEGATIVE_TOL)
    if len(neg):
        i, j = neg[0]
        raise NegativeEntry(f"{len(neg)} negative entries, first at ({i}, {j}) = {M[i, j]:.3e}")
    sums = M.sum(axis=0)
    bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
    if len(bad):
        listing = ", ".join(f"column {j} sums to {sums[j]:.12g}" for j in bad[:5])
        raise NotStochastic(f"not column-stochastic: {listing}")
    M.setflags(write=False)
    return MarkovChain(M)


def respects_graph(chain: MarkovChain, graph: Graph, tol: float = SUPPORT_TOL) -> bool:
    if graph.n != chain.n:
        raise ValueError(f"graph has {graph.n} nodes but chain has {chain.n} states")
    forbidden = ~graph.allowed_transitions()
    return bool(np.all(np.abs(chain.M[forbidden]) <= tol))


def _bool_matmul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return (A.astype(np.int64) @ B.astype(np.int64)) > 0


def is_primitive(pattern) -> bool:
    """Whether some power of the 0/1 pattern is entrywise positive.

    For a primitive n x n pattern the exponent never exceeds ``(n-1)^2 + 1``
    and every higher power stays positive, so one power suffices.
    """
    P = np.asarray(pattern) != 0
    n = P.shape[0]
    k = (n - 1) ** 2 + 1
    result = np.eye(n, dtype=bool)
    base = P
    while k:
        if k & 1:
            result = _bool_matmul(result, base)
        k >>= 1
        if k:
            base = _bool_matmul(base, base)
    return bool(result.all())


def is_ergodic(chain: MarkovChain, tol: float = SUPPORT_TOL) -> bool:
    return is_primitive(chain.M > tol)


def _stationary_vector(M: np.ndarray) -> np.ndarray:
    n = M.shape[0]
    A = np.vstack([M - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    v = np.linalg.lstsq(A, b, rcond=None)[0]
    # one step of iterative refinement
    v += np.linalg.lstsq(A, b - A @ v, rcond=None)[0]
    return v / v.sum()


def _deflated_rho_arnoldi(M: np.ndarray, v: np.ndarray) -> float:
    """``rho(M - v 1^T)`` from a few Arnoldi eigenvalues of the deflated operator."""
    from scipy.sparse.linalg import LinearOperator, eigs

    n = M.shape[0]
    op = LinearOperator((n, n), matvec=lambda x: M @ x - v * x.sum(), dtype=float)
    vals = eigs(op, k=min(4, n - 2), which="LM", return_eigenvectors=False, tol=1e-12, maxiter=50 * n)
    return float(np.abs(vals).max())


def spectral_gap_rho(M, v, dense_limit: int = DENSE_EIG_LIMIT) -> float:
    """``rho(M - v 1^T)``."""
    M = np.asarray(M, dtype=float)
    v = np.asarray(v, dtype=float)
    if M.shape[0] <= dense_limit:
        return float(np.abs(np.linalg.eigvals(M - np.outer(v, np.ones(len(v))))).max())
    return _deflated_rho_arnoldi(M, v)


def stationary(chain: MarkovChain, dense_limit: int = DENSE_EIG_LIMIT) -> StationaryInfo:
    if not is_ergodic(chain):
        raise NotErgodic("stationary analysis needs an irreducible, aperiodic chain")
    v = _stationary_vector(chain.M)
    v = np.where(np.abs(v) < 1e-300, 0.0, v)
    return StationaryInfo(v, spectral_gap_rho(chain.M, v, dense_limit), True)


def is_reversible(chain: MarkovChain, v, tol: float = 1e-10) -> bool:
    v = np.asarray(v, dtype=float)
    if v.shape != (chain.n,):
        raise ValueError(f"v has shape {v.shape}, expected ({chain.n},)")
    if np.any(v <= 0):
        raise ValueError("reversibility is defined here for strictly positive v")
    flow = chain.M * v[None, :]
    return bool(np.abs(flow - flow.T).max() <= tol)


def detailed_balance_residual(M, v) -> float:
    flow = np.asarray(M) * np.asarray(v)[None, :]
    return float(np.abs(flow - flow.T).max())


def metropolis_hastings(graph: Graph, v) -> MarkovChain:
    """Reversible chain with stationary distribution ``v`` on a symmetric graph.

    From state j a neighbour i (self included) is proposed uniformly, with
    ``d_j`` the number of neighbours, and accepted with probability
    ``min(1, v_i d_j / (v_j d_i))``. Rejected mass stays on the diagonal.
    Self-loops are required so the result is aperiodic.
    """
    v = np.asarray(v, dtype=float)
    A = graph.adjacency
    n = graph.n
    if v.shape != (n,):
        raise ValueError(f"v has shape {v.shape}, expected ({n},)")
    if not graph.is_symmetric:
        raise ValueError("Metropolis-Hastings needs a symmetric graph")
    if not graph.has_self_loops:
        missing = np.flatnonzero(np.diag(A) == 0)
        raise ValueError(f"Metropolis-Hastings needs self-loops; missing at nodes {missing.tolist()}")
    if np.any(v <= 0):
        raise ValueError("v must be strictly positive")
    if abs(v.sum() - 1.0) > 1e-12:
        raise ValueError("v must sum to one")

    deg = A.sum(axis=0).astype(float)
    M = np.zeros((n, n))
    for j in range(n):
        for i in np.flatnonzero(A[j]):
            if i != j:
                M[i, j] = min(1.0, (v[i] * deg[j]) / (v[j] * deg[i])) / deg[j]
        M[j, j] = 1.0 - M[:, j].sum()
    return validate_chain(M)


def lazy(chain: MarkovChain) -> MarkovChain:
    """``(M + I) / 2``, which is aperiodic whenever ``M`` is irreducible."""
    return validate_chain(0.5 * (chain.M + np.eye(chain.n)))


def check_distribution(x, n: int, tol: float = 1e-9, name: str = "x0") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise ValueError(f"{name} has shape {x.shape}, expected ({n},)")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} has non-finite entries")
    if x.min() < -tol:
        raise ValueError(f"{name} has a negative entry {x.min():.3e} at index {int(x.argmin())}")
    if abs(x.sum() - 1.0) > tol:
        raise ValueError(f"{name} sums to {x.sum():.12g}, not 1")
    return x


def propagate(chain: MarkovChain, x0, k: int) -> np.ndarray:
    """``M^k x0`` by repeated multiplication."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    x = check_distribution(x0, chain.n).copy()
    for _ in range(int(k)):
        x = chain.M @ x
    return x


def trajectory(chain: MarkovChain, x0, horizon: int) -> np.ndarray:
    """Rows ``x[0], ..., x[horizon]``."""
    x = check_distribution(x0, chain.n).copy()
    out = np.empty((horizon + 1, chain.n))
    out[0] = x
    for k in range(1, horizon + 1):
        x = chain.M @ x
        out[k] = x
    return out


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------


def chain_from_dict(data: dict, transpose: bool = False) -> MarkovChain:
    if "M" not in data:
        raise ValueError("chain JSON is missing field 'M'")
    convention = data.get("convention")
    if convention is None:
        raise ValueError("chain JSON is missing field 'convention'")
    M = np.asarray(data["M"], dtype=float)
    if "n" in data and M.shape[:1] != (int(data["n"]),):
        raise ValueError(f"field 'n' = {data['n']} does not match M with {M.shape[0]} rows")
    if convention == "row-stochastic":
        if not transpose:
            raise ValueError("chain is row-stochastic; pass transpose=True (--transpose) to convert")
        M = M.T
    elif convention != "column-stochastic":
        raise ValueError(f"unknown convention {convention!r}")
    elif transpose:
        raise ValueError("transpose requested but chain is declared column-stochastic")
    return validate_chain(M)


def load_chain(path, transpose: bool = False) -> MarkovChain:
    with open(Path(path)) as fh:
        return chain_from_dict(json.load(fh), transpose)
