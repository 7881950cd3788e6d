"""Maximal invariant sets and mixing-rate synthesis for finite Markov chains.

Chains are column-stochastic throughout: ``x_next = M @ x``.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .gridworld import GridWorld, build, default_grid, scenario_report, simulate_ensemble
from .invariant import (
    FiniteDeterminationWarning,
    InvarianceStatus,
    InvariantSetResult,
    certify_invariance,
    k_estimate,
    maximal_invariant_set,
    membership,
    verify_result,
)
from .markov import (
    Graph,
    MarkovChain,
    NegativeEntry,
    NotErgodic,
    NotStochastic,
    is_ergodic,
    is_reversible,
    metropolis_hastings,
    stationary,
    validate_chain,
)
from .polytope import (
    ContainmentResult,
    Polyhedron,
    Verdict,
    contains_general,
    contains_on_simplex,
    nonempty_on_simplex,
    preimage,
)
from .solver_core import SolverError, lp_feasible, spectral_feasible, symmetric_eigenvalues
from .synthesis import (
    InfeasibleAtLambdaOne,
    Mode,
    Objective,
    SynthesisProblem,
    SynthesisResult,
    synthesize,
)

__all__ = [
    "ContainmentResult", "FiniteDeterminationWarning", "Graph", "GridWorld", "InfeasibleAtLambdaOne",
    "InvarianceStatus", "InvariantSetResult", "MarkovChain", "Mode", "NegativeEntry", "NotErgodic",
    "NotStochastic", "Objective", "Polyhedron", "SolverError", "SynthesisProblem", "SynthesisResult",
    "Verdict", "build", "certify_invariance", "contains_general", "contains_on_simplex", "default_grid",
    "is_ergodic", "is_reversible", "k_estimate", "lp_feasible", "maximal_invariant_set", "membership",
    "metropolis_hastings", "nonempty_on_simplex", "preimage", "scenario_report", "simulate_ensemble",
    "spectral_feasible", "stationary", "symmetric_eigenvalues", "synthesize", "validate_chain",
    "verify_result",
]
