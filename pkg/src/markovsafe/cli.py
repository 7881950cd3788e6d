"""``markovsafe`` command-line tool.

Exit codes: 0 success, 1 negative but valid verdict (not invariant, not a
member, iteration cap reached, no chain exists), 2 input or validation error,
3 numerical failure.

Every JSON artifact carries the tool version, a hash of the run configuration
(options plus SHA-256 of every input file) and the tolerances used.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from . import __version__, jsonio
from .gridworld import build, default_grid, load_grid, scenario_report, simulate_ensemble
from .invariant import (
    FiniteDeterminationWarning,
    InvarianceStatus,
    InvariantSetResult,
    Status,
    certify_invariance,
    first_violation,
    k_estimate,
    maximal_invariant_set,
    membership,
    verify_result,
)
from .markov import (
    Graph,
    NotErgodic,
    chain_from_dict,
    check_distribution,
    is_ergodic,
    is_reversible,
    respects_graph,
    stationary,
    trajectory,
)
from .polytope import MEMBERSHIP_TOL, Polyhedron
from .solver_core import LP_FEAS_TOL, SPECTRAL_FEAS_TOL, SolverError
from .synthesis import InfeasibleAtLambdaOne, Mode, Objective, SynthesisProblem, synthesize

log = logging.getLogger("markovsafe")

EXIT_OK = 0
EXIT_NEGATIVE = 1
EXIT_INPUT = 2
EXIT_NUMERICAL = 3

COMMANDS = ("check-chain", "invariant-set", "membership", "certify", "synthesize", "gridworld", "simulate")


class InputError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    inputs: Dict[str, str] = field(default_factory=dict)
    out: str = "out"
    tolerances: Dict[str, float] = field(default_factory=dict)
    cap: Optional[int] = None
    seed: int = 0
    options: Dict[str, object] = field(default_factory=dict)

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise InputError(f"unknown command {self.command!r}")
        for name, tol in self.tolerances.items():
            if not tol > 0:
                raise InputError(f"tolerance {name} must be positive, got {tol}")
        if self.cap is not None and self.cap < 0:
            raise InputError(f"--cap must be nonnegative, got {self.cap}")
        for name, path in self.inputs.items():
            if path is not None and not Path(path).is_file():
                raise InputError(f"input --{name.replace('_', '-')}: file {path!r} does not exist")

    def fingerprint(self) -> dict:
        return {
            "command": self.command,
            "inputs": {k: None if p is None else jsonio.file_hash(p) for k, p in sorted(self.inputs.items())},
            "tolerances": self.tolerances,
            "cap": self.cap,
            "seed": self.seed,
            "options": self.options,
        }


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _artifact(config: RunConfig, result: dict) -> dict:
    fp = config.fingerprint()
    return {
        "tool": "markovsafe",
        "version": __version__,
        "command": config.command,
        "config_hash": jsonio.config_hash(fp),
        "config": fp,
        "tolerances": config.tolerances,
        "result": result,
    }


def _write(config: RunConfig, name: str, result: dict) -> Path:
    path = jsonio.write(Path(config.out) / name, _artifact(config, result))
    log.info("wrote %s", path)
    return path


def _write_text(config: RunConfig, name: str, text: str) -> Path:
    path = Path(config.out) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    log.info("wrote %s", path)
    return path


def _load_json(path, what: str):
    try:
        return jsonio.load(path)
    except json.JSONDecodeError as exc:
        raise InputError(f"{what} file {path}: invalid JSON ({exc})") from None


def _unwrap(data, key: str):
    """Accept a bare value, ``{key: value}`` or a tool artifact whose result holds ``key``."""
    if isinstance(data, dict):
        if "result" in data and isinstance(data["result"], dict) and "tool" in data:
            data = data["result"]
        if key in data:
            return data[key]
    return data


def _vector(path, key: str, n: int, name: str) -> np.ndarray:
    raw = _unwrap(_load_json(path, name), key)
    try:
        x = np.asarray(raw, dtype=float)
    except (TypeError, ValueError):
        raise InputError(f"{name} file {path}: field {key!r} is not a numeric vector") from None
    return check_distribution(x, n, name=name)


def _chain(config: RunConfig):
    data = _load_json(config.inputs["chain"], "chain")
    if isinstance(data, dict) and "tool" in data and isinstance(data.get("result"), dict):
        data = data["result"]
    if not isinstance(data, dict):
        raise InputError("chain JSON must be an object with fields 'M' and 'convention'")
    return chain_from_dict(data, bool(config.options.get("transpose", False)))


def _safe(path, n: int) -> Polyhedron:
    data = _load_json(path, "polyhedron")
    if isinstance(data, dict) and "tool" in data and isinstance(data.get("result"), dict):
        data = data["result"]
    if isinstance(data, dict) and "stacked" in data:
        data = data["stacked"]
    P = Polyhedron.from_dict(data)
    if P.dim != n:
        raise InputError(f"polyhedron file {path}: G has {P.dim} columns but the chain has {n} states")
    return Polyhedron(P.G, P.g, True)


def _graph(path) -> Graph:
    data = _load_json(path, "graph")
    if isinstance(data, list):
        data = {"adjacency": data}
    return Graph.from_dict(data)


def _target(choice: str, n: int) -> np.ndarray:
    if choice == "uniform":
        return np.full(n, 1.0 / n)
    if not Path(choice).is_file():
        raise InputError(f"--v must be 'uniform' or an existing JSON file, got {choice!r}")
    return _vector(choice, "v", n, "v")


def _say(msg: str) -> None:
    print(msg)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_check_chain(config: RunConfig) -> int:
    chain = _chain(config)
    out = {"n": chain.n, "column_sums_max_error": float(np.abs(chain.M.sum(axis=0) - 1).max())}
    ergodic = is_ergodic(chain)
    out["ergodic"] = ergodic
    if ergodic:
        info = stationary(chain)
        out["v"] = info.v.tolist()
        out["rho"] = info.rho
        out["reversible"] = bool(np.all(info.v > 0) and is_reversible(chain, info.v))
    if config.inputs.get("graph"):
        graph = _graph(config.inputs["graph"])
        out["respects_graph"] = respects_graph(chain, graph)
    if config.inputs.get("safe") and ergodic:
        safe = _safe(config.inputs["safe"], chain.n)
        try:
            out["k_estimate"] = k_estimate(chain, safe).to_dict()
        except ValueError as exc:
            out["k_estimate"] = None
            out["k_estimate_error"] = str(exc)
    _write(config, "check_chain.json", out)
    ok = ergodic and out.get("respects_graph", True)
    _say(f"chain n={chain.n} ergodic={ergodic}" + (f" rho={out['rho']:.10g}" if ergodic else ""))
    return EXIT_OK if ok else EXIT_NEGATIVE


def _run_invariant(config: RunConfig, chain, safe: Polyhedron, prefix: str = ""):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", FiniteDeterminationWarning)
        result = maximal_invariant_set(
            chain, safe, cap=config.cap, feas_tol=config.tolerances["feas_tol"],
            prune=bool(config.options.get("prune", False)),
        )
    notes = [str(w.message) for w in caught if issubclass(w.category, FiniteDeterminationWarning)]
    for note in notes:
        log.warning(note)
    out = result.to_dict()
    out["warnings"] = notes
    if result.converged:
        out["certificate_check"] = verify_result(result)
    try:
        out["k_estimate"] = k_estimate(chain, safe).to_dict()
    except (ValueError, NotErgodic):
        out["k_estimate"] = None
    _write(config, f"{prefix}invariant_set.json", out)
    _write_text(config, f"{prefix}history.csv", result.history_csv())
    return result


def cmd_invariant_set(config: RunConfig) -> int:
    chain = _chain(config)
    safe = _safe(config.inputs["safe"], chain.n)
    result = _run_invariant(config, chain, safe)
    _say(f"status={result.status.value} t={result.t} rows={result.stacked.num_rows}")
    return EXIT_OK if result.converged else EXIT_NEGATIVE


def cmd_membership(config: RunConfig) -> int:
    data = _load_json(config.inputs["result"], "result")
    if isinstance(data, dict) and "tool" in data and isinstance(data.get("result"), dict):
        data = data["result"]
    if not isinstance(data, dict):
        raise InputError("result file must hold an invariant-set JSON object")
    result = InvariantSetResult.from_dict(data)
    x0 = _vector(config.inputs["x0"], "x0", result.stacked.dim, "x0")
    if result.status is Status.CAP_REACHED:
        raise InputError("result did not converge (iteration cap reached); membership is undefined")
    tol = config.tolerances["membership_tol"]
    member = membership(result, x0, tol)
    out = {"verdict": "member" if member else "not_member", "member": member, "status": result.status.value}
    if not member and result.status is Status.CONVERGED:
        k, row = first_violation(result, x0, tol)
        out["first_violation"] = {"step": k, "row": row}
        out["max_slack"] = float(result.stacked.slack(x0).max())
    _write(config, "membership.json", out)
    _say(f"verdict={out['verdict']}")
    return EXIT_OK if member else EXIT_NEGATIVE


def cmd_certify(config: RunConfig) -> int:
    chain = _chain(config)
    P = _safe(config.inputs["set"], chain.n)
    res = certify_invariance(chain, P, config.tolerances["feas_tol"])
    out = {"verdict": res.status.value, "invariant": res.invariant}
    if res.certificate is not None:
        out["certificate"] = res.certificate.to_dict()
    _write(config, "certify.json", out)
    _say(f"verdict={res.status.value}")
    if res.status is InvarianceStatus.UNKNOWN:
        return EXIT_NUMERICAL
    return EXIT_OK if res.invariant else EXIT_NEGATIVE


def _problem(config: RunConfig, graph: Graph, v) -> SynthesisProblem:
    bounds = ()
    if config.inputs.get("bounds"):
        raw = _unwrap(_load_json(config.inputs["bounds"], "bounds"), "entry_bounds")
        try:
            bounds = tuple((int(i), int(j), float(lo), float(hi)) for i, j, lo, hi in raw)
        except (TypeError, ValueError):
            raise InputError("bounds file: entry_bounds must be a list of [i, j, lower, upper]") from None
    return SynthesisProblem(
        graph=graph,
        v=v,
        mode=Mode(config.options.get("mode", "reversible")),
        objective=Objective(config.options.get("objective", "none")),
        lambda_tol=config.tolerances["lambda_tol"],
        entry_bounds=bounds,
        fallback=not config.options.get("no_fallback", False),
    )


def _run_synthesis(config: RunConfig, problem: SynthesisProblem, prefix: str = ""):
    result = synthesize(problem, feas_tol=config.tolerances["spectral_tol"])
    out = result.to_dict()
    out["problem"] = problem.to_dict()
    _write(config, f"{prefix}synthesis.json", out)
    jsonio.write(Path(config.out) / f"{prefix}chain.json", result.chain.to_dict())
    return result


def cmd_synthesize(config: RunConfig) -> int:
    graph = _graph(config.inputs["graph"])
    v = _target(config.options["v"], graph.n)
    try:
        result = _run_synthesis(config, _problem(config, graph, v))
    except InfeasibleAtLambdaOne as exc:
        _write(config, "synthesis.json", {"verdict": "infeasible", "message": str(exc)})
        _say(f"verdict=infeasible: {exc}")
        return EXIT_NEGATIVE
    _say(f"lambda_star={result.lambda_star:.10g} rho={result.rho_achieved:.10g} mode={result.mode_used.value}")
    return EXIT_OK if result.certified else EXIT_NEGATIVE


def cmd_gridworld(config: RunConfig) -> int:
    grid = load_grid(config.inputs["grid"]) if config.inputs.get("grid") else default_grid()
    graph, safe, v = build(grid)
    jsonio.write(Path(config.out) / "grid.json", grid.to_dict())
    problem = _problem(config, graph, v)
    syn = _run_synthesis(config, problem)
    _say(f"synthesis: lambda_star={syn.lambda_star:.10g} rho={syn.rho_achieved:.10g}")
    if not syn.certified:
        _say("synthesis did not certify a mixing rate below 1")
        return EXIT_NEGATIVE
    result = _run_invariant(config, syn.chain, safe)
    _say(f"invariant set: status={result.status.value} t={result.t} rows={result.stacked.num_rows}")
    if not result.converged:
        return EXIT_NEGATIVE
    if config.inputs.get("x0"):
        x0 = _vector(config.inputs["x0"], "x0", graph.n, "x0")
    else:
        x0 = np.full(graph.n, 1.0 / graph.n)
    report = scenario_report(grid, syn.chain, result, x0)
    out = report.to_dict()
    out["x0"] = x0.tolist()
    out["v"] = v.tolist()
    out["cells"] = [list(c) for c in grid.free_cells]
    _write(config, "scenario.json", out)
    report.write(grid, Path(config.out) / "density")
    _say(f"x0 verdict={'member' if report.member else 'not_member'}; "
         + "; ".join(f"k={k}: max density {d['max_density']:.6g}" for k, d in report.long_horizon.items()))
    return EXIT_OK if report.member else EXIT_NEGATIVE


def cmd_simulate(config: RunConfig) -> int:
    chain = _chain(config)
    grid = load_grid(config.inputs["grid"]) if config.inputs.get("grid") else None
    if grid is not None and len(grid.free_cells) != chain.n:
        raise InputError(f"grid has {len(grid.free_cells)} free cells but the chain has {chain.n} states")
    x0 = _vector(config.inputs["x0"], "x0", chain.n, "x0")
    agents = int(config.options["agents"])
    horizon = int(config.options["horizon"])
    run = simulate_ensemble(chain, x0, agents, horizon, config.seed, workers=int(config.options.get("workers", 1)))
    expected = trajectory(chain, x0, horizon)
    freq = run.frequencies()
    sigma = np.sqrt(np.clip(expected * (1 - expected), 0, None) / agents)
    within = np.abs(freq - expected) <= 3 * sigma + 1e-3
    out = {
        "agents": agents,
        "horizon": horizon,
        "seed": config.seed,
        "fraction_within_3sigma": float(within.mean()),
        "max_abs_deviation": float(np.abs(freq - expected).max()),
    }
    _write(config, "simulate.json", out)
    _write_text(config, "histogram.csv", run.to_csv(grid))
    _say(f"agents={agents} horizon={horizon} within 3 sigma: {out['fraction_within_3sigma']:.4f}")
    return EXIT_OK


HANDLERS = {
    "check-chain": cmd_check_chain,
    "invariant-set": cmd_invariant_set,
    "membership": cmd_membership,
    "certify": cmd_certify,
    "synthesize": cmd_synthesize,
    "gridworld": cmd_gridworld,
    "simulate": cmd_simulate,
}


def run(config: RunConfig) -> int:
    """Validate ``config``, run its command and return the exit status."""
    try:
        config.validate()
        return HANDLERS[config.command](config)
    except SolverError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, KeyError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("-v", "--verbose", action="store_true")

    chain_opts = argparse.ArgumentParser(add_help=False)
    chain_opts.add_argument("--chain", required=True, help="chain JSON {n, M, convention}")
    chain_opts.add_argument(
        "--transpose", action="store_true", help="accept a row-stochastic chain and transpose it"
    )

    lp_opts = argparse.ArgumentParser(add_help=False)
    lp_opts.add_argument("--feas-tol", type=float, default=LP_FEAS_TOL,
                         help=f"LP feasibility tolerance (default: {LP_FEAS_TOL:g})")

    inv_opts = argparse.ArgumentParser(add_help=False)
    inv_opts.add_argument("--cap", type=int, default=None,
                          help="iteration cap (default: max(2K, 1000) with K the iteration estimate)")
    inv_opts.add_argument("--prune", action="store_true", help="drop redundant rows while iterating")

    syn_opts = argparse.ArgumentParser(add_help=False)
    syn_opts.add_argument("--mode", choices=[m.value for m in Mode], default="reversible")
    syn_opts.add_argument("--objective", choices=[o.value for o in Objective], default="none")
    syn_opts.add_argument("--lambda-tol", type=float, default=1e-4, help="bisection tolerance (default: 1e-4)")
    syn_opts.add_argument("--spectral-tol", type=float, default=SPECTRAL_FEAS_TOL,
                          help=f"eigenvalue re-check tolerance (default: {SPECTRAL_FEAS_TOL:g})")
    syn_opts.add_argument("--bounds", help="JSON list of [i, j, lower, upper] bounds on M[i, j]")
    syn_opts.add_argument("--no-fallback", action="store_true",
                          help="do not retry with the fixed-D relaxation when no reversible chain exists")

    parser = argparse.ArgumentParser(
        prog="markovsafe", description="Safety of distributions under Markov chains, and chain synthesis."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check-chain", parents=[common, chain_opts],
                       help="validate a chain and report stationary distribution and mixing rate")
    p.add_argument("--graph", help="graph JSON whose edges the chain must respect")
    p.add_argument("--safe", help="polyhedron JSON; adds the iteration estimate K")

    p = sub.add_parser("invariant-set", parents=[common, chain_opts, lp_opts, inv_opts],
                       help="maximal invariant subset of a safety polytope")
    p.add_argument("--safe", required=True, help="polyhedron JSON {G, g}")

    p = sub.add_parser("membership", parents=[common], help="test x0 against a computed invariant set")
    p.add_argument("--result", required=True, help="invariant_set.json from invariant-set")
    p.add_argument("--x0", required=True, help="JSON vector or {x0: [...]}")
    p.add_argument("--tol", type=float, default=MEMBERSHIP_TOL, help=f"default: {MEMBERSHIP_TOL:g}")

    p = sub.add_parser("certify", parents=[common, chain_opts, lp_opts], help="certify that a polytope is invariant")
    p.add_argument("--set", required=True, help="polyhedron JSON {G, g}")

    p = sub.add_parser("synthesize", parents=[common, syn_opts], help="fastest-mixing chain on a graph")
    p.add_argument("--graph", required=True, help="graph JSON {adjacency}")
    p.add_argument("--v", default="uniform", help="'uniform' or a JSON vector file (default: uniform)")

    p = sub.add_parser("gridworld", parents=[common, syn_opts, lp_opts, inv_opts],
                       help="swarm-guidance grid scenario end to end")
    p.add_argument("--grid", help="grid config JSON (default: built-in 7x7 grid)")
    p.add_argument("--x0", help="initial distribution over free cells (default: uniform)")

    p = sub.add_parser("simulate", parents=[common, chain_opts], help="agent-level Monte Carlo")
    p.add_argument("--x0", required=True)
    p.add_argument("--agents", type=int, default=100_000)
    p.add_argument("--horizon", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--grid", help="grid config JSON; histogram rows then carry cell coordinates")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    d = vars(args)
    input_names = ("chain", "safe", "graph", "result", "x0", "set", "bounds", "grid")
    inputs = {k: d[k] for k in input_names if d.get(k) is not None}
    if d.get("v") not in (None, "uniform"):
        inputs["v"] = d["v"]
    tolerances = {}
    if "feas_tol" in d:
        tolerances["feas_tol"] = d["feas_tol"]
    if "lambda_tol" in d:
        tolerances["lambda_tol"] = d["lambda_tol"]
        tolerances["spectral_tol"] = d["spectral_tol"]
    if "tol" in d:
        tolerances["membership_tol"] = d["tol"]
    skip = set(input_names) | {"command", "out", "verbose", "feas_tol", "lambda_tol", "spectral_tol", "tol",
                               "cap", "seed"}
    options = {k: val for k, val in d.items() if k not in skip}
    if "v" in d:
        options["v"] = d["v"]
    if args.command == "simulate" and d.get("agents", 1) < 1:
        raise InputError("--agents must be positive")
    return RunConfig(
        command=args.command,
        inputs=inputs,
        out=args.out,
        tolerances=tolerances,
        cap=d.get("cap"),
        seed=int(d.get("seed") or 0),
        options=options,
    )


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = config_from_args(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
