"""Swarm-guidance grid scenario and agent-level Monte Carlo.

Cells are indexed row-major over the free (non-obstacle) cells. Agents move
between 4-neighbours or stay put; the density cap bounds the probability
mass of every cell.

Ensemble simulation uses numpy's PCG64 bit generator. Agents are split into
fixed-size shards and shard ``s`` draws from ``SeedSequence([seed, s])``, so
histograms are identical whatever the number of workers.
"""

from __future__ import annotations

import io
import json
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Tuple

import numpy as np

from .invariant import InvariantSetResult, membership
from .markov import Graph, MarkovChain, check_distribution, is_primitive, trajectory
from .polytope import Polyhedron

Cell = Tuple[int, int]

SHARD_SIZE = 8192
_NEIGHBOURS = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass(frozen=True)
class GridWorld:
    width: int
    height: int
    obstacles: FrozenSet[Cell] = frozenset()
    terminals: Tuple[Cell, ...] = ()
    density_cap: float = 0.3
    terminal_mass: float = 0.225

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be positive")
        obstacles = frozenset((int(r), int(c)) for r, c in self.obstacles)
        terminals = tuple((int(r), int(c)) for r, c in self.terminals)
        for r, c in obstacles | set(terminals):
            if not (0 <= r < self.height and 0 <= c < self.width):
                raise ValueError(f"cell ({r}, {c}) lies outside the {self.height}x{self.width} grid")
        clash = obstacles.intersection(terminals)
        if clash:
            raise ValueError(f"terminal cells {sorted(clash)} are obstacles")
        if len(set(terminals)) != len(terminals):
            raise ValueError("duplicate terminal cells")
        if not 0 < self.density_cap <= 1:
            raise ValueError("density_cap must lie in (0, 1]")
        if self.terminal_mass <= 0:
            raise ValueError("terminal_mass must be positive")
        object.__setattr__(self, "obstacles", obstacles)
        object.__setattr__(self, "terminals", terminals)

    @property
    def free_cells(self) -> List[Cell]:
        return [(r, c) for r in range(self.height) for c in range(self.width) if (r, c) not in self.obstacles]

    @property
    def index(self) -> Dict[Cell, int]:
        return {cell: i for i, cell in enumerate(self.free_cells)}

    @property
    def floor_mass(self) -> float:
        rest = len(self.free_cells) - len(self.terminals)
        if rest == 0:
            return 0.0
        return (1.0 - len(self.terminals) * self.terminal_mass) / rest

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "obstacles": [list(c) for c in sorted(self.obstacles)],
            "terminals": [list(c) for c in self.terminals],
            "density_cap": self.density_cap,
            "terminal_mass": self.terminal_mass,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GridWorld":
        missing = [k for k in ("width", "height") if k not in data]
        if missing:
            raise ValueError(f"grid config is missing field {missing[0]!r}")
        return cls(
            width=int(data["width"]),
            height=int(data["height"]),
            obstacles=frozenset(tuple(c) for c in data.get("obstacles", [])),
            terminals=tuple(tuple(c) for c in data.get("terminals", [])),
            density_cap=float(data.get("density_cap", 0.3)),
            terminal_mass=float(data.get("terminal_mass", 0.225)),
        )


def default_grid() -> GridWorld:
    """7x7 grid with a plus-shaped obstacle in the middle and the corners as terminals.

    44 free cells: with 22.5% on each of the four terminals the remaining
    40 cells get 0.25% each.
    """
    plus = frozenset({(3, 3), (2, 3), (4, 3), (3, 2), (3, 4)})
    return GridWorld(7, 7, plus, ((0, 0), (0, 6), (6, 0), (6, 6)), 0.3, 0.225)


def adjacency(grid: GridWorld) -> np.ndarray:
    idx = grid.index
    A = np.eye(len(idx), dtype=int)
    for (r, c), i in idx.items():
        for dr, dc in _NEIGHBOURS:
            j = idx.get((r + dr, c + dc))
            if j is not None:
                A[i, j] = 1
    return A


def _connected(A: np.ndarray) -> bool:
    n = len(A)
    seen = {0}
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in np.flatnonzero(A[i]):
            if j not in seen:
                seen.add(int(j))
                queue.append(int(j))
    return len(seen) == n


def build(grid: GridWorld) -> Tuple[Graph, Polyhedron, np.ndarray]:
    """Graph, density-cap polytope and target distribution for a grid.

    Raises ValueError if the free cells are disconnected, the terminals take
    all the mass, or the target itself breaks the cap.
    """
    cells = grid.free_cells
    n = len(cells)
    if n == 0:
        raise ValueError("grid has no free cells")
    A = adjacency(grid)
    if not _connected(A):
        raise ValueError("free cells are not 4-connected")
    if len(grid.terminals) * grid.terminal_mass >= 1.0 and len(grid.terminals) < n:
        raise ValueError("terminal mass leaves nothing for the other cells")
    v = np.full(n, grid.floor_mass)
    idx = grid.index
    for cell in grid.terminals:
        v[idx[cell]] = grid.terminal_mass
    if abs(v.sum() - 1.0) > 1e-12:
        raise ValueError(f"target distribution sums to {v.sum():.12g}")
    if np.any(v <= 0):
        raise ValueError("target distribution must be strictly positive")
    if np.any(v >= grid.density_cap):
        worst = int(v.argmax())
        raise ValueError(f"target mass {v[worst]:.4g} at cell {cells[worst]} is not below the cap {grid.density_cap}")
    if not is_primitive(A.T):
        raise ValueError("grid adjacency is not primitive")
    safe = Polyhedron(np.eye(n), np.full(n, grid.density_cap), on_simplex=True)
    return Graph(A), safe, v


def cell_distribution(grid: GridWorld, masses: Dict[Cell, float]) -> np.ndarray:
    """Distribution vector from a ``{cell: mass}`` mapping."""
    idx = grid.index
    x = np.zeros(len(idx))
    for cell, mass in masses.items():
        if cell not in idx:
            raise ValueError(f"cell {cell} is not a free cell")
        x[idx[cell]] = mass
    return x


# ---------------------------------------------------------------------------
# ensemble simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EnsembleRun:
    agent_count: int
    horizon: int
    seed: int
    histograms: np.ndarray  # (horizon + 1, n) counts

    def frequencies(self) -> np.ndarray:
        return self.histograms / self.agent_count

    def to_csv(self, grid: Optional[GridWorld] = None) -> str:
        return histogram_csv(self.histograms, grid)


def _shard(M_cdf: np.ndarray, x0_cdf: np.ndarray, agents: int, horizon: int, seed: int, shard: int) -> np.ndarray:
    n = len(x0_cdf)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, shard])))
    state = np.minimum(np.searchsorted(x0_cdf, rng.random(agents), side="right"), n - 1)
    hist = np.zeros((horizon + 1, n), dtype=np.int64)
    hist[0] = np.bincount(state, minlength=n)
    for k in range(1, horizon + 1):
        u = rng.random(agents)
        # column-stochastic: the next cell of an agent in j is drawn from column j
        nxt = (u[:, None] >= M_cdf[:, state].T).sum(axis=1)
        state = np.minimum(nxt, n - 1)
        hist[k] = np.bincount(state, minlength=n)
    return hist


def simulate_ensemble(
    chain: MarkovChain, x0, agents: int, horizon: int, seed: int, workers: int = 1
) -> EnsembleRun:
    """Simulate ``agents`` independent walkers for ``horizon`` steps."""
    if agents < 1 or horizon < 0:
        raise ValueError("agents must be positive and horizon nonnegative")
    x0 = check_distribution(x0, chain.n)
    M_cdf = np.cumsum(chain.M, axis=0)
    x0_cdf = np.cumsum(np.clip(x0, 0.0, None))
    x0_cdf /= x0_cdf[-1]
    sizes = [min(SHARD_SIZE, agents - s) for s in range(0, agents, SHARD_SIZE)]
    jobs = [(M_cdf, x0_cdf, size, horizon, int(seed), s) for s, size in enumerate(sizes)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda job: _shard(*job), jobs))
    else:
        parts = [_shard(*job) for job in jobs]
    return EnsembleRun(agents, horizon, int(seed), np.sum(parts, axis=0))


def histogram_csv(hist: np.ndarray, grid: Optional[GridWorld] = None) -> str:
    """CSV rows ``step,cell_row,cell_col,value``; without a grid, row is the state index and col is -1."""
    cells = grid.free_cells if grid is not None else None
    buf = io.StringIO()
    buf.write("step,cell_row,cell_col,value\n")
    integer = np.issubdtype(hist.dtype, np.integer)
    for k, row in enumerate(hist):
        for i, val in enumerate(row):
            r, c = cells[i] if cells is not None else (i, -1)
            buf.write(f"{k},{r},{c},{int(val) if integer else format(float(val), '.17g')}\n")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# scenario report
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ScenarioReport:
    member: bool
    t_star: int
    constraint_values: np.ndarray  # (t*+1, n): G x[k] - g
    long_horizon: Dict[int, dict]
    snapshots: Dict[int, np.ndarray]

    def to_dict(self) -> dict:
        return {
            "member": self.member,
            "t_star": self.t_star,
            "max_violation_per_step": self.constraint_values.max(axis=1).tolist(),
            "constraint_values": self.constraint_values.tolist(),
            "long_horizon": {str(k): v for k, v in self.long_horizon.items()},
        }

    def grid_csv(self, grid: GridWorld, step: int) -> str:
        """Density map at ``step`` as a height x width CSV; obstacles are blank."""
        x = self.snapshots[step]
        idx = grid.index
        lines = []
        for r in range(grid.height):
            lines.append(",".join(
                "" if (r, c) not in idx else format(float(x[idx[(r, c)]]), ".17g") for c in range(grid.width)
            ))
        return "\n".join(lines) + "\n"

    def write(self, grid: GridWorld, outdir) -> List[Path]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        written = []
        for k in sorted(self.snapshots):
            path = outdir / f"density_k{k}.csv"
            path.write_text(self.grid_csv(grid, k))
            written.append(path)
        return written


def scenario_report(
    grid: GridWorld, chain: MarkovChain, result: InvariantSetResult, x0, horizons=(100, 1000)
) -> ScenarioReport:
    """Membership of ``x0`` plus the step-by-step and long-horizon density checks."""
    if not result.converged:
        raise ValueError("scenario report needs a converged invariant-set result")
    x0 = check_distribution(x0, chain.n)
    member = membership(result, x0)
    safe = result.base
    last = max(max(horizons, default=0), result.t)
    traj = trajectory(chain, x0, last)
    values = np.array([safe.slack(traj[k]) for k in range(result.t + 1)])
    long_horizon = {}
    for k in horizons:
        worst = float(safe.slack(traj[k]).max())
        long_horizon[k] = {
            "max_density": float(traj[k].max()),
            "max_violation": worst,
            "safe": bool(worst <= 1e-8),
            "max_violation_up_to_k": float(max(safe.slack(traj[j]).max() for j in range(k + 1))),
        }
    snapshots = {k: traj[k] for k in sorted({0, *range(result.t + 1), *horizons})}
    return ScenarioReport(member, result.t, values, long_horizon, snapshots)


def load_grid(path) -> GridWorld:
    with open(path) as fh:
        return GridWorld.from_dict(json.load(fh))
