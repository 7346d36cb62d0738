"""Benchmark environments as ``TabularMDP`` objects, plus episodic rollouts.

Gridworld cells are addressed as ``(row, col)`` with row 0 at the top.
Blocked cells are not states; the remaining cells are numbered in row-major
order.
"""

from __future__ import annotations

import bisect
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import MapFormatError, UnreachableGoal
from .mdp import SoftmaxPolicy, TabularMDP, stationary_distribution

ACTIONS = ("stay", "up", "down", "left", "right")
MOVES = {"stay": (0, 0), "up": (-1, 0), "down": (1, 0), "left": (0, -1), "right": (0, 1)}

STANDARD_COSTS = (1.0, 10.0, 100.0)
LARGE_COSTS = (0.1, 5.0, 10.0)


def build_simple_env() -> TabularMDP:
    """Five states and five actions; action ``a`` jumps straight to state ``a``."""
    n = 5
    p = np.zeros((n, n, n))
    p[:, np.arange(n), np.arange(n)] = 1.0
    cost = np.full((n, n), 2.0)
    cost[0] = 1.0
    return TabularMDP(p, cost, name="SimpleEnv")


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    start: tuple[int, int]
    goal: tuple[int, int]
    blocked: frozenset = field(default_factory=frozenset)
    c_goal: float = STANDARD_COSTS[0]
    c_allowed: float = STANDARD_COSTS[1]
    c_blocked: float = STANDARD_COSTS[2]
    name: str = "gridworld"

    def __post_init__(self):
        object.__setattr__(self, "start", tuple(self.start))
        object.__setattr__(self, "goal", tuple(self.goal))
        object.__setattr__(self, "blocked", frozenset(tuple(c) for c in self.blocked))
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be positive")
        for label, cell in (("start", self.start), ("goal", self.goal)):
            if not self.in_bounds(cell):
                raise ValueError(f"{label} {cell} is off the grid")
            if cell in self.blocked:
                raise ValueError(f"{label} {cell} is blocked")
        if self.start == self.goal:
            raise ValueError("start and goal must differ")
        if not 0 < self.c_goal < self.c_allowed < self.c_blocked:
            raise ValueError("costs must satisfy 0 < c_goal < c_allowed < c_blocked")

    def in_bounds(self, cell) -> bool:
        r, c = cell
        return 0 <= r < self.height and 0 <= c < self.width

    def free_cells(self) -> list[tuple[int, int]]:
        return [
            (r, c)
            for r in range(self.height)
            for c in range(self.width)
            if (r, c) not in self.blocked
        ]

    def with_costs(self, c_goal, c_allowed, c_blocked) -> "GridSpec":
        return GridSpec(
            self.width, self.height, self.start, self.goal, self.blocked,
            c_goal, c_allowed, c_blocked, self.name,
        )


@dataclass(frozen=True, eq=False)
class GridWorld:
    """A gridworld MDP together with its geometry."""

    mdp: TabularMDP
    spec: GridSpec
    cells: tuple

    @property
    def start_state(self) -> int:
        return self.cells.index(self.spec.start)

    @property
    def goal_state(self) -> int:
        return self.cells.index(self.spec.goal)

    def state_of(self, cell) -> int:
        return self.cells.index(tuple(cell))


def build_gridworld(spec: GridSpec) -> GridWorld:
    cells = spec.free_cells()
    index = {cell: i for i, cell in enumerate(cells)}
    n, m = len(cells), len(ACTIONS)
    p = np.zeros((n, m, n))
    cost = np.empty((n, m))
    for i, (r, c) in enumerate(cells):
        for a, name in enumerate(ACTIONS):
            dr, dc = MOVES[name]
            target = (r + dr, c + dc)
            allowed = target in index
            p[i, a, index[target] if allowed else i] = 1.0
            if not allowed:
                cost[i, a] = spec.c_blocked
            elif (r, c) == spec.goal:
                cost[i, a] = spec.c_goal
            else:
                cost[i, a] = spec.c_allowed
    if not _reachable(p, index[spec.start], index[spec.goal]):
        raise UnreachableGoal(f"goal {spec.goal} cannot be reached from {spec.start}")
    return GridWorld(TabularMDP(p, cost, name=spec.name), spec, tuple(cells))


def _reachable(p, source, target) -> bool:
    seen = {source}
    queue = deque([source])
    while queue:
        s = queue.popleft()
        if s == target:
            return True
        for t in np.flatnonzero(p[s].sum(axis=0) > 0):
            if t not in seen:
                seen.add(int(t))
                queue.append(int(t))
    return False


def parse_map(text: str, name: str = "gridworld", costs=STANDARD_COSTS) -> GridSpec:
    """GridSpec from ASCII art: ``.`` free, ``#`` blocked, ``S`` start, ``G`` goal."""
    rows = [line.rstrip("\r") for line in text.splitlines()]
    rows = [row for row in rows if row.strip() and not row.lstrip().startswith(";")]
    if not rows:
        raise MapFormatError("map is empty")
    width = len(rows[0])
    starts, goals, blocked = [], [], set()
    for r, row in enumerate(rows):
        if len(row) != width:
            raise MapFormatError(f"row {r} has length {len(row)}, expected {width}")
        for c, ch in enumerate(row):
            if ch == "#":
                blocked.add((r, c))
            elif ch == "S":
                starts.append((r, c))
            elif ch == "G":
                goals.append((r, c))
            elif ch != ".":
                raise MapFormatError(f"unknown character {ch!r} at row {r}, column {c}")
    if len(starts) != 1 or len(goals) != 1:
        raise MapFormatError("map needs exactly one S and one G")
    return GridSpec(width, len(rows), starts[0], goals[0], frozenset(blocked), *costs, name=name)


def load_map(path, costs=STANDARD_COSTS) -> GridSpec:
    path = Path(path)
    return parse_map(path.read_text(encoding="utf-8"), name=path.stem, costs=costs)


BUILTIN_MAPS = {
    "gridworld1": ("gridworld1.txt", STANDARD_COSTS),
    "gridworld2": ("gridworld2.txt", STANDARD_COSTS),
    "gridworld3": ("gridworld3.txt", STANDARD_COSTS),
    "largegridworld": ("largegridworld.txt", LARGE_COSTS),
}


def builtin_spec(name: str) -> GridSpec:
    key = name.lower()
    if key not in BUILTIN_MAPS:
        raise KeyError(f"unknown map {name!r}; choose from {sorted(BUILTIN_MAPS)}")
    filename, costs = BUILTIN_MAPS[key]
    text = resources.files("oir").joinpath("maps").joinpath(filename).read_text(encoding="utf-8")
    return parse_map(text, name=key, costs=costs)


@dataclass(frozen=True)
class Environment:
    """An MDP plus its episode start rule (a state index, "uniform" or "stationary")."""

    mdp: TabularMDP
    start: object = "uniform"
    grid: GridWorld | None = None

    @property
    def name(self) -> str:
        return self.mdp.name

    @property
    def fixed_start(self) -> bool:
        return isinstance(self.start, (int, np.integer))


def make_env(name: str) -> Environment:
    """Named environment or path to an ASCII map file."""
    if name.lower() == "simpleenv":
        return Environment(build_simple_env(), "uniform")
    if name.lower() in BUILTIN_MAPS:
        spec = builtin_spec(name)
    elif Path(name).is_file():
        spec = load_map(name)
    else:
        raise KeyError(f"unknown environment {name!r}")
    grid = build_gridworld(spec)
    return Environment(grid.mdp, grid.start_state, grid)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """K transitions: ``states`` has K+1 entries, ``actions`` and ``costs`` K."""

    states: np.ndarray
    actions: np.ndarray
    costs: np.ndarray

    def __len__(self):
        return len(self.actions)


class Sampler:
    """Fast repeated rollouts from one MDP.

    Precomputes cumulative next-state tables; sampling then runs on plain
    Python floats, which beats per-step numpy calls by a wide margin.
    """

    def __init__(self, mdp: TabularMDP):
        self.mdp = mdp
        S, A = mdp.n_states, mdp.n_actions
        self._next = []
        for s in range(S):
            row = []
            for a in range(A):
                support = np.flatnonzero(mdp.transition[s, a] > 0)
                cum = np.cumsum(mdp.transition[s, a, support])
                cum[-1] = 1.0
                row.append((support.tolist(), cum.tolist()))
            self._next.append(row)
        self._cost = mdp.cost.tolist()

    def _start(self, start, policy, rng) -> int:
        S = self.mdp.n_states
        if isinstance(start, (int, np.integer)):
            if not 0 <= start < S:
                raise ValueError(f"start state {start} out of range")
            return int(start)
        if start == "uniform":
            return int(rng.integers(S))
        if start == "stationary":
            d = stationary_distribution(self.mdp, policy)
            return int(min(bisect.bisect_right(np.cumsum(d).tolist(), rng.random()), S - 1))
        raise ValueError(f"unknown start rule {start!r}")

    def rollout(self, policy: SoftmaxPolicy, K: int, start, rng) -> Trajectory:
        if K < 1:
            raise ValueError("K must be at least 1")
        rng = np.random.default_rng(rng)
        pcum = np.cumsum(policy.probs, axis=1)
        pcum[:, -1] = 1.0
        pcum = pcum.tolist()
        last = len(pcum[0]) - 1
        u_action = rng.random(K).tolist()
        u_state = rng.random(K).tolist()
        s = self._start(start, policy, rng)
        states, actions, costs = [s], [], []
        for k in range(K):
            a = min(bisect.bisect_right(pcum[s], u_action[k]), last)
            support, cum = self._next[s][a]
            costs.append(self._cost[s][a])
            if len(support) == 1:
                s = support[0]
            else:
                s = support[min(bisect.bisect_right(cum, u_state[k]), len(support) - 1)]
            actions.append(a)
            states.append(s)
        return Trajectory(
            np.array(states, dtype=np.int64),
            np.array(actions, dtype=np.int64),
            np.array(costs, dtype=float),
        )


def rollout(mdp: TabularMDP, policy: SoftmaxPolicy, K: int, start="uniform", rng_seed=None) -> Trajectory:
    """Sample K steps of ``policy`` on ``mdp``; deterministic given ``rng_seed``."""
    return Sampler(mdp).rollout(policy, K, start, rng_seed)


def batch_rollouts(mdp: TabularMDP, policy: SoftmaxPolicy, K: int, n: int, start="uniform", rng=None) -> Trajectory:
    """``n`` independent episodes of a frozen policy, stepped in lockstep.

    Returns a Trajectory whose arrays have a leading episode axis:
    states (n, K+1), actions (n, K), costs (n, K).
    """
    if K < 1 or n < 1:
        raise ValueError("K and n must be positive")
    rng = np.random.default_rng(rng)
    S, A = mdp.n_states, mdp.n_actions
    pcum = np.cumsum(policy.probs, axis=1)
    tcum = np.cumsum(mdp.transition, axis=2)
    if isinstance(start, (int, np.integer)):
        s = np.full(n, int(start))
    elif start == "uniform":
        s = rng.integers(S, size=n)
    elif start == "stationary":
        d = stationary_distribution(mdp, policy)
        s = np.minimum(np.searchsorted(np.cumsum(d), rng.random(n), side="right"), S - 1)
    else:
        raise ValueError(f"unknown start rule {start!r}")
    states = np.empty((n, K + 1), dtype=np.int64)
    actions = np.empty((n, K), dtype=np.int64)
    states[:, 0] = s
    for k in range(K):
        u = rng.random((2, n))
        a = np.minimum((pcum[s] <= u[0][:, None]).sum(axis=1), A - 1)
        s = np.minimum((tcum[s, a] <= u[1][:, None]).sum(axis=1), S - 1)
        actions[:, k] = a
        states[:, k + 1] = s
    return Trajectory(states, actions, mdp.cost[states[:, :-1], actions])
