"""Deterministic sparse-reward goal-conditioned environments.

Three families share one interface:

* ``empty``     - an open n-dimensional grid (Minigrid ``Empty`` style), with an
  optional ``split`` layout that divides it into two sealed rooms;
* ``hypermaze`` - an n-dimensional grid with serpentine walls;
* ``doorkey``   - a 2D two-room grid where the agent must pick up a key and
  open a door before reaching the goal.

States are small tuples of ints. Grid actions come in pairs per axis:
``2*k`` moves +1 along axis ``k``, ``2*k + 1`` moves -1. Blocked moves
leave the agent in place. Goal states are absorbing.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError, ResourceError, UsageError
from .tensor import make_rng

KINDS = ("empty", "hypermaze", "doorkey")
GRID_SHAPES = ("open", "split")
HELD = -1  # key coordinate sentinel once picked up

DEFAULT_STATE_CAP = 10**6


@dataclass(frozen=True)
class EnvSpec:
    kind: str = "empty"
    dims: int = 2
    cells: int = 10
    shape: str = ""
    goals: tuple = ()
    max_steps: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown env kind {self.kind!r}; expected one of {KINDS}")
        if self.cells < 2:
            raise ConfigError("cells per dimension must be >= 2")
        if self.dims < 1:
            raise ConfigError("dims must be >= 1")
        if self.kind == "doorkey" and self.dims != 2:
            raise ConfigError("doorkey is two-dimensional")
        if not self.shape:
            default = {"empty": "open", "hypermaze": "s", "doorkey": "0"}[self.kind]
            object.__setattr__(self, "shape", default)
        if not self.goals:
            corner = tuple([self.cells - 1] * self.dims)
            object.__setattr__(self, "goals", ((corner, 1.0),))
        goals = tuple((tuple(int(c) for c in cell), float(r)) for cell, r in self.goals)
        object.__setattr__(self, "goals", goals)
        for cell, r in goals:
            if r <= 0:
                raise ConfigError(f"goal reward must be positive, got {r}")
            if len(cell) != self.dims or not all(0 <= c < self.cells for c in cell):
                raise ConfigError(f"goal {cell} is outside the {self.dims}-d grid of size {self.cells}")
        if len({cell for cell, _ in goals}) != len(goals):
            raise ConfigError("duplicate goal cells")

    def to_dict(self):
        return {
            "kind": self.kind, "dims": self.dims, "cells": self.cells, "shape": self.shape,
            "goals": format_goals(self.goals), "max_steps": self.max_steps,
        }

    @classmethod
    def from_dict(cls, d):
        goals = d.get("goals", "")
        if isinstance(goals, str):
            goals = parse_goals(goals)
        return cls(kind=d.get("kind", "empty"), dims=int(d.get("dims", 2)),
                   cells=int(d.get("cells", 10)), shape=str(d.get("shape", "")),
                   goals=tuple(goals), max_steps=int(d.get("max_steps", 0)))


def format_goals(goals):
    """``((9, 9), 1.0)`` pairs -> ``"9:9@1.0"`` joined by ``|``."""
    return "|".join(":".join(str(c) for c in cell) + "@" + repr(float(r)) for cell, r in goals)


def parse_goals(text):
    if not text.strip():
        return ()
    out = []
    for item in text.split("|"):
        try:
            cell, r = item.split("@")
            out.append((tuple(int(c) for c in cell.split(":")), float(r)))
        except ValueError as exc:
            raise ConfigError(f"cannot parse goal {item!r}; expected e.g. 9:9@1.0") from exc
    return tuple(out)


def empty_spec(cells=10, dims=2, goal=None, reward=1.0, max_steps=0):
    goal = goal if goal is not None else tuple([cells - 1] * dims)
    return EnvSpec("empty", dims, cells, "open", ((tuple(goal), reward),), max_steps)


def multigoal_spec(cells=10, goals=(((2, 2), 0.7), ((9, 9), 1.0)), max_steps=0):
    """Open grid with several goals of different reward."""
    return EnvSpec("empty", 2, cells, "open", tuple(goals), max_steps)


def hypermaze_spec(cells=10, dims=2, max_steps=0):
    return EnvSpec("hypermaze", dims, cells, "s", (), max_steps)


def doorkey_spec(cells=6, layout=0, max_steps=0):
    return EnvSpec("doorkey", 2, cells, str(layout), (), max_steps)


def build_hypermaze_walls(n, m):
    """Boolean wall mask of shape ``(m,)*n``.

    Wall hyperplanes sit at ``x0 = m//3`` and ``x0 = m-1-m//3`` (a single
    plane at ``m//2`` when those would touch). The first plane is open
    along ``x1 = m-1``, the second along ``x1 = 0``, so the free space is
    a serpentine corridor from the origin corner to the far corner.
    """
    if n < 2:
        raise ConfigError("a hypermaze needs at least 2 dimensions")
    if m < 4:
        raise ConfigError("a hypermaze needs at least 4 cells per dimension")
    planes = [m // 3, m - 1 - m // 3]
    if planes[1] - planes[0] < 2:
        planes = [m // 2]
    walls = np.zeros((m,) * n, dtype=bool)
    for i, x0 in enumerate(planes):
        walls[x0] = True
        opening = m - 1 if i % 2 == 0 else 0
        walls[(x0, opening)] = False
    return walls


def _grid_walls(spec):
    m, n = spec.cells, spec.dims
    if spec.kind == "hypermaze":
        if spec.shape != "s":
            raise ConfigError(f"unknown hypermaze shape {spec.shape!r}")
        return build_hypermaze_walls(n, m)
    if spec.shape not in GRID_SHAPES:
        raise ConfigError(f"unknown grid shape {spec.shape!r}; expected one of {GRID_SHAPES}")
    walls = np.zeros((m,) * n, dtype=bool)
    if spec.shape == "split":
        if m < 3:
            raise ConfigError("split layout needs at least 3 cells")
        walls[m // 2] = True
    return walls


class GridEnv:
    """Open grids and hypermazes: state = agent cell."""

    def __init__(self, spec):
        self.spec = spec
        self.n = spec.dims
        self.m = spec.cells
        self.walls = _grid_walls(spec)
        self.goal_rewards = {cell: r for cell, r in spec.goals}
        for cell in self.goal_rewards:
            if self.walls[cell]:
                raise ConfigError(f"goal {cell} lies inside a wall")
        self.n_actions = 2 * self.n
        self.action_names = [f"{'+-'[a % 2]}x{a // 2}" for a in range(self.n_actions)]
        self._feat_cache = {}

    @property
    def goal_states(self):
        return list(self.goal_rewards)

    def is_goal(self, s):
        return s in self.goal_rewards

    def is_free(self, cell):
        return all(0 <= c < self.m for c in cell) and not self.walls[cell]

    def move(self, s, a):
        """Underlying dynamics, ignoring goal absorption."""
        if not 0 <= a < self.n_actions:
            raise UsageError(f"invalid action id {a}; env has {self.n_actions} actions")
        axis, step = a // 2, (1 if a % 2 == 0 else -1)
        nxt = list(s)
        nxt[axis] += step
        nxt = tuple(nxt)
        return nxt if self.is_free(nxt) else s

    def step(self, s, a):
        """Returns ``(next_state, reward, terminal)``."""
        if s in self.goal_rewards:
            if not 0 <= a < self.n_actions:
                raise UsageError(f"invalid action id {a}; env has {self.n_actions} actions")
            return s, 0.0, True
        nxt = self.move(s, a)
        r = self.goal_rewards.get(nxt, 0.0)
        return nxt, r, nxt in self.goal_rewards

    def initial_states(self):
        return [tuple(int(c) for c in cell) for cell in np.argwhere(~self.walls)]

    @property
    def feature_dim(self):
        return self.n if self.spec.kind == "empty" else 3 * self.n

    def encode(self, s):
        f = self._feat_cache.get(s)
        if f is None:
            f = np.asarray(s, dtype=np.float64) / (self.m - 1)
            if self.spec.kind == "hypermaze":
                blocked = [float(self.move(s, a) == s) for a in range(self.n_actions)]
                f = np.concatenate([f, blocked])
            self._feat_cache[s] = f
        return f

    def encode_many(self, states):
        if not len(states):
            return np.zeros((0, self.feature_dim))
        return np.stack([self.encode(s) for s in states])


class DoorKeyEnv:
    """State = ``(x, y, key_x, key_y, door_open)``; key coords are ``HELD``
    once picked up. Actions 0-3 move, 4 picks up the key, 5 opens the door."""

    PICKUP = 4
    OPEN = 5

    def __init__(self, spec):
        self.spec = spec
        m = self.m = spec.cells
        self.n = 2
        if m < 5:
            raise ConfigError("doorkey needs at least 5 cells per side")
        try:
            layout = int(spec.shape)
        except ValueError as exc:
            raise ConfigError(f"doorkey shape must be an integer layout id, got {spec.shape!r}") from exc
        rng = make_rng(layout)
        self.wall_x = m // 2
        self.door = (self.wall_x, int(rng.integers(1, m - 1)))
        left = [(x, y) for x in range(self.wall_x) for y in range(m)
                if (x, y) != (self.wall_x - 1, self.door[1])]
        self.key = left[int(rng.integers(len(left)))]
        if len(spec.goals) != 1:
            raise ConfigError("doorkey takes exactly one goal")
        (gcell, self.goal_reward), = spec.goals
        if gcell[0] <= self.wall_x:
            raise ConfigError(f"doorkey goal {gcell} must lie in the right room (x > {self.wall_x})")
        self.goal_cell = gcell
        self.goal_state = (gcell[0], gcell[1], HELD, HELD, 1)
        self.n_actions = 6
        self.action_names = ["+x", "-x", "+y", "-y", "pickup", "open"]
        self._feat_cache = {}

    @property
    def goal_rewards(self):
        return {self.goal_state: self.goal_reward}

    @property
    def goal_states(self):
        return [self.goal_state]

    def is_goal(self, s):
        return (s[0], s[1]) == self.goal_cell

    def _passable(self, cell, s):
        x, y = cell
        if not (0 <= x < self.m and 0 <= y < self.m):
            return False
        if cell == (s[2], s[3]):
            return False
        if x == self.wall_x:
            return cell == self.door and s[4] == 1
        return True

    @staticmethod
    def _adjacent(a, b):
        return abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1

    def move(self, s, a):
        if not 0 <= a < self.n_actions:
            raise UsageError(f"invalid action id {a}; env has {self.n_actions} actions")
        x, y, kx, ky, door = s
        if a < 4:
            nxt = [x, y]
            nxt[a // 2] += 1 if a % 2 == 0 else -1
            nxt = tuple(nxt)
            return (nxt[0], nxt[1], kx, ky, door) if self._passable(nxt, s) else s
        if a == self.PICKUP:
            if kx != HELD and self._adjacent((x, y), (kx, ky)):
                return (x, y, HELD, HELD, door)
            return s
        if kx == HELD and door == 0 and self._adjacent((x, y), self.door):
            return (x, y, kx, ky, 1)
        return s

    def step(self, s, a):
        if self.is_goal(s):
            if not 0 <= a < self.n_actions:
                raise UsageError(f"invalid action id {a}; env has {self.n_actions} actions")
            return s, 0.0, True
        nxt = self.move(s, a)
        if self.is_goal(nxt):
            return nxt, self.goal_reward, True
        return nxt, 0.0, False

    def initial_states(self):
        """Agent anywhere in the left room, key on the floor, door closed."""
        kx, ky = self.key
        return [(x, y, kx, ky, 0) for x in range(self.wall_x) for y in range(self.m)
                if (x, y) != self.key]

    feature_dim = 5

    def encode(self, s):
        f = self._feat_cache.get(s)
        if f is None:
            scale = 1.0 / (self.m - 1)
            kx, ky = (-1.0, -1.0) if s[2] == HELD else (s[2] * scale, s[3] * scale)
            f = np.array([s[0] * scale, s[1] * scale, kx, ky, float(s[4])])
            self._feat_cache[s] = f
        return f

    def encode_many(self, states):
        if not len(states):
            return np.zeros((0, self.feature_dim))
        return np.stack([self.encode(s) for s in states])


def make_env(spec):
    if spec.kind == "doorkey":
        return DoorKeyEnv(spec)
    return GridEnv(spec)


def transition(env, s, a):
    return env.step(s, a)


def enumerate_states(env, cap=DEFAULT_STATE_CAP):
    """All states reachable from the env's initial set, in BFS order."""
    seen = {}
    queue = deque()
    for s in env.initial_states():
        if s not in seen:
            if len(seen) >= cap:
                raise ResourceError(f"state space exceeds the cap of {cap} states")
            seen[s] = len(seen)
            queue.append(s)
    while queue:
        s = queue.popleft()
        for a in range(env.n_actions):
            nxt = env.move(s, a) if not env.is_goal(s) else s
            if nxt not in seen:
                if len(seen) >= cap:
                    raise ResourceError(f"state space exceeds the cap of {cap} states")
                seen[nxt] = len(seen)
                queue.append(nxt)
    return list(seen)


def inverse_action_check(env, states=None):
    """``(s, a, s')`` transitions with no action leading back from ``s'`` to ``s``.

    Checked on the underlying dynamics with goal absorption disabled.
    """
    states = enumerate_states(env) if states is None else states
    report = []
    for s in states:
        for a in range(env.n_actions):
            nxt = env.move(s, a)
            if nxt == s:
                continue
            if not any(env.move(nxt, b) == s for b in range(env.n_actions)):
                report.append((s, a, nxt))
    return report


@dataclass
class EnvIndex:
    """Enumerated env with a dense transition table, for oracles and fast rollouts."""
    env: object
    states: list
    index: dict = field(repr=False)
    next_state: np.ndarray = field(repr=False)   # (S, A) successor ids
    reward: np.ndarray = field(repr=False)       # (S, A) reward on that transition
    terminal: np.ndarray = field(repr=False)     # (S,) goal flag

    @classmethod
    def build(cls, env, cap=DEFAULT_STATE_CAP):
        states = enumerate_states(env, cap)
        index = {s: i for i, s in enumerate(states)}
        S, A = len(states), env.n_actions
        nxt = np.empty((S, A), dtype=np.int64)
        rew = np.zeros((S, A))
        term = np.zeros(S, dtype=bool)
        for i, s in enumerate(states):
            term[i] = env.is_goal(s)
            for a in range(A):
                s2, r, _ = env.step(s, a)
                nxt[i, a] = index[s2]
                rew[i, a] = r
        return cls(env, states, index, nxt, rew, term)

    @cached_property
    def features(self):
        return self.env.encode_many(self.states)

    @property
    def start_ids(self):
        """Non-goal states; episodes start uniformly among these."""
        return np.flatnonzero(~self.terminal)

    def diameter(self):
        """Geodesic diameter of the undirected transition graph (double sweep
        per component; exact on boxes and corridors)."""
        S = len(self.states)
        adj = [set() for _ in range(S)]
        for i in range(S):
            for j in self.next_state[i]:
                if j != i:
                    adj[i].add(int(j))
                    adj[int(j)].add(i)
        unseen = np.ones(S, dtype=bool)
        best = 0
        for root in range(S):
            if not unseen[root]:
                continue
            dist = _bfs(adj, root)
            unseen[dist >= 0] = False
            far = int(np.argmax(dist))
            best = max(best, int(_bfs(adj, far).max()))
        return best

    @cached_property
    def max_steps(self):
        return self.env.spec.max_steps or 4 * max(1, self.diameter())


def _bfs(adj, root):
    dist = np.full(len(adj), -1, dtype=np.int64)
    dist[root] = 0
    q = deque([root])
    while q:
        u = q.popleft()
        for v in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist
