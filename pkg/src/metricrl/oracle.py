"""Exact ground truth over dataset and environment graphs.

Geodesic distance is the number of edges on a shortest path of the
undirected graph whose edges join states linked by an observed action.
With sparse absorbing goals the optimal value of a state is

    V*(s) = max_i gamma ** d(s, goal_i) * r_i,

where paths may not pass through another goal. Values follow the
arrival convention V*(goal) = r_goal; the matching Bellman operator is
``V(s) = r(s)`` on goals and ``max_a gamma * V(T(s, a))`` elsewhere.
"""
from __future__ import annotations

import heapq
import io
import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .envs import EnvIndex
from .errors import DataError, UsageError
from .tensor import atomic_write_text

log = logging.getLogger(__name__)

META_FEATURE_VALUE = -1.0


@dataclass
class DatasetGraph:
    keys: list                       # node id -> canonical state key
    features: np.ndarray             # (N, feature_dim)
    adj: list                        # node id -> sorted neighbour ids
    terminal: np.ndarray             # (N,) bool
    meta: int | None = None
    index: dict = field(default_factory=dict, repr=False)
    labels: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not self.index:
            self.index = {k: i for i, k in enumerate(self.keys)}
        if self.labels is None:
            self.labels = component_labels(self.adj)

    @property
    def n_nodes(self):
        return len(self.keys)

    @property
    def n_edges(self):
        return sum(len(a) for a in self.adj) // 2

    @property
    def n_components(self):
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    @property
    def real_nodes(self):
        """Node ids excluding the meta node."""
        return np.array([i for i in range(self.n_nodes) if i != self.meta], dtype=np.int64)

    def node(self, key):
        try:
            return self.index[key]
        except KeyError:
            raise UsageError(f"state {key!r} is not a node of the graph") from None


def component_labels(adj, skip=None):
    labels = np.full(len(adj), -1, dtype=np.int64)
    comp = 0
    for root in range(len(adj)):
        if labels[root] >= 0 or root == skip:
            continue
        labels[root] = comp
        q = deque([root])
        while q:
            u = q.popleft()
            for v in adj[u]:
                if labels[v] < 0 and v != skip:
                    labels[v] = comp
                    q.append(v)
        comp += 1
    return labels


def _from_edges(keys, features, edges, terminal):
    adj = [set() for _ in keys]
    for u, v in edges:
        if u != v:
            adj[u].add(v)
            adj[v].add(u)
    return DatasetGraph(list(keys), np.asarray(features, dtype=np.float64),
                        [sorted(a) for a in adj], np.asarray(terminal, dtype=bool))


def state_key(features):
    return tuple(float(x) for x in features)


def build_graph(source):
    """Graph over a :class:`~metricrl.datagen.Dataset` (nodes = distinct
    observed feature vectors) or an :class:`EnvIndex` (nodes = all
    reachable states, in enumeration order). Edges are symmetrized."""
    if isinstance(source, EnvIndex):
        S = len(source.states)
        edges = [(i, int(j)) for i in range(S) for j in source.next_state[i]]
        return _from_edges(source.states, source.features, edges, source.terminal)
    s, s2, term = source.s, source.s_next, source.terminal
    if len(s) == 0:
        raise UsageError("cannot build a graph from an empty dataset")
    index, keys, feats = {}, [], []

    def nid(row):
        k = state_key(row)
        i = index.get(k)
        if i is None:
            i = index[k] = len(keys)
            keys.append(k)
            feats.append(row)
        return i

    edges = []
    terminal = {}
    for a, b, t in zip(s, s2, term):
        u, v = nid(a), nid(b)
        edges.append((u, v))
        if t:
            terminal[v] = True
    flags = [terminal.get(i, False) for i in range(len(keys))]
    return _from_edges(keys, np.stack(feats), edges, flags)


def add_meta_state(g, terminal_ids=None, force=False):
    """Join every terminal node to one synthetic node.

    An already connected graph is returned unchanged unless ``force``. The
    meta node's features are a constant sentinel vector. Raises
    :class:`DataError` naming every component still cut off afterwards.
    """
    if g.meta is not None:
        return g
    if g.n_components <= 1 and not force:
        return g
    term = np.flatnonzero(g.terminal) if terminal_ids is None else np.asarray(terminal_ids, dtype=np.int64)
    if len(term) == 0:
        raise DataError(f"graph has {g.n_components} components and no terminal states to join")
    meta_feat = np.full(g.features.shape[1], META_FEATURE_VALUE)
    key = ("<meta>",)
    if any(np.array_equal(meta_feat, f) for f in g.features):
        raise DataError("meta-state sentinel features collide with a dataset state")
    meta = g.n_nodes
    adj = [list(a) for a in g.adj] + [sorted(int(t) for t in term)]
    for t in term:
        adj[int(t)] = sorted(set(adj[int(t)]) | {meta})
    out = DatasetGraph(g.keys + [key], np.vstack([g.features, meta_feat]), adj,
                       np.append(g.terminal, False), meta=meta)
    if out.n_components > 1:
        main = out.labels[meta]
        orphans = {}
        for i in range(out.n_nodes):
            if out.labels[i] != main:
                orphans.setdefault(int(out.labels[i]), []).append(i)
        desc = "; ".join(f"component {c}: {len(ids)} states, e.g. {out.keys[ids[0]]}"
                         for c, ids in sorted(orphans.items()))
        raise DataError(f"graph still disconnected after meta-state augmentation, "
                        f"components without a terminal state -> {desc}")
    return out


def geodesics_from(g, source, through_meta=False, blocked=()):
    """BFS edge counts from node ``source``; ``inf`` where unreachable.

    Nodes in ``blocked`` can be reached but not passed through.
    """
    if not 0 <= source < g.n_nodes:
        raise UsageError(f"unknown source node {source}")
    skip = None if through_meta else g.meta
    if source == skip:
        skip = None
    dist = np.full(g.n_nodes, np.inf)
    dist[source] = 0.0
    stop = set(blocked)
    q = deque([source])
    while q:
        u = q.popleft()
        if u in stop and u != source:
            continue
        du = dist[u] + 1.0
        for v in g.adj[u]:
            if v == skip:
                continue
            if dist[v] == np.inf:
                dist[v] = du
                q.append(v)
    return dist


def dijkstra_from(g, source, through_meta=False):
    """Unit-weight Dijkstra; an independent cross-check of :func:`geodesics_from`."""
    if not 0 <= source < g.n_nodes:
        raise UsageError(f"unknown source node {source}")
    skip = None if through_meta or source == g.meta else g.meta
    dist = np.full(g.n_nodes, np.inf)
    dist[source] = 0.0
    heap = [(0.0, source)]
    done = np.zeros(g.n_nodes, dtype=bool)
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for v in g.adj[u]:
            if v == skip or done[v]:
                continue
            nd = d + 1.0
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


class GeodesicTable:
    """Lazily filled source -> distance-array cache."""

    def __init__(self, g, through_meta=False):
        self.g = g
        self.through_meta = through_meta
        self._rows = {}

    def row(self, source):
        r = self._rows.get(source)
        if r is None:
            r = self._rows[source] = geodesics_from(self.g, source, self.through_meta)
        return r

    def __call__(self, a, b):
        return self.row(b)[a]

    def matrix(self, nodes=None):
        nodes = range(self.g.n_nodes) if nodes is None else nodes
        return np.stack([self.row(int(i)) for i in nodes])


def check_metric_axioms(table, rng, n_triples=10_000, nodes=None):
    """Identity, symmetry and triangle inequality on random node triples.

    Returns the number of violating triples (0 expected)."""
    nodes = np.asarray(table.g.real_nodes if nodes is None else nodes)
    bad = 0
    for _ in range(n_triples):
        a, b, c = (int(x) for x in rng.choice(nodes, 3))
        dab, dba, dbc, dac = table(a, b), table(b, a), table(b, c), table(a, c)
        if table(a, a) != 0 or dab != dba or dac > dab + dbc:
            bad += 1
    return bad


@dataclass
class ValueReport:
    values: np.ndarray
    unreachable: list


def goal_distances(g, goals, through_meta=False):
    """``(n_goals, N)`` distance to each goal, other goals being absorbing."""
    ids = [g.node(k) if not isinstance(k, (int, np.integer)) else int(k) for k, _ in goals]
    rows = []
    for i in ids:
        others = [j for j in ids if j != i]
        rows.append(geodesics_from(g, i, through_meta, blocked=others))
    return np.stack(rows), ids


def optimal_value(g, goals, gamma, through_meta=False):
    """Exact V* for the deterministic sparse goal-reaching task on ``g``.

    ``goals`` holds ``(state_key_or_node_id, reward)`` pairs. Nodes with no
    path to any goal get V* = 0 and are listed in the report.
    """
    if not 0 < gamma < 1:
        raise UsageError(f"gamma must lie in (0, 1), got {gamma}")
    dist, _ = goal_distances(g, goals, through_meta)
    rewards = np.array([r for _, r in goals], dtype=np.float64)[:, None]
    with np.errstate(over="ignore", under="ignore"):
        v = np.where(np.isfinite(dist), gamma ** np.where(np.isfinite(dist), dist, 0.0) * rewards, 0.0)
    values = v.max(axis=0)
    unreachable = [i for i in range(g.n_nodes)
                   if i != g.meta and not np.isfinite(dist[:, i]).any()]
    if unreachable:
        log.warning("%d states cannot reach any goal; their value is set to 0", len(unreachable))
    return ValueReport(values, unreachable)


def env_optimal_value(index, gamma):
    """V* over the enumerated states of an env (order of ``index.states``)."""
    g = build_graph(index)
    goals = [(s, r) for s, r in index.env.goal_rewards.items() if s in index.index]
    return optimal_value(g, goals, gamma).values


def value_iteration(index, gamma, tol=1e-12, max_sweeps=10_000):
    """Bellman iteration on the true directed transitions.

    Returns ``(values, sweeps)``."""
    reward_at = np.zeros(len(index.states))
    for s, r in index.env.goal_rewards.items():
        if s in index.index:
            reward_at[index.index[s]] = r
    v = np.zeros(len(index.states))
    for sweep in range(1, max_sweeps + 1):
        new = np.where(index.terminal, reward_at, gamma * v[index.next_state].max(axis=1))
        delta = np.abs(new - v).max()
        v = new
        if delta < tol:
            return v, sweep
    return v, max_sweeps


def optimal_action_mask(index, values, rtol=1e-12):
    """``(S, A)`` mask of actions whose successor attains the best value."""
    succ = values[index.next_state]
    best = succ.max(axis=1, keepdims=True)
    return succ >= best - rtol * np.abs(best)


def optimal_greedy_policy(index, values):
    """pi*(s) = argmax_a V*(T(s, a)), lowest action id on ties; 0 on goals."""
    mask = optimal_action_mask(index, values)
    pi = np.argmax(mask, axis=1)
    pi[index.terminal] = 0
    return pi


def export_adjacency(g, path=None):
    """One line per node: ``node_id neighbour neighbour ...``."""
    buf = io.StringIO()
    for i, nbrs in enumerate(g.adj):
        buf.write(" ".join([str(i), *map(str, nbrs)]) + "\n")
    text = buf.getvalue()
    if path is not None:
        atomic_write_text(path, text)
    return text


def export_values(g, values, path=None):
    buf = io.StringIO()
    buf.write("state_key,value\n")
    for key, v in zip(g.keys, values):
        buf.write(f"\"{';'.join(map(str, key))}\",{float(v)!r}\n")
    text = buf.getvalue()
    if path is not None:
        atomic_write_text(path, text)
    return text
