"""Experiments: evaluation rollouts, dataset-quality sweeps, updates-to-solve
scaling, the multi-goal discount study and the greedy-optimality check.

All results are plain rows (dicts) so they can be written as CSV with
:func:`write_csv`. Returns are discounted by arrival time: an episode that
enters a goal of reward ``r`` after ``T`` steps returns ``gamma**T * r``.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .agent import (DQNConfig, DQNLearner, GreedyValuePolicy, OraclePolicy, PolicyConfig,
                    RandomPolicy, greedy_table, train_bc, train_dqn, train_pg_actor,
                    value_model_for_env)
from .datagen import TrainingPairs, collect
from .envs import EnvIndex, make_env
from .errors import MetricRLError
from .metric import MetricConfig, MetricLearner, monotonicity_violation_rate, train
from .oracle import (build_graph, env_optimal_value, goal_distances, optimal_action_mask,
                     optimal_greedy_policy)
from .tensor import atomic_write_text, derive_seed, make_rng

log = logging.getLogger(__name__)

TIERS = ("low", "medium", "high")
QUALITY_METHODS = ("metricrl", "bc", "dqn", "random")
SOLVE_STREAK = 25


@dataclass
class EvalReport:
    env: dict
    policy: str
    episodes: int
    success_rate: float
    mean_return: float
    mean_length: float
    seeds: list
    returns: np.ndarray = field(default=None, repr=False)
    starts: np.ndarray = field(default=None, repr=False)


def policy_table(policy, index):
    if isinstance(policy, np.ndarray):
        return policy
    return policy.table(index)


def rollout(table, index, starts, rng, gamma=0.95, horizon=None):
    """Run all episodes in lock-step. Returns ``(success, length, returns, goal_reached)``;
    ``goal_reached`` holds the terminal state id or -1."""
    horizon = horizon or index.max_steps
    cum = np.cumsum(table, axis=1)
    cum[:, -1] = 1.0
    deterministic = bool(np.all(table.max(axis=1) == 1.0))
    pos = np.asarray(starts, dtype=np.int64).copy()
    E = len(pos)
    done = index.terminal[pos].copy()
    length = np.zeros(E, dtype=np.int64)
    ret = np.zeros(E)
    for t in range(1, horizon + 1):
        active = ~done
        if not active.any():
            break
        if deterministic:
            a = np.argmax(table[pos], axis=1)
        else:
            u = rng.random(E)
            a = (cum[pos] < u[:, None]).sum(axis=1)
        nxt = index.next_state[pos, a]
        r = index.reward[pos, a]
        ret = np.where(active, ret + gamma ** t * r, ret)
        length = np.where(active, t, length)
        pos = np.where(active, nxt, pos)
        done = done | index.terminal[pos]
    goal = np.where(done, pos, -1)
    return done, length, ret, goal


def evaluate(policy, index, episodes=100, seed=0, gamma=0.95, horizon=None, starts=None):
    """Success rate, discounted return and length over episodes started
    uniformly among non-goal states. Timeouts count as failures."""
    rng = make_rng(seed)
    if starts is None:
        ids = index.start_ids
        starts = ids[rng.integers(len(ids), size=episodes)]
    table = policy_table(policy, index)
    ok, length, ret, _ = rollout(table, index, starts, rng, gamma, horizon)
    return EvalReport(index.env.spec.to_dict(), getattr(policy, "name", "table"), len(starts),
                      float(ok.mean()), float(ret.mean()), float(length.mean()), [seed], ret, starts)


def write_csv(path, rows, fields=None):
    text = csv_text(rows, fields)
    if path is not None:
        atomic_write_text(path, text)
    return text


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return v


def csv_text(rows, fields=None):
    fields = fields or (list(rows[0]) if rows else [])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for row in rows:
        w.writerow([_fmt(row.get(k)) for k in fields])
    return buf.getvalue()


# --- dataset-quality sweep -------------------------------------------------------

@dataclass
class QualityBudget:
    metric: MetricConfig = field(default_factory=MetricConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    dqn: DQNConfig = field(default_factory=DQNConfig)
    data_episodes: int = 1000
    eval_episodes: int = 200
    audit_triples: int = 10_000
    gamma: float = 0.95


QUALITY_FIELDS = ("tier", "method", "seed", "success_rate", "mean_return", "mean_length",
                  "violation_rate", "transitions", "status")


def _quality_job(args):
    spec, tier, seed, methods, budget = args
    index = EnvIndex.build(make_env(spec))
    tier_no = TIERS.index(tier) if tier in TIERS else 7
    data = collect(index, tier, budget.data_episodes, derive_seed(seed, 1, tier_no), budget.gamma)
    eval_seed = derive_seed(seed, 2)
    rows = []
    embedding = None
    for method in methods:
        row = {"tier": tier, "method": method, "seed": seed, "transitions": len(data), "status": "ok"}
        try:
            if method in ("metricrl", "metricrl-pg") and embedding is None:
                embedding, _ = train(data, replace(budget.metric, seed=seed, audit_triples=0))
                g = build_graph(data)
                rep = monotonicity_violation_rate(embedding, g, budget.audit_triples,
                                                  make_rng(derive_seed(seed, 3)), exhaustive=False)
                violation = rep.rate
                witnesses = [tuple(g.keys[k] for k in w[:3]) + tuple(float(x) for x in w[3:])
                             for w in rep.witnesses[:5]]
            if method == "metricrl":
                policy = GreedyValuePolicy(embedding, budget.gamma)
                row["violation_rate"] = violation
                row["witnesses"] = witnesses      # not a CSV column; kept for failure reports
            elif method == "metricrl-pg":
                vm = value_model_for_env(embedding, index.env, budget.gamma)
                policy, _ = train_pg_actor(data, vm, replace(budget.policy, seed=seed),
                                           index.env.n_actions)
            elif method == "bc":
                policy, _ = train_bc(data, replace(budget.policy, seed=seed), index.env.n_actions)
            elif method == "dqn":
                policy, fit = train_dqn(data, replace(budget.dqn, seed=seed, gamma=budget.gamma),
                                        index.env.n_actions)
                if fit.failed:
                    row["status"] = f"diverged: {fit.reason}"
            elif method == "random":
                policy = RandomPolicy()
            elif method == "oracle":
                policy = OraclePolicy(budget.gamma)
            else:
                raise MetricRLError(f"unknown method {method!r}")
            rep = evaluate(policy, index, budget.eval_episodes, eval_seed, budget.gamma)
            row.update(success_rate=rep.success_rate, mean_return=rep.mean_return,
                       mean_length=rep.mean_length)
        except MetricRLError as exc:
            log.error("run %s/%s/seed %s failed: %s", tier, method, seed, exc)
            row["status"] = f"failed: {exc}"
        rows.append(row)
    return rows


def quality_sweep(spec, tiers=TIERS, methods=QUALITY_METHODS, seeds=(0, 1, 2, 3, 4), budget=None,
                  jobs=1):
    """Every ``tier x seed`` dataset, every method trained and evaluated with the
    same budget. Rows are ordered by (tier, seed, method) whatever ``jobs`` is."""
    budget = budget or QualityBudget()
    work = [(spec, tier, int(seed), tuple(methods), budget) for tier in tiers for seed in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            parts = list(pool.map(_quality_job, work))
    else:
        parts = [_quality_job(w) for w in work]
    return [row for part in parts for row in part]


def summarize_quality(rows):
    """Mean and std of success rate per (tier, method)."""
    groups = {}
    for r in rows:
        if r.get("success_rate") is None:
            continue
        groups.setdefault((r["tier"], r["method"]), []).append(r["success_rate"])
    return {k: (float(np.mean(v)), float(np.std(v)), len(v)) for k, v in groups.items()}


# --- updates-to-solve ------------------------------------------------------------

@dataclass
class SolveCurvePoint:
    size: int
    dims: int
    method: str
    updates: int | None
    censored: bool

    def row(self):
        return {"cells": self.size, "dims": self.dims, "method": self.method,
                "updates_to_solve": self.updates, "censored": int(self.censored)}


@dataclass
class SolveBudget:
    max_updates: int = 100_000
    cadence: int = 500
    eval_episodes: int = SOLVE_STREAK
    initial_samples: int = 2000
    samples_per_round: int = 1000
    batch_size: int = 256
    gamma: float = 0.95
    seed: int = 0
    metric: MetricConfig = field(default_factory=lambda: MetricConfig(audit_triples=0))
    dqn: DQNConfig = field(default_factory=DQNConfig)


class _RandomTransitions:
    """Uniformly random (state, action) samples from the environment."""

    def __init__(self, index, rng):
        self.index, self.rng = index, rng
        self.s = np.zeros(0, dtype=np.int64)
        self.a = np.zeros(0, dtype=np.int64)

    def grow(self, n):
        ix = self.index
        self.s = np.concatenate([self.s, self.rng.integers(len(ix.states), size=n)])
        self.a = np.concatenate([self.a, self.rng.integers(ix.env.n_actions, size=n)])

    @property
    def s_next(self):
        return self.index.next_state[self.s, self.a]


def _solved(actions, index, starts):
    table = np.zeros((len(index.states), index.env.n_actions))
    table[np.arange(len(actions)), actions] = 1.0
    ok, *_ = rollout(table, index, starts, None)
    return bool(ok.all())


def solve_run(method, spec, budget=None):
    """Updates until ``eval_episodes`` consecutive evaluation episodes succeed.

    Data grows by ``samples_per_round`` random transitions every ``cadence``
    updates; evaluation follows each round. Returns a :class:`SolveCurvePoint`
    with ``updates=None`` and ``censored=True`` if the budget runs out.
    """
    budget = budget or SolveBudget()
    index = EnvIndex.build(make_env(spec))
    F = index.features
    rng = make_rng(derive_seed(budget.seed, 11, spec.cells, spec.dims))
    data = _RandomTransitions(index, rng)
    data.grow(budget.initial_samples)
    if method == "metricrl":
        learner = MetricLearner(F.shape[1], replace(budget.metric, seed=budget.seed))
    elif method == "dqn":
        learner = DQNLearner(F.shape[1], index.env.n_actions,
                             replace(budget.dqn, seed=budget.seed, gamma=budget.gamma))
    else:
        raise MetricRLError(f"unknown method {method!r}; expected metricrl or dqn")
    eval_rng = make_rng(derive_seed(budget.seed, 12, spec.cells, spec.dims))
    goal_ids = [index.index[g] for g in index.env.goal_states]
    updates = 0
    while updates < budget.max_updates:
        s, s2, a = data.s, data.s_next, data.a
        if method == "metricrl":
            keep = s != s2
            pairs = TrainingPairs(F[s[keep]], F[s2[keep]], F[np.unique(np.concatenate([s, s2]))])
        for _ in range(min(budget.cadence, budget.max_updates - updates)):
            if method == "metricrl":
                learner.update(pairs.sample(budget.batch_size, learner.rng))
            else:
                i = learner.rng.integers(len(s), size=budget.batch_size)
                learner.update(F[s[i]], a[i], index.reward[s[i], a[i]], F[s2[i]], index.terminal[s2[i]])
            updates += 1
        if method == "metricrl":
            Z = learner.model().embed(F)
            d = np.min(np.linalg.norm(Z[:, None, :] - Z[goal_ids][None, :, :], axis=2), axis=1)
            actions = np.argmin(d[index.next_state], axis=1)
        else:
            actions = np.argmax(learner.model().outputs(F), axis=1)
        starts = index.start_ids[eval_rng.integers(len(index.start_ids), size=budget.eval_episodes)]
        if _solved(actions, index, starts):
            return SolveCurvePoint(spec.cells, spec.dims, method, updates, False)
        data.grow(budget.samples_per_round)
    return SolveCurvePoint(spec.cells, spec.dims, method, None, True)


def solve_complexity_sweep(methods, specs, budget=None):
    return [solve_run(m, spec, budget) for spec in specs for m in methods]


def growth_ratio(points, method, small, large):
    """``u(large) / u(small)``; ``inf`` when the large maze was censored,
    ``None`` when the small one was."""
    by = {p.size if p.method == method else None: p for p in points if p.method == method}
    a, b = by.get(small), by.get(large)
    if a is None or b is None or a.censored:
        return None
    return math.inf if b.censored else b.updates / a.updates


# --- multi-goal study ------------------------------------------------------------

GAMMA_GRID = (0.5, 0.9, 0.95, 0.99, 0.999)


@dataclass
class MultiGoalResult:
    gammas: tuple
    starts: list
    chosen: np.ndarray        # (n_gammas, n_starts) goal index reached, -1 if none
    analytic: np.ndarray      # (n_gammas, n_starts) optimal goal index
    crossover: np.ndarray     # (n_starts,) analytic flip discount, nan if none
    field_rows: list

    def flip_index(self, choices):
        """First grid index from which the choice stays on the highest-reward goal."""
        best = int(np.argmax(self._rewards))
        k = len(self.gammas)
        while k > 0 and choices[k - 1] == best:
            k -= 1
        return k

    def bracket_report(self):
        emp = np.array([self.flip_index(self.chosen[:, j]) for j in range(len(self.starts))])
        ana = np.array([self.flip_index(self.analytic[:, j]) for j in range(len(self.starts))])
        return {"exact": emp == ana, "within_one": np.abs(emp - ana) <= 1,
                "empirical_index": emp, "analytic_index": ana}

    def rows(self):
        out = []
        for k, gm in enumerate(self.gammas):
            for j, s in enumerate(self.starts):
                out.append({"gamma": gm, "start": ":".join(map(str, s)), "chosen_goal": int(self.chosen[k, j]),
                            "optimal_goal": int(self.analytic[k, j]), "crossover": float(self.crossover[j])})
        return out


def multi_goal_study(spec, gammas=GAMMA_GRID, embedding=None, metric_config=None, tier="low",
                     data_episodes=1000, seed=0, data_gamma=0.95):
    """Train (unless given) an embedding on a low-quality dataset, then for each
    discount roll out the greedy policy from every non-goal start and record
    which goal it reaches, next to the analytically optimal goal."""
    index = EnvIndex.build(make_env(spec))
    if embedding is None:
        data = collect(index, tier, data_episodes, derive_seed(seed, 21), data_gamma)
        embedding, _ = train(data, replace(metric_config or MetricConfig(), seed=seed))
    goals = list(index.env.goal_rewards.items())
    goal_ids = [index.index[g] for g, _ in goals]
    rewards = np.array([r for _, r in goals])
    starts = [int(i) for i in index.start_ids]
    g = build_graph(index)
    dist, _ = goal_distances(g, [(gid, r) for gid, (_, r) in zip(goal_ids, goals)])
    chosen = np.full((len(gammas), len(starts)), -1)
    analytic = np.zeros((len(gammas), len(starts)), dtype=np.int64)
    field_rows = []
    for k, gm in enumerate(gammas):
        vm = value_model_for_env(embedding, index.env, gm)
        table = np.zeros((len(index.states), index.env.n_actions))
        table[np.arange(len(index.states)), greedy_table(vm, index)] = 1.0
        _, _, _, reached = rollout(table, index, starts, None, gm)
        chosen[k] = [goal_ids.index(r) if r in goal_ids else -1 for r in reached]
        with np.errstate(under="ignore"):
            analytic[k] = np.argmax(gm ** dist[:, starts] * rewards[:, None], axis=0)
        field_rows += _gradient_field(vm, index, gm)
    cross = np.full(len(starts), np.nan)
    best = int(np.argmax(rewards))
    for j, s in enumerate(starts):
        # discount at which the best-reward goal overtakes the most attractive other goal
        others = [i for i in range(len(goals)) if i != best]
        cands = []
        for i in others:
            di, db = dist[i, s], dist[best, s]
            if di < db:
                cands.append(math.exp(math.log(rewards[i] / rewards[best]) / (db - di)))
        if cands:
            cross[j] = max(cands)
    res = MultiGoalResult(tuple(gammas), [index.states[s] for s in starts], chosen, analytic, cross,
                          field_rows)
    res._rewards = rewards
    return res


def _gradient_field(vm, index, gamma):
    """Central-difference gradient of the value on a 2D grid env."""
    if index.env.n != 2 or index.env.spec.kind == "doorkey":
        return []
    v = vm.values(index.features)
    lookup = dict(zip(index.states, v))
    rows = []
    for s, val in lookup.items():
        x, y = s
        grads = []
        for dx, dy in ((1, 0), (0, 1)):
            hi = lookup.get((x + dx, y + dy), val)
            lo = lookup.get((x - dx, y - dy), val)
            span = ((x + dx, y + dy) in lookup) + ((x - dx, y - dy) in lookup)
            grads.append((hi - lo) / span if span else 0.0)
        rows.append({"gamma": gamma, "x": x, "y": y, "value": float(val),
                     "grad_x": float(grads[0]), "grad_y": float(grads[1])})
    return rows


# --- greedy optimality check -----------------------------------------------------

@dataclass
class TheoremReport:
    states: int
    agreement: float          # greedy action inside the optimal action set
    exact_agreement: float    # greedy action equals the lowest-id optimal action
    violations: int
    triples: int
    implication_holds: bool
    single_goal: bool
    disagreements: list

    def lines(self):
        return [f"states evaluated      {self.states}",
                f"agreement             {self.agreement:.6f}",
                f"exact agreement       {self.exact_agreement:.6f}",
                f"violations            {self.violations} / {self.triples}",
                f"implication holds     {self.implication_holds}"]


def verify_theorem(model, index, gamma=0.95, tol=1e-9):
    """Compare the greedy policy on the embedding value with the optimal policy
    at every non-goal state, next to the exhaustive monotonicity count on the
    environment graph. ``model`` is an embedding or latents aligned with
    ``index.states``."""
    g = build_graph(index)
    mono = monotonicity_violation_rate(model, g, tol=tol, exhaustive=True)
    if hasattr(model, "embed"):
        embedding = model
    else:
        latents = np.asarray(model, dtype=np.float64)
        lookup = {tuple(f): z for f, z in zip(index.features, latents)}
        embedding = lambda feats: np.stack([lookup[tuple(f)] for f in np.atleast_2d(feats)])  # noqa: E731
    vm = value_model_for_env(embedding, index.env, gamma)
    pi = greedy_table(vm, index)
    vstar = env_optimal_value(index, gamma)
    mask = optimal_action_mask(index, vstar)
    pistar = optimal_greedy_policy(index, vstar)
    live = np.flatnonzero(~index.terminal)
    inset = mask[live, pi[live]]
    agree = float(inset.mean()) if len(live) else 1.0
    exact = float((pi[live] == pistar[live]).mean()) if len(live) else 1.0
    single = len(index.env.goal_states) == 1
    holds = (mono.violations > 0) or agree == 1.0 or not single
    bad = [(index.states[live[k]], int(pi[live[k]]), int(pistar[live[k]])) for k in np.flatnonzero(~inset)]
    return TheoremReport(len(live), agree, exact, mono.violations, mono.triples, holds, single, bad[:100])


def report_dict(rep):
    d = asdict(rep)
    d.pop("returns", None)
    d.pop("starts", None)
    return d


def path_fixture(n=6, swap=False):
    """A 1D corridor of ``n`` cells with the goal at the end, and the latent
    map ``x -> x`` (isometric). With ``swap`` the latents of cells 1 and 3
    are exchanged, which breaks monotonicity. Returns ``(index, latents)``."""
    from .envs import empty_spec
    index = EnvIndex.build(make_env(empty_spec(cells=n, dims=1)))
    coords = np.array([s[0] for s in index.states], dtype=np.float64)
    if swap:
        a, b = index.index[(1,)], index.index[(3,)]
        coords[[a, b]] = coords[[b, a]]
    return index, coords[:, None]
