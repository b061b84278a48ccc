"""Values and policies built on a learned embedding, plus BC and DQN baselines.

The value of a state is ``max_i gamma ** |phi(s) - phi(g_i)| * r_i``. The
greedy policy queries the true transition function and moves to the
successor of highest value; goals are absorbing, so a successor that is a
goal is worth exactly that goal's reward. The policy-gradient actor instead learns from
dataset actions only, weighting their log-likelihood by
``V(s') - V(s)`` with the embedding frozen.

Every policy can be tabulated over an :class:`~metricrl.envs.EnvIndex` as
an ``(S, A)`` matrix of action probabilities, which is what rollouts use.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, TrainingError, UsageError
from .oracle import env_optimal_value, optimal_greedy_policy
from .tensor import (AdamState, adam_step, init_mlp, load_checkpoint, make_rng, mlp_backward,
                     mlp_forward, save_checkpoint)

VALUE_MODES = ("gamma-exp", "neg-distance")


class ValueModel:
    """Embedding-distance value over one or more ``(goal_features, reward)`` goals."""

    def __init__(self, embedding, goals, gamma=0.95, mode="gamma-exp"):
        if not 0 < gamma < 1:
            raise ConfigError(f"gamma must lie in (0, 1), got {gamma}")
        if mode not in VALUE_MODES:
            raise ConfigError(f"unknown value mode {mode!r}")
        if not goals:
            raise ConfigError("at least one goal is required")
        if mode == "neg-distance" and len(goals) != 1:
            raise ConfigError("neg-distance mode is only defined for a single goal")
        if any(r <= 0 for _, r in goals):
            raise ConfigError("goal rewards must be positive")
        self.embedding = embedding
        self.gamma = float(gamma)
        self.mode = mode
        self.rewards = np.array([r for _, r in goals], dtype=np.float64)
        self.goal_features = np.stack([np.asarray(f, dtype=np.float64) for f, _ in goals])
        self.goal_latents = self._embed(self.goal_features)

    def _embed(self, features):
        if hasattr(self.embedding, "embed"):
            return self.embedding.embed(features)
        return self.embedding(features)

    def goal_distances(self, features):
        z = np.atleast_2d(self._embed(np.atleast_2d(features)))
        return np.linalg.norm(z[:, None, :] - self.goal_latents[None, :, :], axis=2)

    def values(self, features):
        d = self.goal_distances(features)
        if self.mode == "neg-distance":
            return -d[:, 0]
        return np.max(self.gamma ** d * self.rewards, axis=1)

    def value(self, features):
        return float(self.values(np.atleast_2d(features))[0])

    def with_rewards(self, scale):
        vm = ValueModel.__new__(ValueModel)
        vm.__dict__.update(self.__dict__)
        vm.rewards = self.rewards * scale
        return vm


def value_model_for_env(embedding, env, gamma=0.95, mode="gamma-exp"):
    goals = [(env.encode(s), r) for s, r in env.goal_rewards.items()]
    return ValueModel(embedding, goals, gamma, mode)


def value(vm, features):
    return vm.value(features)


def _absorb(vm, v, env, hits):
    """Goals are absorbing: entering one is worth its own reward, whatever
    the other goals' terms say. ``hits`` pairs an entry of ``v`` with a goal
    state; the value model's goals are taken in ``env.goal_rewards`` order."""
    if vm.mode == "gamma-exp":
        order = list(env.goal_rewards)
        for i, g in hits:
            v[i] = vm.rewards[order.index(g)]
    return v


def greedy_action(vm, env, s):
    """argmax_a V(T(s, a)), lowest id on ties; 0 in a terminal state."""
    if env.is_goal(s):
        return 0
    succ = [env.step(s, a)[0] for a in range(env.n_actions)]
    v = vm.values(env.encode_many(succ))
    v = _absorb(vm, v, env, [(k, t) for k, t in enumerate(succ) if env.is_goal(t)])
    return int(np.argmax(v))


def greedy_table(vm, index):
    """Greedy action for every enumerated state."""
    v = vm.values(index.features)
    v = _absorb(vm, v, index.env, [(index.index[g], g) for g in index.env.goal_rewards])
    pi = np.argmax(v[index.next_state], axis=1)
    pi[index.terminal] = 0
    return pi


def one_hot_table(actions, n_actions):
    t = np.zeros((len(actions), n_actions))
    t[np.arange(len(actions)), actions] = 1.0
    return t


class OraclePolicy:
    name = "oracle"

    def __init__(self, gamma=0.95):
        self.gamma = gamma

    def table(self, index):
        pi = optimal_greedy_policy(index, env_optimal_value(index, self.gamma))
        return one_hot_table(pi, index.env.n_actions)


class RandomPolicy:
    name = "random"

    def table(self, index):
        A = index.env.n_actions
        return np.full((len(index.states), A), 1.0 / A)


class GreedyValuePolicy:
    name = "metricrl"

    def __init__(self, embedding, gamma=0.95, mode="gamma-exp"):
        self.embedding = embedding
        self.gamma = gamma
        self.mode = mode

    def value_model(self, env):
        return value_model_for_env(self.embedding, env, self.gamma, self.mode)

    def table(self, index):
        return one_hot_table(greedy_table(self.value_model(index.env), index), index.env.n_actions)


# --- learned policies ----------------------------------------------------------

def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


@dataclass
class PolicyModel:
    """MLP from state features to per-action outputs. ``role`` is ``actor``
    or ``bc`` (categorical logits) or ``dqn`` (Q values)."""
    params: object
    role: str = "actor"
    seed: int = 0
    sample: bool = True

    @property
    def name(self):
        return {"actor": "metricrl-pg", "bc": "bc", "dqn": "dqn"}.get(self.role, self.role)

    def outputs(self, features):
        return mlp_forward(self.params, np.atleast_2d(features))[0]

    def probs(self, features):
        return _softmax(self.outputs(features))

    def table(self, index):
        out = self.outputs(index.features)
        if self.role == "dqn" or not self.sample:
            return one_hot_table(np.argmax(out, axis=1), out.shape[1])
        return _softmax(out)

    def save(self, path):
        save_checkpoint(path, self.params, self.seed, role=self.role)

    @classmethod
    def load(cls, path, role=None, sample=True):
        params, header = load_checkpoint(path, expect_role=role)
        return cls(params, header["role"], header["seed"], sample)


@dataclass
class PolicyConfig:
    epochs: int = 100
    batches_per_epoch: int = 500
    batch_size: int = 256
    lr: float = 1e-3
    seed: int = 0
    hidden: tuple = (64, 64, 64)
    # actor only: "raw" weights log-likelihoods by V(s') - V(s) as is, which is
    # unbounded below for a categorical head; "positive" drops negative weights
    advantage: str = "raw"

    def __post_init__(self):
        for k in ("epochs", "batches_per_epoch", "batch_size"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be positive")
        if self.advantage not in ("raw", "positive"):
            raise ConfigError(f"advantage must be raw or positive, got {self.advantage!r}")
        self.hidden = tuple(int(h) for h in self.hidden)


def weighted_nll_grad(params, features, actions, weights):
    """Loss ``-mean(w * log pi(a|s))`` and its parameter gradients."""
    logits, cache = mlp_forward(params, features)
    logp = _log_softmax(logits)
    B = len(actions)
    rows = np.arange(B)
    loss = -np.mean(weights * logp[rows, actions])
    g = np.exp(logp)
    g[rows, actions] -= 1.0
    g *= (weights / B)[:, None]
    return loss, mlp_backward(params, cache, g)


@dataclass
class FitLog:
    losses: list = field(default_factory=list)
    failed: bool = False
    reason: str = ""


def _fit_weighted(dataset, weights, config, role, n_actions):
    if len(dataset) == 0:
        raise UsageError("cannot train a policy on an empty dataset")
    rng = make_rng(config.seed)
    params = init_mlp(dataset.feature_dim, n_actions, rng, config.hidden)
    opt = AdamState.for_params(params, lr=config.lr)
    fit = FitLog()
    step = 0
    for _ in range(config.epochs):
        acc = []
        for _ in range(config.batches_per_epoch):
            idx = rng.integers(len(dataset), size=config.batch_size)
            loss, grads = weighted_nll_grad(params, dataset.s[idx], dataset.a[idx], weights[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite policy loss at batch {step}", step)
            adam_step(opt, params, grads, batch_index=step)
            acc.append(loss)
            step += 1
        fit.losses.append(float(np.mean(acc)))
    return PolicyModel(params, role, config.seed), fit


def advantages(dataset, vm):
    """``V(s') - V(s)`` per record, with the embedding held fixed."""
    adv = vm.values(dataset.s_next) - vm.values(dataset.s)
    if not np.all(np.isfinite(adv)):
        bad = int(np.flatnonzero(~np.isfinite(adv))[0])
        raise TrainingError(f"non-finite advantage at record {bad}", bad)
    return adv


def train_pg_actor(dataset, vm, config=None, n_actions=None):
    """Categorical actor maximizing the advantage-weighted log-likelihood of
    dataset actions. The advantage is used raw unless ``config.advantage`` is
    ``"positive"``. With raw weights, actions of negative advantage are pushed
    towards zero probability without bound, so the loss keeps falling and the
    logits saturate."""
    config = config or PolicyConfig()
    n_actions = n_actions or int(dataset.a.max()) + 1
    adv = advantages(dataset, vm)
    if config.advantage == "positive":
        adv = np.maximum(adv, 0.0)
    return _fit_weighted(dataset, adv, config, "actor", n_actions)


def train_bc(dataset, config=None, n_actions=None):
    """Cross-entropy fit of the dataset's action labels."""
    config = config or PolicyConfig()
    n_actions = n_actions or int(dataset.a.max()) + 1
    return _fit_weighted(dataset, np.ones(len(dataset)), config, "bc", n_actions)


# --- DQN ---------------------------------------------------------------------

@dataclass
class DQNConfig:
    gamma: float = 0.95
    epochs: int = 100
    batches_per_epoch: int = 500
    batch_size: int = 256
    lr: float = 1e-3
    target_sync: int = 500
    seed: int = 0
    hidden: tuple = (64, 64, 64)
    divergence_threshold: float = 1e4
    divergence_epochs: int = 3

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.target_sync < 1:
            raise ConfigError("target_sync must be positive")
        self.hidden = tuple(int(h) for h in self.hidden)


def td_targets(q_next, r, terminal, gamma):
    """``r + gamma * max_a' Q(s', a') * (1 - terminal)``."""
    return r + gamma * q_next.max(axis=1) * (1.0 - terminal.astype(np.float64))


class DQNLearner:
    """Q-network with a periodically synchronized target copy."""

    def __init__(self, feature_dim, n_actions, config=None):
        self.config = config or DQNConfig()
        self.rng = make_rng(self.config.seed)
        self.params = init_mlp(feature_dim, n_actions, self.rng, self.config.hidden)
        self.target = self.params.copy()
        self.opt = AdamState.for_params(self.params, lr=self.config.lr)
        self.updates = 0

    def loss_and_grads(self, s, a, r, s2, term):
        q, cache = mlp_forward(self.params, s)
        y = td_targets(mlp_forward(self.target, s2)[0], r, term, self.config.gamma)
        B = len(a)
        rows = np.arange(B)
        err = q[rows, a] - y
        g = np.zeros_like(q)
        g[rows, a] = err / B
        return 0.5 * float(np.mean(err ** 2)), mlp_backward(self.params, cache, g)

    def update(self, s, a, r, s2, term):
        loss, grads = self.loss_and_grads(s, a, r, s2, term)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite TD loss at update {self.updates}", self.updates)
        adam_step(self.opt, self.params, grads, batch_index=self.updates)
        self.updates += 1
        if self.updates % self.config.target_sync == 0:
            self.target = self.params.copy()
        return loss

    def model(self):
        return PolicyModel(self.params.copy(), "dqn", self.config.seed)


def train_dqn(dataset, config=None, n_actions=None):
    """Offline DQN on a fixed dataset. A run whose mean epoch loss stays above
    the divergence threshold for ``divergence_epochs`` epochs stops and is
    marked failed."""
    config = config or DQNConfig()
    if len(dataset) == 0:
        raise UsageError("cannot train DQN on an empty dataset")
    n_actions = n_actions or int(dataset.a.max()) + 1
    learner = DQNLearner(dataset.feature_dim, n_actions, config)
    fit = FitLog()
    high = 0
    for _ in range(config.epochs):
        acc = []
        for _ in range(config.batches_per_epoch):
            i = learner.rng.integers(len(dataset), size=config.batch_size)
            acc.append(learner.update(dataset.s[i], dataset.a[i], dataset.r[i], dataset.s_next[i],
                                      dataset.terminal[i]))
        fit.losses.append(float(np.mean(acc)))
        high = high + 1 if fit.losses[-1] > config.divergence_threshold else 0
        if high >= config.divergence_epochs:
            fit.failed = True
            fit.reason = f"TD loss above {config.divergence_threshold} for {high} epochs"
            break
    return learner.model(), fit
