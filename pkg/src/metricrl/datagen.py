"""Offline dataset collection, file I/O and training-pair sampling.

A behaviour policy of quality tier ``low``/``medium``/``high`` takes a
uniformly random action with probability epsilon (0.9/0.5/0.1) and the
exact optimal action otherwise.

On disk a dataset is a directory with ``records.csv`` (one transition per
line, ``episode,t,s;..;s,a,r,s';..;s',terminal``) and ``manifest.txt``
(``key = value`` lines, including a 64-bit blake2b checksum of the
records file).
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from .envs import EnvIndex, EnvSpec, make_env
from .errors import DatasetIOError, UsageError
from .oracle import env_optimal_value, optimal_greedy_policy
from .tensor import atomic_write_bytes, atomic_write_text, derive_seed, make_rng

TIER_EPSILON = {"low": 0.9, "medium": 0.5, "high": 0.1}
FORMAT_VERSION = 1
RECORDS_FILE = "records.csv"
MANIFEST_FILE = "manifest.txt"
DEFAULT_EPISODES = 1000


@dataclass
class Dataset:
    episode: np.ndarray
    t: np.ndarray
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    terminal: np.ndarray
    manifest: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.a)

    @property
    def feature_dim(self):
        return self.s.shape[1]

    @classmethod
    def empty(cls, feature_dim, manifest=None):
        z = np.zeros(0, dtype=np.int64)
        f = np.zeros((0, feature_dim))
        return cls(z, z.copy(), f, z.copy(), np.zeros(0), f.copy(), np.zeros(0, dtype=bool),
                   dict(manifest or {}))

    def states(self):
        """Distinct feature vectors seen as s or s', in first-seen order."""
        both = np.concatenate([self.s, self.s_next])
        _, first = np.unique(both, axis=0, return_index=True)
        return both[np.sort(first)]

    def select(self, mask):
        mask = np.asarray(mask)
        return Dataset(self.episode[mask], self.t[mask], self.s[mask], self.a[mask], self.r[mask],
                       self.s_next[mask], self.terminal[mask], dict(self.manifest))

    @staticmethod
    def concat(parts, manifest=None):
        return Dataset(*(np.concatenate([getattr(p, k) for p in parts])
                         for k in ("episode", "t", "s", "a", "r", "s_next", "terminal")),
                       manifest=dict(manifest or parts[0].manifest))


def resolve_epsilon(tier, epsilon=None):
    if epsilon is not None:
        return float(epsilon)
    try:
        return TIER_EPSILON[tier]
    except KeyError:
        raise UsageError(f"unknown tier {tier!r}; expected one of {sorted(TIER_EPSILON)}") from None


def collect(env_or_index, tier="low", episodes=DEFAULT_EPISODES, seed=0, gamma=0.95, epsilon=None,
            starts=None):
    """Roll out the epsilon-mixed optimal policy for ``episodes`` episodes.

    Each episode uses its own derived seed, so results do not depend on the
    order episodes are produced in. ``starts`` optionally restricts the
    start-state ids.
    """
    if episodes < 1:
        raise UsageError("episodes must be >= 1")
    index = env_or_index if isinstance(env_or_index, EnvIndex) else EnvIndex.build(env_or_index)
    eps = resolve_epsilon(tier, epsilon)
    values = env_optimal_value(index, gamma)
    pi = optimal_greedy_policy(index, values)
    start_ids = index.start_ids if starts is None else np.asarray(starts)
    A = index.env.n_actions
    horizon = index.max_steps
    cols = {k: [] for k in ("episode", "t", "s", "a", "r", "s2", "term")}
    for ep in range(episodes):
        rng = make_rng(derive_seed(seed, ep))
        i = int(start_ids[rng.integers(len(start_ids))])
        for t in range(horizon):
            if rng.random() < eps:
                a = int(rng.integers(A))
            else:
                a = int(pi[i])
            j = int(index.next_state[i, a])
            term = bool(index.terminal[j])
            for k, v in zip(cols, (ep, t, i, a, index.reward[i, a], j, term)):
                cols[k].append(v)
            i = j
            if term:
                break
    feats = index.features
    manifest = {
        "format_version": FORMAT_VERSION,
        "env": index.env.spec.to_dict(),
        "tier": tier, "epsilon": eps, "gamma": gamma,
        "episodes": episodes, "transitions": len(cols["a"]), "seed": seed,
        "feature_dim": feats.shape[1],
    }
    return Dataset(np.array(cols["episode"], dtype=np.int64), np.array(cols["t"], dtype=np.int64),
                   feats[np.array(cols["s"], dtype=np.int64)], np.array(cols["a"], dtype=np.int64),
                   np.array(cols["r"], dtype=np.float64), feats[np.array(cols["s2"], dtype=np.int64)],
                   np.array(cols["term"], dtype=bool), manifest)


def state_ids(dataset, index):
    """Map dataset feature rows back to env state ids (requires injective encoding)."""
    lookup = {tuple(f): i for i, f in enumerate(index.features)}
    try:
        s = np.array([lookup[tuple(f)] for f in dataset.s], dtype=np.int64)
        s2 = np.array([lookup[tuple(f)] for f in dataset.s_next], dtype=np.int64)
    except KeyError as exc:
        raise UsageError(f"dataset state {exc} is not a state of this environment") from None
    return s, s2


def consistency_errors(dataset, index):
    """Records whose ``(s, a)`` does not re-simulate to ``(r, s', terminal)``."""
    s, s2 = state_ids(dataset, index)
    bad = []
    for k in range(len(dataset)):
        j = index.next_state[s[k], dataset.a[k]]
        if (j != s2[k] or index.reward[s[k], dataset.a[k]] != dataset.r[k]
                or bool(index.terminal[j]) != bool(dataset.terminal[k])):
            bad.append(k)
    return bad


# --- file I/O ----------------------------------------------------------------

def _fmt_vec(v):
    return ";".join(repr(float(x)) for x in v)


def records_text(dataset):
    lines = []
    for k in range(len(dataset)):
        lines.append(f"{dataset.episode[k]},{dataset.t[k]},{_fmt_vec(dataset.s[k])},{dataset.a[k]},"
                     f"{float(dataset.r[k])!r},{_fmt_vec(dataset.s_next[k])},{int(dataset.terminal[k])}\n")
    return "".join(lines)


def checksum(data):
    return hashlib.blake2b(data, digest_size=8).hexdigest()


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            out.update(_flatten(v, f"{prefix}{k}."))
        else:
            out[prefix + k] = v
    return out


def manifest_text(manifest):
    return "".join(f"{k} = {v}\n" for k, v in _flatten(manifest).items())


def parse_manifest(text):
    flat = {}
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if "=" not in line:
            raise DatasetIOError(f"manifest line {n} is not 'key = value': {line!r}")
        k, v = line.split("=", 1)
        flat[k.strip()] = v.strip()
    out = {}
    for k, v in flat.items():
        node = out
        *parents, leaf = k.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = v
    return out


def write_dataset(dataset, path):
    os.makedirs(path, exist_ok=True)
    body = records_text(dataset).encode("ascii")
    manifest = dict(dataset.manifest)
    manifest.update(format_version=FORMAT_VERSION, transitions=len(dataset),
                    feature_dim=dataset.feature_dim, checksum=checksum(body))
    atomic_write_bytes(os.path.join(path, RECORDS_FILE), body)
    atomic_write_text(os.path.join(path, MANIFEST_FILE), manifest_text(manifest))
    return manifest


def _coerce_manifest(m):
    ints = ("format_version", "episodes", "transitions", "seed", "feature_dim")
    floats = ("epsilon", "gamma")
    out = dict(m)
    try:
        for k in ints:
            if k in out:
                out[k] = int(out[k])
        for k in floats:
            if k in out:
                out[k] = float(out[k])
    except ValueError as exc:
        raise DatasetIOError(f"bad manifest value: {exc}") from exc
    if "env" in out:
        env = dict(out["env"])
        env["dims"], env["cells"], env["max_steps"] = (int(env.get(k, d)) for k, d in
                                                      (("dims", 2), ("cells", 10), ("max_steps", 0)))
        out["env"] = env
    return out


def read_dataset(path):
    mpath, rpath = os.path.join(path, MANIFEST_FILE), os.path.join(path, RECORDS_FILE)
    try:
        with open(mpath, encoding="utf-8") as f:
            manifest = _coerce_manifest(parse_manifest(f.read()))
        with open(rpath, "rb") as f:
            body = f.read()
    except FileNotFoundError as exc:
        raise DatasetIOError(f"missing dataset file: {exc.filename}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DatasetIOError(f"dataset format version {manifest.get('format_version')} "
                             f"is not supported (expected {FORMAT_VERSION})")
    if "checksum" not in manifest or checksum(body) != manifest["checksum"]:
        raise DatasetIOError("records checksum does not match the manifest")
    width = manifest["feature_dim"]
    lines = body.decode("ascii").splitlines()
    if len(lines) != manifest["transitions"]:
        raise DatasetIOError(f"manifest lists {manifest['transitions']} transitions, "
                             f"records file has {len(lines)}")
    if not lines:
        return Dataset.empty(width, manifest)
    cols = {k: [] for k in ("episode", "t", "s", "a", "r", "s2", "term")}
    try:
        for line in lines:
            ep, t, s, a, r, s2, term = line.split(",")
            sv = [float(x) for x in s.split(";")]
            s2v = [float(x) for x in s2.split(";")]
            if len(sv) != width or len(s2v) != width:
                raise ValueError(f"feature width differs from {width}")
            for k, v in zip(cols, (int(ep), int(t), sv, int(a), float(r), s2v, term == "1")):
                cols[k].append(v)
    except ValueError as exc:
        raise DatasetIOError(f"malformed record: {exc}") from exc
    return Dataset(np.array(cols["episode"], dtype=np.int64), np.array(cols["t"], dtype=np.int64),
                   np.array(cols["s"], dtype=np.float64), np.array(cols["a"], dtype=np.int64),
                   np.array(cols["r"], dtype=np.float64), np.array(cols["s2"], dtype=np.float64),
                   np.array(cols["term"], dtype=bool), manifest)


def dataset_env_spec(dataset):
    env = dataset.manifest.get("env")
    if not env:
        raise UsageError("dataset manifest carries no environment spec")
    return EnvSpec.from_dict(env)


def dataset_env(dataset):
    return make_env(dataset_env_spec(dataset))


# --- pair sampling -------------------------------------------------------------

@dataclass
class PairBatch:
    s: np.ndarray
    s_next: np.ndarray
    s_rand: np.ndarray
    pos_idx: np.ndarray
    neg_idx: np.ndarray


@dataclass
class TrainingPairs:
    """Positive pairs (one per non-self-loop transition) and the pool of
    distinct states negatives are drawn from."""
    a: np.ndarray
    b: np.ndarray
    pool: np.ndarray

    @classmethod
    def from_dataset(cls, dataset, keep_self_loops=False):
        mask = np.ones(len(dataset), dtype=bool) if keep_self_loops else \
            np.any(dataset.s != dataset.s_next, axis=1)
        return cls(dataset.s[mask], dataset.s_next[mask], dataset.states())

    def with_meta(self, dataset, meta_features):
        """Add a ``(terminal state, meta)`` pair per terminal record and the
        meta state to the negative pool."""
        term = dataset.s_next[dataset.terminal]
        meta = np.broadcast_to(meta_features, term.shape)
        return TrainingPairs(np.vstack([self.a, term]), np.vstack([self.b, meta]),
                             np.vstack([self.pool, meta_features[None, :]]))

    def sample(self, batch, rng):
        if len(self.a) == 0:
            raise UsageError("no transitions to sample training pairs from")
        pos = rng.integers(len(self.a), size=batch)
        neg = rng.integers(len(self.pool), size=batch)
        return PairBatch(self.a[pos], self.b[pos], self.pool[neg], pos, neg)


def pair_sampler(dataset, batch, rng):
    """One batch of ``(s, s', s_r)``: transitions uniform over the dataset,
    ``s_r`` uniform over its distinct states and independent of the pair."""
    if len(dataset) == 0:
        raise UsageError("cannot sample from an empty dataset")
    return TrainingPairs.from_dataset(dataset, keep_self_loops=True).sample(batch, rng)
