"""Distance-monotonic state embeddings.

The embedding network is trained on ``(s, s', s_r)`` triples with

    raw:  (|z' - z| - 1)^2 - lam * |z_r - z|
    log:  (|z' - z| - 1)^2 - lam * log(max(|z_r - z|, eps_d))

where ``(s, s')`` is an observed transition and ``s_r`` a state drawn
independently from the dataset. The first term pins neighbouring states
at unit distance, the second spreads everything else apart.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .datagen import TrainingPairs
from .errors import ConfigError, DataError, TrainingError
from .oracle import META_FEATURE_VALUE, GeodesicTable, add_meta_state, build_graph
from .tensor import (AdamState, adam_step, init_mlp, load_checkpoint, make_rng, mlp_backward,
                     mlp_forward, save_checkpoint)

log = logging.getLogger(__name__)

LOSS_VARIANTS = ("log", "raw")
EXHAUSTIVE_NODE_LIMIT = 60
MAX_WITNESSES = 100


@dataclass
class MetricConfig:
    latent_dim: int = 128
    lam: float = 1.0
    variant: str = "log"
    eps_d: float = 1e-6
    batch_size: int = 256
    batches_per_epoch: int = 500
    epochs: int = 100
    lr: float = 1e-3
    seed: int = 0
    hidden: tuple = (64, 64, 64)
    meta_state: bool = False
    meta_in_training: bool = True
    audit_triples: int = 1000

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("lam must be >= 0")
        if self.eps_d <= 0:
            raise ConfigError("eps_d must be > 0")
        if self.variant not in LOSS_VARIANTS:
            raise ConfigError(f"unknown loss variant {self.variant!r}; expected one of {LOSS_VARIANTS}")
        for k in ("latent_dim", "batch_size", "batches_per_epoch", "epochs"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be positive")
        self.hidden = tuple(int(h) for h in self.hidden)


def _loss(z, z_next, z_rand, lam, eps_d, log_variant):
    z, z_next, z_rand = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (z, z_next, z_rand))
    if not (z.shape == z_next.shape == z_rand.shape):
        raise ConfigError(f"latent shapes differ: {z.shape}, {z_next.shape}, {z_rand.shape}")
    B = z.shape[0]
    diff = z_next - z
    pos = np.linalg.norm(diff, axis=1)
    rdiff = z_rand - z
    rdist = np.linalg.norm(rdiff, axis=1)
    clamped = rdist < eps_d
    neg = np.where(clamped, eps_d, rdist)
    if log_variant:
        contrast = np.log(neg)
        dneg = 1.0 / neg
    else:
        contrast = neg
        dneg = np.ones_like(neg)
    loss = np.mean((pos - 1.0) ** 2 - lam * contrast)

    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(pos[:, None] > 0, diff / pos[:, None], 0.0)
        runit = np.where(clamped[:, None], 0.0, rdiff / np.where(clamped, 1.0, rdist)[:, None])
    g_next = (2.0 * (pos - 1.0))[:, None] * unit / B
    g_rand = -(lam * dneg)[:, None] * runit / B
    g_z = -g_next - g_rand
    return loss, g_z, g_next, g_rand, int(clamped.sum()), pos


def loss_raw(z, z_next, z_rand, lam=1.0, eps_d=1e-6):
    """Mean raw loss over the batch and its gradients wrt the three latent batches."""
    loss, gz, gn, gr, _, _ = _loss(z, z_next, z_rand, lam, eps_d, False)
    return loss, (gz, gn, gr)


def loss_log(z, z_next, z_rand, lam=1.0, eps_d=1e-6):
    """Mean log-stabilized loss and gradients."""
    loss, gz, gn, gr, _, _ = _loss(z, z_next, z_rand, lam, eps_d, True)
    return loss, (gz, gn, gr)


def batch_loss_and_grads(params, batch, config):
    """Loss of one ``PairBatch`` and gradients wrt the network parameters.

    Returns ``(loss, grads, stats)``."""
    B = len(batch.s)
    X = np.vstack([batch.s, batch.s_next, batch.s_rand])
    Z, cache = mlp_forward(params, X)
    loss, gz, gn, gr, clamps, pos = _loss(Z[:B], Z[B:2 * B], Z[2 * B:], config.lam, config.eps_d,
                                          config.variant == "log")
    grads = mlp_backward(params, cache, np.vstack([gz, gn, gr]))
    return loss, grads, {"clamps": clamps, "residual": float(np.mean(np.abs(pos - 1.0)))}


@dataclass
class EmbeddingModel:
    params: object
    seed: int = 0

    @property
    def feature_dim(self):
        return self.params.in_dim

    @property
    def latent_dim(self):
        return self.params.out_dim

    def embed(self, features):
        return mlp_forward(self.params, features)[0]

    def save(self, path):
        save_checkpoint(path, self.params, self.seed, role="embedding")

    @classmethod
    def load(cls, path):
        params, header = load_checkpoint(path, expect_role="embedding")
        return cls(params, header["seed"])


@dataclass
class TrainingLog:
    epochs: list = field(default_factory=list)
    clamp_total: int = 0
    false_negatives: int = 0
    n_components: int = 1
    used_meta: bool = False

    FIELDS = ("epoch", "mean_loss", "constraint_residual", "clamp_count", "violation_rate_sample")

    def csv_text(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.FIELDS)
        for row in self.epochs:
            w.writerow([row[k] if not isinstance(row[k], float) else repr(row[k]) for k in self.FIELDS])
        return buf.getvalue()

    def residuals(self):
        return [row["constraint_residual"] for row in self.epochs]


def prepare_training(dataset, config):
    """Dataset graph connectivity check and training pairs (with the meta
    state when enabled). Returns ``(graph, pairs)``."""
    g = build_graph(dataset)
    if g.n_components > 1:
        if not config.meta_state:
            raise DataError(
                f"dataset graph has {g.n_components} connected components; the contrastive term is "
                f"unbounded on a disconnected graph. Enable meta-state augmentation "
                f"(meta_state = true, --meta-state) to join the terminal states.")
        g = add_meta_state(g)
    elif config.meta_state:
        g = add_meta_state(g, force=True)
    pairs = TrainingPairs.from_dataset(dataset)
    if g.meta is not None and config.meta_in_training:
        pairs = pairs.with_meta(dataset, g.features[g.meta])
    if len(pairs.a) == 0:
        raise DataError("dataset has no transitions between distinct states")
    return g, pairs


class MetricLearner:
    """Embedding network plus optimizer, updated one batch at a time."""

    def __init__(self, feature_dim, config=None):
        self.config = config or MetricConfig()
        self.rng = make_rng(self.config.seed)
        self.params = init_mlp(feature_dim, self.config.latent_dim, self.rng, self.config.hidden)
        self.opt = AdamState.for_params(self.params, lr=self.config.lr)
        self.updates = 0

    def update(self, batch):
        n = self.updates
        try:
            loss, grads, stats = batch_loss_and_grads(self.params, batch, self.config)
        except TrainingError as exc:
            raise TrainingError(f"batch {n}: {exc}", n, batch) from exc
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at batch {n}", n, batch)
        adam_step(self.opt, self.params, grads, batch_index=n)
        self.updates += 1
        return loss, stats

    def model(self):
        return EmbeddingModel(self.params, self.config.seed)


def train(dataset, config=None, progress=None):
    """Fit the embedding. Returns ``(EmbeddingModel, TrainingLog)``."""
    config = config or MetricConfig()
    g, pairs = prepare_training(dataset, config)
    learner = MetricLearner(dataset.feature_dim, config)
    audit_rng = make_rng(config.seed + 1)
    table = GeodesicTable(g)
    tlog = TrainingLog(n_components=build_graph(dataset).n_components, used_meta=g.meta is not None)
    for epoch in range(config.epochs):
        losses, resid, clamps = [], [], 0
        for _ in range(config.batches_per_epoch):
            batch = pairs.sample(config.batch_size, learner.rng)
            loss, stats = learner.update(batch)
            tlog.false_negatives += int(np.sum(np.all(batch.s_rand == batch.s_next, axis=1)))
            losses.append(loss)
            resid.append(stats["residual"])
            clamps += stats["clamps"]
        rate = float("nan")
        if config.audit_triples:
            rate = monotonicity_violation_rate(learner.model(), g, config.audit_triples, audit_rng,
                                               exhaustive=False, table=table).rate
        row = {"epoch": epoch, "mean_loss": float(np.mean(losses)),
               "constraint_residual": float(np.mean(resid)), "clamp_count": clamps,
               "violation_rate_sample": rate}
        tlog.epochs.append(row)
        tlog.clamp_total += clamps
        if progress:
            progress(row)
        log.debug("epoch %d loss %.4f residual %.4f", epoch, row["mean_loss"], row["constraint_residual"])
    return learner.model(), tlog


@dataclass
class MonotonicityReport:
    rate: float
    violations: int
    triples: int
    witnesses: list
    resampled: int = 0
    exhaustive: bool = False


def _latents(model, g):
    if hasattr(model, "embed"):
        return model.embed(g.features)
    z = np.asarray(model, dtype=np.float64)
    if z.shape[0] != g.n_nodes:
        raise ConfigError(f"{z.shape[0]} latent points for a graph of {g.n_nodes} nodes")
    return z


def monotonicity_violation_rate(model, g, triples=10_000, rng=None, tol=1e-9, exhaustive=None,
                                table=None):
    """Fraction of node triples ``(s1, s2, s3)`` with d_S(s1,s3) < d_S(s2,s3)
    but d_Z(z1,z3) > d_Z(z2,z3) + tol.

    ``model`` is an :class:`EmbeddingModel` or an ``(N, n)`` array of latent
    points aligned with the graph nodes. Paths through a meta node are not
    used. Graphs of at most 60 real nodes are enumerated exhaustively
    (all ordered triples with finite geodesics) unless ``exhaustive=False``.
    """
    Z = _latents(model, g)
    nodes = g.real_nodes
    table = table or GeodesicTable(g)
    if exhaustive is None:
        exhaustive = len(nodes) <= EXHAUSTIVE_NODE_LIMIT
    if len(nodes) < 2:
        return MonotonicityReport(0.0, 0, 0, [], exhaustive=exhaustive)
    if exhaustive:
        return _exhaustive(Z, nodes, table, tol)
    rng = rng if rng is not None else make_rng(0)
    s1, s2, s3, resampled = _sample_triples(nodes, table, triples, rng)
    d13 = np.array([table(a, c) for a, c in zip(s1, s3)])
    d23 = np.array([table(b, c) for b, c in zip(s2, s3)])
    z13 = np.linalg.norm(Z[s1] - Z[s3], axis=1)
    z23 = np.linalg.norm(Z[s2] - Z[s3], axis=1)
    bad = (d13 < d23) & (z13 > z23 + tol)
    idx = np.flatnonzero(bad)[:MAX_WITNESSES]
    wit = [(int(s1[k]), int(s2[k]), int(s3[k]), d13[k], d23[k], z13[k], z23[k]) for k in idx]
    n = len(s1)
    return MonotonicityReport(float(bad.sum()) / n if n else 0.0, int(bad.sum()), n, wit, resampled)


def _sample_triples(nodes, table, count, rng):
    s1, s2, s3 = [], [], []
    resampled = 0
    attempts = 0
    while len(s1) < count:
        a, b, c = (int(x) for x in nodes[rng.integers(len(nodes), size=3)])
        attempts += 1
        row = table.row(c)
        if np.isfinite(row[a]) and np.isfinite(row[b]) and np.isfinite(table(a, b)):
            s1.append(a)
            s2.append(b)
            s3.append(c)
        else:
            resampled += 1
            if attempts > 100 * count:
                break
    return np.array(s1, dtype=np.int64), np.array(s2, dtype=np.int64), np.array(s3, dtype=np.int64), resampled


def _exhaustive(Z, nodes, table, tol):
    D = table.matrix(nodes)[:, nodes]      # D[c, a] = d_S(a, c)
    Zn = Z[nodes]
    DZ = np.linalg.norm(Zn[:, None, :] - Zn[None, :, :], axis=2)
    violations, total, wit = 0, 0, []
    for ci in range(len(nodes)):
        d, dz = D[ci], DZ[ci]
        fin = np.isfinite(d)
        if not fin.all():
            comp = fin
        else:
            comp = slice(None)
        dd, zz = d[comp], dz[comp]
        ids = np.arange(len(nodes))[comp]
        m = len(dd)
        total += m * m
        bad = (dd[:, None] < dd[None, :]) & (zz[:, None] > zz[None, :] + tol)
        nb = int(bad.sum())
        if nb:
            violations += nb
            for a, b in np.argwhere(bad)[:MAX_WITNESSES - len(wit)]:
                wit.append((int(nodes[ids[a]]), int(nodes[ids[b]]), int(nodes[ci]),
                            dd[a], dd[b], zz[a], zz[b]))
    rate = violations / total if total else 0.0
    return MonotonicityReport(rate, violations, total, wit, exhaustive=True)


def meta_features(width):
    return np.full(width, META_FEATURE_VALUE)


def config_dict(config):
    d = asdict(config)
    d["hidden"] = ",".join(str(h) for h in config.hidden)
    return d
