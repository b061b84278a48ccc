"""Dense numerical kernel: a small float64 MLP with hand-written backprop,
Adam, the package RNG and the binary checkpoint format.

Arrays are plain ``numpy.ndarray`` in float64. Weights are stored as
``(fan_in, fan_out)`` so a batch ``X`` of shape ``(B, fan_in)`` maps to
``X @ W + b``.
"""
from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DatasetIOError, TrainingError, UsageError

RNG_ALGORITHM = "numpy.PCG64"

ACTIVATIONS = ("relu", "identity")

DEFAULT_HIDDEN = (64, 64, 64)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def make_rng(seed):
    """Seeded generator. PCG64 output is platform independent."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_seed(seed, *keys):
    """Deterministic child seed from a parent seed and integer keys."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class MlpParams:
    weights: list
    biases: list
    activations: list

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ConfigError("weights, biases and activations must have equal length")
        for i, (w, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ConfigError(f"layer {i}: bias shape {b.shape} does not match weight {w.shape}")
            if act not in ACTIVATIONS:
                raise ConfigError(f"layer {i}: unknown activation {act!r}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ConfigError(f"layer {i}: input width {w.shape[0]} does not chain "
                                  f"with previous output {self.weights[i - 1].shape[1]}")

    @property
    def in_dim(self):
        return self.weights[0].shape[0]

    @property
    def out_dim(self):
        return self.weights[-1].shape[1]

    @property
    def sizes(self):
        return [self.in_dim] + [w.shape[1] for w in self.weights]

    def arrays(self):
        """Parameter arrays in canonical order (W0, b0, W1, b1, ...)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self):
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                         list(self.activations))

    def zeros_like(self):
        return MlpParams([np.zeros_like(w) for w in self.weights],
                         [np.zeros_like(b) for b in self.biases], list(self.activations))

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def set_flat(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        pos = 0
        for a in self.arrays():
            a[...] = vec[pos:pos + a.size].reshape(a.shape)
            pos += a.size
        if pos != vec.size:
            raise ConfigError(f"flat vector has {vec.size} entries, expected {pos}")

    def num_params(self):
        return sum(a.size for a in self.arrays())

    def __call__(self, x):
        return mlp_forward(self, x)[0]


def init_mlp(in_dim, out_dim, rng, hidden=DEFAULT_HIDDEN):
    """ReLU hidden layers, linear output; U(-1/sqrt(fan_in), 1/sqrt(fan_in)) init."""
    sizes = [int(in_dim), *[int(h) for h in hidden], int(out_dim)]
    if min(sizes) < 1:
        raise ConfigError(f"layer sizes must be positive, got {sizes}")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    acts = ["relu"] * len(hidden) + ["identity"]
    return MlpParams(weights, biases, acts)


@dataclass
class ForwardCache:
    inputs: list        # input to each layer
    preacts: list       # pre-activation of each layer
    squeeze: bool = False


def mlp_forward(params, x):
    """Evaluate the network on a feature vector or a ``(B, in_dim)`` batch.

    Returns ``(output, cache)``; the cache holds per-layer inputs and
    pre-activations for :func:`mlp_backward`.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.ndim != 2 or h.shape[1] != params.in_dim:
        raise ConfigError(f"input has shape {x.shape}, network expects width {params.in_dim}")
    inputs, preacts = [], []
    for w, b, act in zip(params.weights, params.biases, params.activations):
        inputs.append(h)
        a = h @ w + b
        preacts.append(a)
        h = np.maximum(a, 0.0) if act == "relu" else a
    if not np.all(np.isfinite(h)):
        raise TrainingError("non-finite network output")
    cache = ForwardCache(inputs, preacts, squeeze)
    return (h[0] if squeeze else h), cache


def mlp_backward(params, cache, grad_out, return_input_grad=False):
    """Reverse-mode pass. ``grad_out`` is dLoss/dOutput with the output's shape.

    Returns an :class:`MlpParams` holding the gradients (same layout as the
    parameters), plus dLoss/dInput when ``return_input_grad`` is set.
    """
    g = np.asarray(grad_out, dtype=np.float64)
    if cache.squeeze:
        g = g[None, :]
    if g.shape != cache.preacts[-1].shape:
        raise ConfigError(f"output gradient shape {np.shape(grad_out)} does not match "
                          f"forward output {cache.preacts[-1].shape}")
    n = len(params.weights)
    gw, gb = [None] * n, [None] * n
    for i in range(n - 1, -1, -1):
        if params.activations[i] == "relu":
            g = g * (cache.preacts[i] > 0)
        gw[i] = cache.inputs[i].T @ g
        gb[i] = g.sum(axis=0)
        if i or return_input_grad:
            g = g @ params.weights[i].T
    grads = MlpParams(gw, gb, list(params.activations))
    if return_input_grad:
        return grads, (g[0] if cache.squeeze else g)
    return grads


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr=1e-3, **kw):
        return cls(lr=lr, m=[np.zeros_like(a) for a in params.arrays()],
                   v=[np.zeros_like(a) for a in params.arrays()], **kw)


def adam_step(state, params, grads, batch_index=None):
    """Bias-corrected Adam update, applied to ``params`` in place."""
    p_arrays, g_arrays = params.arrays(), grads.arrays()
    if len(p_arrays) != len(g_arrays) or len(state.m) != len(p_arrays):
        raise ConfigError("parameter, gradient and optimizer state layouts differ")
    for p, g in zip(p_arrays, g_arrays):
        if p.shape != g.shape:
            raise ConfigError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient at batch {batch_index}", batch_index)
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(p_arrays, g_arrays, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# --- checkpoints -----------------------------------------------------------

CHECKPOINT_MAGIC = b"METRICRL"
CHECKPOINT_VERSION = 1
_ACT_CODES = {"relu": 0, "identity": 1}


def checkpoint_bytes(params, seed=0, role="embedding", extra=None):
    """Serialize parameters. ``extra`` is an optional float64 array stored
    after the network payload (goal embeddings, metadata vectors, ...)."""
    buf = io.BytesIO()
    tag = role.encode("utf-8")
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<HH", CHECKPOINT_VERSION, len(tag)))
    buf.write(tag)
    buf.write(struct.pack("<QI", int(seed) & 0xFFFFFFFFFFFFFFFF, len(params.weights)))
    for w, act in zip(params.weights, params.activations):
        buf.write(struct.pack("<IIB", w.shape[0], w.shape[1], _ACT_CODES[act]))
    extra = np.zeros(0) if extra is None else np.asarray(extra, dtype=np.float64).ravel()
    buf.write(struct.pack("<Q", extra.size))
    for a in params.arrays():
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    buf.write(np.ascontiguousarray(extra, dtype="<f8").tobytes())
    return buf.getvalue()


def save_checkpoint(path, params, seed=0, role="embedding", extra=None):
    atomic_write_bytes(path, checkpoint_bytes(params, seed, role, extra))


def load_checkpoint(path, expect_role=None):
    """Returns ``(params, header)`` with header keys version, role, seed, extra."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except FileNotFoundError:
        raise UsageError(f"checkpoint not found: {path}") from None
    return parse_checkpoint(raw, expect_role)


def parse_checkpoint(raw, expect_role=None):
    try:
        if raw[:8] != CHECKPOINT_MAGIC:
            raise DatasetIOError("not a checkpoint file (bad magic)")
        pos = 8
        version, taglen = struct.unpack_from("<HH", raw, pos)
        pos += 4
        if version != CHECKPOINT_VERSION:
            raise DatasetIOError(f"unsupported checkpoint version {version}")
        role = raw[pos:pos + taglen].decode("utf-8")
        pos += taglen
        seed, nlayers = struct.unpack_from("<QI", raw, pos)
        pos += 12
        shapes, acts = [], []
        inv = {v: k for k, v in _ACT_CODES.items()}
        for _ in range(nlayers):
            a, b, c = struct.unpack_from("<IIB", raw, pos)
            pos += 9
            shapes.append((a, b))
            acts.append(inv[c])
        (nextra,) = struct.unpack_from("<Q", raw, pos)
        pos += 8

        def take(count):
            nonlocal pos
            nbytes = 8 * count
            if pos + nbytes > len(raw):
                raise DatasetIOError("truncated checkpoint payload")
            out = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).astype(np.float64)
            pos += nbytes
            return out

        weights, biases = [], []
        for a, b in shapes:
            weights.append(take(a * b).reshape(a, b))
            biases.append(take(b))
        extra = take(nextra)
        if pos != len(raw):
            raise DatasetIOError("trailing bytes after checkpoint payload")
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise DatasetIOError(f"corrupt checkpoint: {exc}") from exc
    if expect_role is not None and role != expect_role:
        raise DatasetIOError(f"checkpoint role is {role!r}, expected {expect_role!r}")
    header = {"version": version, "role": role, "seed": seed, "extra": extra}
    return MlpParams(weights, biases, acts), header


def atomic_write_bytes(path, data):
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        with open(tmp, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))
