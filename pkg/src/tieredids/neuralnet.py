"""Small fully connected networks: forward, MSE, backprop, dropout, Adam.

Hidden layers use tanh, the final layer is linear. Weights are stored
``(out, in)`` so a layer computes ``a @ W.T + b`` on row-major batches.
Parameters live in float32 (the wire representation); every operation
keeps the dtype of the parameters it is given, so a float64 copy can be
used for gradient checking.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

PARAMS_MAGIC = b"TNNP"
PARAMS_VERSION = 1


@dataclass
class NetworkParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i} expects {w.shape[1]} inputs, "
                                 f"previous layer gives {self.weights[i - 1].shape[0]}")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    @property
    def dtype(self):
        return self.weights[0].dtype

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams([w.astype(dtype) for w in self.weights],
                             [b.astype(dtype) for b in self.biases])

    def copy(self) -> "NetworkParams":
        return self.astype(self.dtype)

    def equals(self, other: "NetworkParams") -> bool:
        """Bitwise equality of every weight and bias."""
        if len(self.weights) != len(other.weights):
            return False
        return all(a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
                   for a, b in zip(self.weights + self.biases, other.weights + other.biases))


@dataclass
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 0.01
    dropout_rate: float = 0.05
    batch_size: int = 256
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def init_params(layer_sizes, seed: int, dtype=np.float32) -> NetworkParams:
    """Glorot-uniform weights, zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ValueError("need at least an input and an output size")
    if min(sizes) < 1:
        raise ValueError(f"layer sizes must be positive: {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-limit, limit, size=(n_out, n_in)).astype(dtype))
        biases.append(np.zeros(n_out, dtype=dtype))
    return NetworkParams(weights, biases)


@dataclass
class ForwardPass:
    """Per-layer activations (input first, output last) and dropout masks.

    ``activations`` hold what each layer passed on (after dropout).
    ``hidden[l]`` is the tanh output of hidden layer ``l`` before dropout and
    ``masks[l]`` the scaled inverted-dropout mask applied to it, or None.
    """

    activations: list[np.ndarray]
    hidden: list[np.ndarray] = field(default_factory=list)
    masks: list[np.ndarray | None] = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.activations[-1]


def forward(p: NetworkParams, x, dropout_rate: float = 0.0,
            rng: np.random.Generator | None = None) -> ForwardPass:
    """Run ``x`` (one vector or a batch of rows) through the network.

    Dropout is applied to hidden activations only, and only when ``rng`` is
    given (training mode).
    """
    a = np.asarray(x, dtype=p.dtype)
    if a.shape[-1] != p.weights[0].shape[1]:
        raise ValueError(f"input width {a.shape[-1]} != network input {p.weights[0].shape[1]}")
    activations = [a]
    hidden, masks = [], []
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        z = a @ w.T + b
        if i == last:
            a = z
            break
        a = np.tanh(z)
        hidden.append(a)
        mask = None
        if rng is not None and dropout_rate > 0:
            keep = rng.random(a.shape) >= dropout_rate
            mask = keep.astype(p.dtype) / p.dtype.type(1.0 - dropout_rate)
            a = a * mask
        masks.append(mask)
        activations.append(a)
    activations.append(a)
    return ForwardPass(activations, hidden, masks)


def mse(x, x_prime) -> float | np.ndarray:
    """Mean squared reconstruction error over the last axis.

    Returns a float for vectors and one value per row for batches.
    Accumulates in float64.
    """
    x = np.asarray(x, dtype=np.float64)
    x_prime = np.asarray(x_prime, dtype=np.float64)
    if x.shape != x_prime.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {x_prime.shape}")
    err = np.mean((x - x_prime) ** 2, axis=-1)
    return float(err) if err.ndim == 0 else err


def batch_loss(output, target) -> float:
    """Mean over rows of :func:`mse`, the objective :func:`backward` differentiates."""
    return float(np.mean(mse(output, target)))


def backward(p: NetworkParams, fp: ForwardPass, target) -> NetworkParams:
    """Analytic gradients of :func:`batch_loss` w.r.t. every weight and bias."""
    out = fp.output
    target = np.asarray(target, dtype=p.dtype)
    if target.shape != out.shape:
        raise ValueError(f"target shape {target.shape} != output shape {out.shape}")
    if len(fp.activations) != len(p.weights) + 1:
        raise ValueError("activations were not produced by this network")
    single = out.ndim == 1
    lift = (lambda a: None if a is None else a[None, :]) if single else (lambda a: a)
    acts = [lift(a) for a in fp.activations]
    hidden = [lift(h) for h in fp.hidden]
    masks = [lift(m) for m in fp.masks]
    n_rows, k = acts[-1].shape

    delta = (acts[-1] - (target[None, :] if single else target)) * p.dtype.type(2.0 / (k * n_rows))
    grads_w = [None] * len(p.weights)
    grads_b = [None] * len(p.weights)
    for i in range(len(p.weights) - 1, -1, -1):
        grads_w[i] = delta.T @ acts[i]
        grads_b[i] = delta.sum(axis=0)
        if i == 0:
            break
        delta = delta @ p.weights[i]
        if masks[i - 1] is not None:
            delta = delta * masks[i - 1]
        h = hidden[i - 1]
        delta = delta * (1 - h * h)
    return NetworkParams(grads_w, grads_b)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, p: NetworkParams) -> "AdamState":
        arrays = p.weights + p.biases
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0)


def adam_step(p: NetworkParams, grads: NetworkParams, state: AdamState,
              cfg: TrainConfig) -> tuple[NetworkParams, AdamState]:
    """One bias-corrected Adam update. Inputs are not modified."""
    t = state.t + 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    lr_t = float(cfg.learning_rate * np.sqrt(1 - b2 ** t) / (1 - b1 ** t))
    # epsilon scaled so it sits outside the bias-corrected sqrt(v), as in the textbook form
    eps_t = float(cfg.adam_epsilon * np.sqrt(1 - b2 ** t))
    params = p.weights + p.biases
    new_params, new_m, new_v = [], [], []
    for a, g, m, v in zip(params, grads.weights + grads.biases, state.m, state.v):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * (g * g)
        step = lr_t * m / (np.sqrt(v) + eps_t)
        new_params.append((a - step).astype(a.dtype))
        new_m.append(m.astype(a.dtype))
        new_v.append(v.astype(a.dtype))
    n = len(p.weights)
    return NetworkParams(new_params[:n], new_params[n:]), AdamState(new_m, new_v, t)


def fit(p: NetworkParams, x, target, cfg: TrainConfig) -> tuple[NetworkParams, list[float]]:
    """Mini-batch Adam on the MSE between network output and ``target``.

    Returns the trained parameters and the full-data loss (no dropout)
    recorded after every epoch.
    """
    x = np.asarray(x, dtype=p.dtype)
    target = np.asarray(target, dtype=p.dtype)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("training data must be a non-empty 2-D array")
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.zeros_like(p)
    history = []
    n = x.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            fp = forward(p, x[idx], cfg.dropout_rate, rng)
            grads = backward(p, fp, target[idx])
            p, state = adam_step(p, grads, state, cfg)
        history.append(batch_loss(forward(p, x).output, target))
    return p, history


def serialize_params(p: NetworkParams) -> bytes:
    """Versioned little-endian binary: header, then per layer in/out, W, b."""
    parts = [PARAMS_MAGIC, struct.pack("<II", PARAMS_VERSION, len(p.weights))]
    for w, b in zip(p.weights, p.biases):
        n_out, n_in = w.shape
        parts.append(struct.pack("<II", n_in, n_out))
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    return b"".join(parts)


def deserialize_params(data: bytes) -> NetworkParams:
    view = memoryview(data)
    if bytes(view[:4]) != PARAMS_MAGIC:
        raise ValueError("not a serialized network (bad magic)")
    version, n_layers = struct.unpack_from("<II", view, 4)
    if version != PARAMS_VERSION:
        raise ValueError(f"unsupported network format version {version}")
    offset = 12
    weights, biases = [], []
    for _ in range(n_layers):
        n_in, n_out = struct.unpack_from("<II", view, offset)
        offset += 8
        w = np.frombuffer(view, dtype="<f4", count=n_in * n_out, offset=offset)
        offset += 4 * n_in * n_out
        b = np.frombuffer(view, dtype="<f4", count=n_out, offset=offset)
        offset += 4 * n_out
        weights.append(w.reshape(n_out, n_in).astype(np.float32))
        biases.append(b.astype(np.float32))
    if offset != len(view):
        raise ValueError(f"{len(view) - offset} trailing bytes after network parameters")
    return NetworkParams(weights, biases)
