"""Minimal dense network: forward pass, masked-MSE backprop, Adam.

The action-value approximator is a fully connected net with rectified
hidden layers and a linear output layer, float64 throughout. The loss is
mean squared error applied only to the output units named by an action
mask, so untaken actions contribute zero gradient.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"VXQN"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Corrupt or truncated serialized model."""


@dataclass
class QNetwork:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]   # weights[i]: (layer_sizes[i], layer_sizes[i+1])
    biases: list[np.ndarray]    # biases[i]: (layer_sizes[i+1],)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "QNetwork":
        return QNetwork(self.layer_sizes,
                        [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases])

    def copy_from(self, other: "QNetwork") -> None:
        if other.layer_sizes != self.layer_sizes:
            raise ValueError("layer size mismatch")
        for dst, src in zip(self.parameters(), other.parameters()):
            dst[...] = src


def init_weights(layer_sizes, rng) -> QNetwork:
    """Glorot-uniform weights, zero biases; deterministic per rng state."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise ValueError(f"need at least two positive layer sizes, got {sizes}")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return QNetwork(sizes, weights, biases)


def forward(net: QNetwork, x: np.ndarray) -> np.ndarray:
    """Network output for a single input vector or a batch of rows."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.shape[1] != net.input_dim:
        raise ValueError(f"input dim {a.shape[1]} != expected {net.input_dim}")
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        a = a @ w + b
        if i != last:
            a = np.maximum(a, 0.0)
    return a[0] if single else a


def masked_loss(net: QNetwork, x: np.ndarray, target: np.ndarray,
                action_mask: np.ndarray) -> float:
    """Mean over the batch of (target - q_taken)^2."""
    out = forward(net, np.atleast_2d(x))
    mask = np.atleast_2d(np.asarray(action_mask, dtype=float))
    taken = np.sum(out * mask, axis=1)
    err = np.atleast_1d(np.asarray(target, dtype=float)) - taken
    return float(np.mean(err ** 2))


def loss_and_grads(net: QNetwork, x: np.ndarray, target: np.ndarray,
                   action_mask: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Masked MSE loss and its gradients in one pass.

    ``x`` is (B, d_in) or a single vector, ``target`` (B,), ``action_mask``
    a one-hot (B, d_out) selector of the taken actions.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    mask = np.atleast_2d(np.asarray(action_mask, dtype=float))
    target = np.atleast_1d(np.asarray(target, dtype=float))
    batch = x.shape[0]

    pre = []       # pre-activations per layer
    acts = [x]     # activations fed into each layer
    a = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w + b
        pre.append(z)
        a = np.maximum(z, 0.0) if i != last else z
        acts.append(a)

    taken = np.sum(acts[-1] * mask, axis=1)
    err = taken - target
    loss = float(np.mean(err ** 2))
    # d(mean((y - q)^2))/d(out) routed through the taken outputs only.
    delta = (2.0 / batch) * err[:, None] * mask

    grads: list[np.ndarray] = [None] * (2 * len(net.weights))
    for i in range(last, -1, -1):
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.weights[i].T) * (pre[i - 1] > 0.0)
    return loss, grads


def backward(net: QNetwork, x: np.ndarray, target: np.ndarray,
             action_mask: np.ndarray) -> list[np.ndarray]:
    """Gradients of the masked MSE loss, ordered like ``net.parameters()``."""
    return loss_and_grads(net, x, target, action_mask)[1]


@dataclass
class AdamState:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    _scratch: list[np.ndarray] = field(default_factory=list, repr=False)

    @classmethod
    def for_network(cls, net: QNetwork, learning_rate: float = 0.001) -> "AdamState":
        params = net.parameters()
        return cls(learning_rate=learning_rate,
                   m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params],
                   _scratch=[np.empty_like(p) for p in params])


def adam_step(net: QNetwork, adam: AdamState, grads: list[np.ndarray]) -> None:
    """One bias-corrected Adam update, in place.

    Uses the folded form lr*sqrt(1-b2^t)/(1-b1^t) * m / (sqrt(v) + eps'),
    algebraically identical to dividing the bias-corrected moments, and a
    scratch buffer per parameter to avoid temporaries on the hot path.
    """
    adam.step += 1
    t = adam.step
    b1, b2 = adam.beta1, adam.beta2
    bias2_sqrt = np.sqrt(1.0 - b2 ** t)
    scale = adam.learning_rate * bias2_sqrt / (1.0 - b1 ** t)
    eps = adam.epsilon * bias2_sqrt
    if not adam._scratch:
        adam._scratch = [np.empty_like(p) for p in net.parameters()]
    for p, m, v, g, buf in zip(net.parameters(), adam.m, adam.v, grads,
                               adam._scratch):
        m *= b1
        np.multiply(g, 1.0 - b1, out=buf)
        m += buf
        v *= b2
        np.multiply(g, g, out=buf)
        buf *= 1.0 - b2
        v += buf
        np.sqrt(v, out=buf)
        buf += eps
        np.divide(m, buf, out=buf)
        buf *= scale
        p -= buf


def serialize(net: QNetwork) -> bytes:
    """Versioned byte image: header, layer sizes, flat little-endian float64."""
    head = MAGIC + struct.pack("<II", FORMAT_VERSION, len(net.layer_sizes))
    head += struct.pack(f"<{len(net.layer_sizes)}I", *net.layer_sizes)
    body = b"".join(p.astype("<f8").tobytes() for p in net.parameters())
    return head + body


def deserialize(data: bytes) -> QNetwork:
    if len(data) < 12 or data[:4] != MAGIC:
        raise ModelFormatError("bad magic; not a serialized network")
    version, n_layers = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {version}")
    offset = 12
    if len(data) < offset + 4 * n_layers:
        raise ModelFormatError("truncated header")
    sizes = struct.unpack_from(f"<{n_layers}I", data, offset)
    offset += 4 * n_layers
    n_params = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    expected = offset + 8 * n_params
    if len(data) != expected:
        raise ModelFormatError(
            f"parameter block size mismatch: got {len(data)} bytes, expected {expected}")
    flat = np.frombuffer(data, dtype="<f8", offset=offset).astype(float)
    weights, biases = [], []
    pos = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(flat[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out).copy())
        pos += fan_in * fan_out
        biases.append(flat[pos:pos + fan_out].copy())
        pos += fan_out
    return QNetwork(tuple(sizes), weights, biases)
