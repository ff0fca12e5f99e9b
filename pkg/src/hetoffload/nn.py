"""Dense feed-forward network with hand-written backprop (float64).

Hidden layers use ReLU, the output layer is linear. The Q-network and the
forecast regressor both build on this module.
"""

from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import dataclass, field
from typing import IO, Sequence, Union

import numpy as np

from .exceptions import TrainingDivergenceError

WEIGHTS_MAGIC = b"HOFFW"
WEIGHTS_VERSION = 1


@dataclass
class DenseNet:
    widths: tuple[int, ...]
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ValueError(f"invalid layer widths {self.widths}")
        if not self.weights:
            self.weights = [np.zeros((o, i)) for i, o in zip(self.widths[:-1], self.widths[1:])]
            self.biases = [np.zeros(o) for o in self.widths[1:]]
        for (i, o), w, b in zip(zip(self.widths[:-1], self.widths[1:]), self.weights, self.biases):
            if w.shape != (o, i) or b.shape != (o,):
                raise ValueError(f"parameter shapes do not match widths {self.widths}")

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "DenseNet":
        return DenseNet(self.widths, [w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")


def init_weights(widths: Sequence[int], seed: int) -> DenseNet:
    """Uniform(-1, 1) / sqrt(fan_in) weights and biases, reproducible per seed."""
    rng = np.random.default_rng(seed)
    net = DenseNet(tuple(widths))
    for w, b in zip(net.weights, net.biases):
        bound = 1.0 / np.sqrt(w.shape[1])
        w[...] = rng.uniform(-bound, bound, size=w.shape)
        b[...] = rng.uniform(-bound, bound, size=b.shape)
    return net


def _check_input(net: DenseNet, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.n_in or x.ndim not in (1, 2):
        raise ValueError(f"input shape {x.shape} does not match first layer width {net.n_in}")
    return x


def _forward_cache(net: DenseNet, x: np.ndarray) -> list[np.ndarray]:
    """Activations of every layer for a batch ``x`` of shape (B, n_in)."""
    acts = [x]
    last = len(net.weights) - 1
    for idx, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = acts[-1] @ w.T + b
        acts.append(z if idx == last else np.maximum(z, 0.0))
    return acts


def forward(net: DenseNet, x) -> np.ndarray:
    """Network output for one input vector or a batch of row vectors."""
    x = _check_input(net, x)
    out = _forward_cache(net, np.atleast_2d(x))[-1]
    return out[0] if x.ndim == 1 else out


def backward(net: DenseNet, x, grad_out) -> list[np.ndarray]:
    """Gradients of ``sum(grad_out * forward(x))`` w.r.t. (W0, b0, W1, b1, ...).

    Both ``x`` and ``grad_out`` are batches; gradients are summed over it.
    """
    x = np.atleast_2d(_check_input(net, x))
    acts = _forward_cache(net, x)
    delta = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
    grads: list[np.ndarray] = []
    for layer in range(len(net.weights) - 1, -1, -1):
        a_in = acts[layer]
        grads.append(delta.sum(axis=0))
        grads.append(delta.T @ a_in)
        if layer:
            delta = (delta @ net.weights[layer]) * (acts[layer] > 0)
    grads.reverse()
    return grads


def apply_update(net: DenseNet, grads: Sequence[np.ndarray], step: float) -> None:
    """In-place ``theta -= step * grad``."""
    for p, g in zip(net.parameters(), grads):
        p -= step * g


def sgd_step(net: DenseNet, x, target: float, action: int, config: SgdConfig) -> float:
    """One squared-TD-error step on output ``action``; returns the loss.

    ``theta <- theta - lr/2 * grad (target - Q[action])^2``, i.e.
    ``theta + lr * err * grad Q[action]``.
    """
    x = _check_input(net, x).reshape(1, -1)
    q = forward(net, x)[0]
    err = float(target) - float(q[action])
    loss = err * err
    if not np.isfinite(loss):
        raise TrainingDivergenceError(f"non-finite loss {loss!r} (target={target!r})")
    grad_out = np.zeros((1, net.n_out))
    grad_out[0, action] = 1.0
    grads = backward(net, x, grad_out)
    apply_update(net, grads, -config.learning_rate * err)
    return loss


def td_batch_step(net: DenseNet, xs, targets, actions, learning_rate: float) -> float:
    """Minibatch form of :func:`sgd_step`: the per-sample increments
    ``lr * err_i * grad Q_i[a_i]`` are computed at one parameter snapshot and
    averaged. Returns the mean squared TD error.
    """
    xs = np.atleast_2d(_check_input(net, xs))
    targets = np.asarray(targets, dtype=np.float64)
    actions = np.asarray(actions, dtype=int)
    acts = _forward_cache(net, xs)
    q = acts[-1]
    rows = np.arange(len(xs))
    err = targets - q[rows, actions]
    with np.errstate(over="ignore", invalid="ignore"):
        loss = float(np.mean(err * err))
    if not np.isfinite(loss):
        raise TrainingDivergenceError(f"non-finite TD loss {loss!r}")
    grad_out = np.zeros_like(q)
    grad_out[rows, actions] = err / len(xs)
    grads = backward(net, xs, grad_out)
    apply_update(net, grads, -learning_rate)
    return loss


def clone_into(src: DenseNet, dst: DenseNet) -> None:
    if src.widths != dst.widths:
        raise ValueError(f"shape mismatch: {src.widths} vs {dst.widths}")
    for s, d in zip(src.parameters(), dst.parameters()):
        d[...] = s


# Weight dump layout:
#   5 bytes magic, uint16 version, uint32 header length, UTF-8 JSON header
#   {"widths": [...], "dtype": "<f8"}, then every W_i, b_i in order as
#   little-endian float64, row-major.

def dumps_weights(net: DenseNet) -> bytes:
    header = json.dumps({"widths": list(net.widths), "dtype": "<f8"}).encode()
    buf = io.BytesIO()
    buf.write(WEIGHTS_MAGIC)
    buf.write(struct.pack("<HI", WEIGHTS_VERSION, len(header)))
    buf.write(header)
    for p in net.parameters():
        buf.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return buf.getvalue()


def loads_weights(blob: bytes) -> DenseNet:
    if blob[:5] != WEIGHTS_MAGIC:
        raise ValueError("not a weight dump (bad magic)")
    version, hlen = struct.unpack("<HI", blob[5:11])
    if version != WEIGHTS_VERSION:
        raise ValueError(f"unsupported weight dump version {version}")
    header = json.loads(blob[11:11 + hlen])
    net = DenseNet(tuple(header["widths"]))
    offset = 11 + hlen
    for p in net.parameters():
        n = p.size * 8
        chunk = blob[offset:offset + n]
        if len(chunk) != n:
            raise ValueError("truncated weight dump")
        p[...] = np.frombuffer(chunk, dtype="<f8").reshape(p.shape)
        offset += n
    if offset != len(blob):
        raise ValueError("trailing bytes in weight dump")
    return net


def save_weights(net: DenseNet, target: Union[str, "os.PathLike[str]", IO[bytes]]) -> None:
    blob = dumps_weights(net)
    if isinstance(target, (str, os.PathLike)):
        with open(target, "wb") as fh:
            fh.write(blob)
    else:
        target.write(blob)


def load_weights(source: Union[str, "os.PathLike[str]", IO[bytes]]) -> DenseNet:
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return loads_weights(fh.read())
    return loads_weights(source.read())
