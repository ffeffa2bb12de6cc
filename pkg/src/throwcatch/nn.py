"""Dense feedforward networks with hand-written reverse-mode gradients.

Networks are fixed chains of affine layers with elementwise activations.
``forward`` caches whatever ``backward`` needs; parameter updates go through
:class:`Adam`.  Checkpoints use a small versioned binary format (see
``save_network`` / ``load_network``).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, NumericFault

ACTIVATIONS = ("linear", "elu", "tanh")
_ACT_CODE = {name: i for i, name in enumerate(ACTIVATIONS)}

CHECKPOINT_MAGIC = b"THROWNET"
CHECKPOINT_VERSION = 1


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "linear":
        return z
    if kind == "elu":
        return np.where(z > 0.0, z, np.expm1(z))
    if kind == "tanh":
        return np.tanh(z)
    raise ContractViolation(f"unknown activation {kind!r}")


def _activate_grad(z: np.ndarray, y: np.ndarray, kind: str) -> np.ndarray:
    if kind == "linear":
        return np.ones_like(z)
    if kind == "elu":
        return np.where(z > 0.0, 1.0, y + 1.0)
    if kind == "tanh":
        return 1.0 - y * y
    raise ContractViolation(f"unknown activation {kind!r}")


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "linear"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ContractViolation("layer weight/bias shapes disagree")
        if self.activation not in ACTIVATIONS:
            raise ContractViolation(f"unknown activation {self.activation!r}")
        if not (np.isfinite(self.weight).all() and np.isfinite(self.bias).all()):
            raise ContractViolation("layer parameters must be finite")


class DenseNetwork:
    """Chain of dense layers.  Inputs may be vectors or (batch, dim) arrays."""

    def __init__(self, layers: list[Layer]):
        if not layers:
            raise ContractViolation("network needs at least one layer")
        for a, b in zip(layers[:-1], layers[1:]):
            if a.weight.shape[0] != b.weight.shape[1]:
                raise ContractViolation("consecutive layer dimensions disagree")
        self.layers = layers
        self._cache = None

    @classmethod
    def create(
        cls,
        sizes: list[int],
        rng: np.random.Generator,
        hidden_activation: str = "elu",
        output_activation: str = "linear",
        final_scale: float = 1.0,
    ) -> "DenseNetwork":
        """He-style random init; ``final_scale`` shrinks the output layer."""
        layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            scale = np.sqrt(2.0 / n_in) * (final_scale if last else 1.0)
            w = rng.standard_normal((n_out, n_in)) * scale
            b = np.zeros(n_out)
            layers.append(Layer(w, b, output_activation if last else hidden_activation))
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def copy(self) -> "DenseNetwork":
        return DenseNetwork(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.in_dim:
            raise ContractViolation(
                f"input dim {x.shape[1]} != network input dim {self.in_dim}"
            )
        inputs, pre, post = [], [], []
        h = x
        for layer in self.layers:
            inputs.append(h)
            z = h @ layer.weight.T + layer.bias
            y = _activate(z, layer.activation)
            pre.append(z)
            post.append(y)
            h = y
        self._cache = (inputs, pre, post, squeeze)
        return h[0] if squeeze else h

    def backward(self, upstream: np.ndarray):
        """Backprop the last forward pass.

        Returns ``(grads, dx)`` where grads is a list of arrays matching
        ``parameters()`` order and dx is the gradient w.r.t. the input.
        """
        if self._cache is None:
            raise ContractViolation("backward called before forward")
        inputs, pre, post, squeeze = self._cache
        g = np.asarray(upstream, dtype=np.float64)
        if squeeze:
            g = g[None, :]
        if g.shape != post[-1].shape:
            raise ContractViolation("upstream gradient shape mismatch")
        grads: list[np.ndarray] = []
        for layer, x_in, z, y in zip(
            reversed(self.layers), reversed(inputs), reversed(pre), reversed(post)
        ):
            delta = g * _activate_grad(z, y, layer.activation)
            dw = delta.T @ x_in
            db = delta.sum(axis=0)
            grads.insert(0, db)
            grads.insert(0, dw)
            g = delta @ layer.weight
        dx = g[0] if squeeze else g
        return grads, dx


def zero_grads_like(params: list[np.ndarray]) -> list[np.ndarray]:
    return [np.zeros_like(p) for p in params]


def add_grads(acc: list[np.ndarray], grads: list[np.ndarray], scale: float = 1.0):
    for a, g in zip(acc, grads):
        a += scale * g


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> float:
    """Scale grads in place to a global L2 norm cap; returns the pre-clip norm."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm > 0.0 and total > max_norm:
        factor = max_norm / (total + 1e-12)
        for g in grads:
            g *= factor
    return total


class Adam:
    """Adam with bias correction over a fixed list of parameter arrays."""

    def __init__(
        self,
        params: list[np.ndarray],
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]):
        """Gradient-descent step (pass the gradient of a loss to minimize)."""
        if len(grads) != len(self.params):
            raise ContractViolation("grad list length mismatch")
        for p, g in zip(self.params, grads):
            if p.shape != g.shape:
                raise ContractViolation("grad shape mismatch")
            if not np.isfinite(g).all():
                raise NumericFault("non-finite gradient")
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def save_network(net: DenseNetwork, fh) -> None:
    """Binary layout: magic, u32 version, u32 n_layers, then per layer
    u32 in_dim, u32 out_dim, u8 activation code, row-major little-endian
    float64 weights, then biases."""
    fh.write(CHECKPOINT_MAGIC)
    fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(net.layers)))
    for layer in net.layers:
        n_out, n_in = layer.weight.shape
        fh.write(struct.pack("<IIB", n_in, n_out, _ACT_CODE[layer.activation]))
        fh.write(layer.weight.astype("<f8").tobytes(order="C"))
        fh.write(layer.bias.astype("<f8").tobytes())


def load_network(fh) -> DenseNetwork:
    magic = fh.read(len(CHECKPOINT_MAGIC))
    if magic != CHECKPOINT_MAGIC:
        raise ContractViolation("bad checkpoint magic")
    version, n_layers = struct.unpack("<II", fh.read(8))
    if version != CHECKPOINT_VERSION:
        raise ContractViolation(f"unsupported checkpoint version {version}")
    layers = []
    for _ in range(n_layers):
        n_in, n_out, code = struct.unpack("<IIB", fh.read(9))
        w = np.frombuffer(fh.read(8 * n_in * n_out), dtype="<f8").reshape(n_out, n_in)
        b = np.frombuffer(fh.read(8 * n_out), dtype="<f8")
        layers.append(Layer(w.copy(), b.copy(), ACTIVATIONS[code]))
    return DenseNetwork(layers)
