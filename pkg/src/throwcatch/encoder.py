"""Trainable visual feature encoder and its supervised pretraining.

The encoder maps a downsampled flattened frame to an 8-dim embedding through
a gated first hidden layer (elementwise multiplicative sigmoid attention) and
a small dense trunk.  During pretraining only, a linear head maps the
embedding to (area ratio, centroid x, centroid y) and the loss is the MSE to
the mask-derived labels.
"""

from __future__ import annotations

import struct
from collections import deque

import numpy as np

from .config import VisionConfig
from .errors import ContractViolation
from .nn import Adam, DenseNetwork, load_network, save_network
from .render import Frame, labels_from_mask

ENCODER_MAGIC = b"THROWENC"


def downsample(image: np.ndarray, pool: int) -> np.ndarray:
    """Average-pool (H, W, 3) by pool x pool and flatten."""
    h, w, c = image.shape
    pooled = image.reshape(h // pool, pool, w // pool, pool, c).mean(axis=(1, 3))
    return pooled.reshape(-1)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


class VisionEncoder:
    def __init__(self, gate_w, gate_b, attn_w, attn_b, trunk: DenseNetwork, head: DenseNetwork):
        self.gate_w = np.asarray(gate_w, dtype=np.float64)
        self.gate_b = np.asarray(gate_b, dtype=np.float64)
        self.attn_w = np.asarray(attn_w, dtype=np.float64)
        self.attn_b = np.asarray(attn_b, dtype=np.float64)
        self.trunk = trunk
        self.head = head
        self._cache = None

    @classmethod
    def create(cls, vision: VisionConfig, rng: np.random.Generator) -> "VisionEncoder":
        in_dim = (vision.height // vision.pool) * (vision.width // vision.pool) * 3
        h1, h2 = vision.hidden
        scale = np.sqrt(2.0 / in_dim)
        gate_w = rng.standard_normal((h1, in_dim)) * scale
        gate_b = np.zeros(h1)
        attn_w = rng.standard_normal((h1, in_dim)) * scale
        attn_b = np.zeros(h1)
        trunk = DenseNetwork.create([h1, h2, vision.embed_dim], rng)
        head = DenseNetwork.create([vision.embed_dim, 3], rng)
        return cls(gate_w, gate_b, attn_w, attn_b, trunk, head)

    @property
    def in_dim(self) -> int:
        return self.gate_w.shape[1]

    def parameters(self) -> list[np.ndarray]:
        return [
            self.gate_w,
            self.gate_b,
            self.attn_w,
            self.attn_b,
            *self.trunk.parameters(),
            *self.head.parameters(),
        ]

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Embedding for flattened pooled input(s).

        """
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        z1 = x @ self.gate_w.T + self.gate_b
        a = np.where(z1 > 0.0, z1, np.expm1(z1))
        zg = x @ self.attn_w.T + self.attn_b
        s = _sigmoid(zg)
        h1 = a * s
        emb = self.trunk.forward(h1)
        self._cache = (x, z1, a, s)
        return emb[0] if squeeze else emb

    def forward_head(self, x: np.ndarray) -> np.ndarray:
        return self.head.forward(self.forward(x))

    def backward_head(self, upstream: np.ndarray) -> list[np.ndarray]:
        """Gradients (matching parameters() order) of the last forward_head."""
        if self._cache is None:
            raise ContractViolation("backward called before forward")
        head_grads, d_emb = self.head.backward(upstream)
        trunk_grads, d_h1 = self.trunk.backward(d_emb)
        x, z1, a, s = self._cache
        if d_h1.ndim == 1:
            d_h1 = d_h1[None, :]
        d_a = d_h1 * s
        d_s = d_h1 * a
        d_z1 = d_a * np.where(z1 > 0.0, 1.0, a + 1.0)
        d_zg = d_s * s * (1.0 - s)
        return [
            d_z1.T @ x,
            d_z1.sum(axis=0),
            d_zg.T @ x,
            d_zg.sum(axis=0),
            *trunk_grads,
            *head_grads,
        ]

    def encode_frame(self, frame: Frame, pool: int) -> np.ndarray:
        return self.forward(downsample(frame.image, pool))

    def save(self, fh) -> None:
        fh.write(ENCODER_MAGIC)
        h1, in_dim = self.gate_w.shape
        fh.write(struct.pack("<II", in_dim, h1))
        for arr in (self.gate_w, self.gate_b, self.attn_w, self.attn_b):
            fh.write(arr.astype("<f8").tobytes(order="C"))
        save_network(self.trunk, fh)
        save_network(self.head, fh)

    @classmethod
    def load(cls, fh) -> "VisionEncoder":
        if fh.read(len(ENCODER_MAGIC)) != ENCODER_MAGIC:
            raise ContractViolation("bad encoder magic")
        in_dim, h1 = struct.unpack("<II", fh.read(8))
        gate_w = np.frombuffer(fh.read(8 * h1 * in_dim), dtype="<f8").reshape(h1, in_dim).copy()
        gate_b = np.frombuffer(fh.read(8 * h1), dtype="<f8").copy()
        attn_w = np.frombuffer(fh.read(8 * h1 * in_dim), dtype="<f8").reshape(h1, in_dim).copy()
        attn_b = np.frombuffer(fh.read(8 * h1), dtype="<f8").copy()
        trunk = load_network(fh)
        head = load_network(fh)
        return cls(gate_w, gate_b, attn_w, attn_b, trunk, head)


class FeatureHistory:
    """Ring buffer of the 6 most recent embeddings, newest first."""

    def __init__(self, depth: int = 6):
        self.depth = depth
        self._buf: deque = deque(maxlen=depth)

    def initialize(self, feature: np.ndarray) -> None:
        self._buf.clear()
        for _ in range(self.depth):
            self._buf.append(np.asarray(feature, dtype=np.float64))

    def push(self, feature: np.ndarray) -> None:
        self._buf.appendleft(np.asarray(feature, dtype=np.float64))

    def flat(self) -> np.ndarray:
        if len(self._buf) != self.depth:
            raise ContractViolation("feature history not initialized")
        return np.concatenate(list(self._buf))


def pretrain_encoder(
    frames: list[Frame],
    vision: VisionConfig,
    rng: np.random.Generator,
    epochs: int | None = None,
    log_every: int = 0,
):
    """Train encoder + head on mask-derived labels; returns (encoder, history).

    history is a list of per-checkpoint dicts with train/val MSE.
    """
    if not frames:
        raise ContractViolation("pretraining requires a non-empty dataset")
    epochs = vision.epochs if epochs is None else epochs
    inputs = np.stack([downsample(f.image, vision.pool) for f in frames])
    labels = np.stack([labels_from_mask(f.mask) for f in frames])

    n = len(frames)
    order = rng.permutation(n)
    n_val = max(1, int(n * vision.val_fraction)) if n > 1 else 0
    val_idx, train_idx = order[:n_val], order[n_val:]
    if len(train_idx) == 0:
        train_idx = order
    x_train, y_train = inputs[train_idx], labels[train_idx]
    x_val, y_val = inputs[val_idx], labels[val_idx]

    encoder = VisionEncoder.create(vision, rng)
    opt = Adam(encoder.parameters(), lr=vision.lr)
    history = []
    best_val = np.inf
    best_state = None

    def mse(x, y):
        if len(x) == 0:
            return np.nan
        pred = encoder.forward_head(x)
        return float(np.mean((pred - y) ** 2))

    batch = min(vision.batch_size, len(x_train))
    for epoch in range(epochs):
        perm = rng.permutation(len(x_train))
        train_loss = 0.0
        for start in range(0, len(x_train), batch):
            idx = perm[start : start + batch]
            xb, yb = x_train[idx], y_train[idx]
            if vision.input_noise > 0.0:
                # Pixel jitter keeps the regression smooth between temporally
                # adjacent frames instead of memorizing per-frame noise.
                xb = xb + vision.input_noise * rng.standard_normal(xb.shape)
            pred = encoder.forward_head(xb)
            err = pred - yb
            train_loss += float(np.sum(err * err))
            grads = encoder.backward_head(2.0 * err / err.size)
            opt.step(grads)
        check_val = epoch % max(1, epochs // 200) == 0 or epoch == epochs - 1
        if check_val:
            val = mse(x_val, y_val)
            if not np.isnan(val) and val < best_val:
                best_val = val
                best_state = [p.copy() for p in encoder.parameters()]
        if log_every and (epoch % log_every == 0 or epoch == epochs - 1):
            val = mse(x_val, y_val)
            history.append(
                {
                    "epoch": epoch,
                    "train_mse": train_loss / y_train.size,
                    "val_mse": val,
                    "best_val_mse": best_val if best_state is not None else val,
                }
            )
    final_val = mse(x_val, y_val)
    if best_state is not None and not np.isnan(final_val) and best_val < final_val:
        for p, s in zip(encoder.parameters(), best_state):
            p[...] = s
    return encoder, history
