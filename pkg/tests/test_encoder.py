"""Vision encoder forward/backward, persistence, history buffer, pretraining."""

import io

import numpy as np
import pytest

from throwcatch.config import VisionConfig
from throwcatch.encoder import (
    FeatureHistory,
    VisionEncoder,
    downsample,
    pretrain_encoder,
)
from throwcatch.errors import ContractViolation
from throwcatch.render import Frame

VISION = VisionConfig()


def make_encoder(seed=0):
    return VisionEncoder.create(VISION, np.random.default_rng(seed))


def random_frame(rng):
    image = rng.uniform(size=(VISION.height, VISION.width, 3))
    mask = rng.uniform(size=(VISION.height, VISION.width)) < 0.01
    return Frame(image=image, mask=mask)


def test_downsample_shape_and_average():
    image = np.arange(48 * 64 * 3, dtype=np.float64).reshape(48, 64, 3) / (48 * 64 * 3)
    x = downsample(image, 4)
    assert x.shape == (12 * 16 * 3,)
    block = image[:4, :4, 0]
    assert abs(x[0] - block.mean()) < 1e-15


def test_embedding_dimension_is_eight():
    enc = make_encoder()
    f = enc.forward(np.random.default_rng(1).uniform(size=enc.in_dim))
    assert f.shape == (8,)


def test_head_output_dimension_is_three():
    enc = make_encoder()
    y = enc.forward_head(np.random.default_rng(1).uniform(size=enc.in_dim))
    assert y.shape == (3,)


def test_encoding_deterministic():
    enc = make_encoder()
    frame = random_frame(np.random.default_rng(2))
    a = enc.encode_frame(frame, VISION.pool)
    b = enc.encode_frame(frame, VISION.pool)
    assert np.array_equal(a, b)


def test_gradients_match_finite_differences():
    enc = make_encoder(3)
    rng = np.random.default_rng(4)
    x = rng.uniform(size=(5, enc.in_dim))
    y = rng.uniform(size=(5, 3))

    def loss():
        pred = enc.forward_head(x)
        return float(np.mean((pred - y) ** 2))

    base = loss()
    pred = enc.forward_head(x)
    grads = enc.backward_head(2.0 * (pred - y) / y.size)
    params = enc.parameters()
    assert len(grads) == len(params)

    rel_errs = []
    eps = 1e-6
    rng_idx = np.random.default_rng(5)
    for p, g in zip(params, grads):
        flat_p, flat_g = p.ravel(), np.asarray(g).ravel()
        for k in rng_idx.choice(flat_p.size, size=min(5, flat_p.size), replace=False):
            old = flat_p[k]
            flat_p[k] = old + eps
            up = loss()
            flat_p[k] = old - eps
            down = loss()
            flat_p[k] = old
            fd = (up - down) / (2 * eps)
            denom = max(abs(fd), abs(flat_g[k]), 1e-8)
            rel_errs.append(abs(fd - flat_g[k]) / denom)
    assert max(rel_errs) < 1e-4


def test_save_load_round_trip():
    enc = make_encoder(6)
    buf = io.BytesIO()
    enc.save(buf)
    buf.seek(0)
    clone = VisionEncoder.load(buf)
    x = np.random.default_rng(7).uniform(size=enc.in_dim)
    assert np.array_equal(enc.forward(x), clone.forward(x))


def test_load_rejects_bad_magic():
    with pytest.raises(ContractViolation):
        VisionEncoder.load(io.BytesIO(b"NOTMAGIC" + b"\x00" * 64))


def test_memorizes_single_frame():
    rng = np.random.default_rng(8)
    frame = random_frame(rng)
    vis = VisionConfig(epochs=2500, batch_size=4)
    enc, history = pretrain_encoder([frame] * 4, vis, rng)
    x = downsample(frame.image, vis.pool)
    from throwcatch.render import labels_from_mask

    err = float(np.mean((enc.forward_head(x) - labels_from_mask(frame.mask)) ** 2))
    assert err < 1e-6


def test_pretrain_loss_decreases():
    rng = np.random.default_rng(9)
    frames = [random_frame(rng) for _ in range(64)]
    vis = VisionConfig(epochs=100, batch_size=32)
    enc, history = pretrain_encoder(frames, vis, rng, log_every=99)
    assert history[-1]["train_mse"] < history[0]["train_mse"]


def test_pretrain_empty_dataset_raises():
    with pytest.raises(ContractViolation):
        pretrain_encoder([], VISION, np.random.default_rng(0))


def test_feature_history_round_trip():
    hist = FeatureHistory()
    hist.initialize(np.zeros(8))
    feats = [np.full(8, float(i)) for i in range(1, 8)]
    for f in feats:
        hist.push(f)
    flat = hist.flat()
    assert flat.shape == (48,)
    # newest first: f7, f6, ..., f2
    for slot, expect in enumerate(range(7, 1, -1)):
        assert np.all(flat[8 * slot : 8 * (slot + 1)] == expect)


def test_feature_history_requires_initialization():
    hist = FeatureHistory()
    hist.push(np.zeros(8))
    with pytest.raises(ContractViolation):
        hist.flat()
