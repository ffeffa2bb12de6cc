"""Binary dataset formats: bit-exact round-trips and corruption rejection."""

import numpy as np
import pytest

from throwcatch.config import VisionConfig
from throwcatch.datasets import (
    load_demo_dataset,
    load_frame_dataset,
    save_demo_dataset,
    save_frame_dataset,
)
from throwcatch.demos import DemoRecord
from throwcatch.errors import ContractViolation
from throwcatch.render import Frame

VISION = VisionConfig()


def u8_image(rng):
    # images are stored as u8, so build one already on the u8 grid to make
    # round-trips bit-exact
    raw = rng.integers(0, 256, size=(VISION.height, VISION.width, 3))
    return raw.astype(np.float64) / 255.0


def make_records(n, seed=0):
    rng = np.random.default_rng(seed)
    records = []
    for _ in range(n):
        frame = Frame(
            image=u8_image(rng),
            mask=rng.uniform(size=(VISION.height, VISION.width)) < 0.01,
        )
        records.append(
            DemoRecord(
                action=rng.uniform(-1, 1, 4),
                q_throw=rng.normal(size=4),
                p_target=rng.normal(size=2),
                p_obj=rng.normal(size=2),
                frame=frame,
            )
        )
    return records


def test_demo_round_trip_bit_exact(tmp_path):
    records = make_records(7)
    path = tmp_path / "demos.bin"
    save_demo_dataset(records, path)
    loaded = load_demo_dataset(path)
    assert len(loaded) == len(records)
    for a, b in zip(records, loaded):
        assert np.array_equal(a.action, b.action)
        assert np.array_equal(a.q_throw, b.q_throw)
        assert np.array_equal(a.p_target, b.p_target)
        assert np.array_equal(a.p_obj, b.p_obj)
        assert np.array_equal(a.frame.image, b.frame.image)
        assert np.array_equal(a.frame.mask, b.frame.mask)


def test_demo_save_of_loaded_is_identical(tmp_path):
    records = make_records(5, seed=1)
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    save_demo_dataset(records, p1)
    save_demo_dataset(load_demo_dataset(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_demo_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOTADEMO" + b"\x00" * 100)
    with pytest.raises(ContractViolation):
        load_demo_dataset(path)


def test_demo_rejects_trailing_bytes(tmp_path):
    records = make_records(2, seed=2)
    path = tmp_path / "demos.bin"
    save_demo_dataset(records, path)
    path.write_bytes(path.read_bytes() + b"\x01")
    with pytest.raises(ContractViolation):
        load_demo_dataset(path)


def test_frame_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    frames = [
        Frame(image=u8_image(rng), mask=rng.uniform(size=(48, 64)) < 0.02)
        for _ in range(4)
    ]
    labels = rng.uniform(size=(4, 3))
    path = tmp_path / "frames.bin"
    save_frame_dataset(frames, labels, path)
    loaded_frames, loaded_labels = load_frame_dataset(path)
    assert np.array_equal(labels, loaded_labels)
    for a, b in zip(frames, loaded_frames):
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.mask, b.mask)


def test_frame_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"WRONGMAG" + b"\x00" * 100)
    with pytest.raises(ContractViolation):
        load_frame_dataset(path)


def test_image_quantization_round_trips_on_grid():
    # arbitrary float images quantize to the nearest u8 level on save
    rng = np.random.default_rng(4)
    img = rng.uniform(size=(48, 64, 3))
    quantized = np.round(img * 255.0) / 255.0
    assert np.max(np.abs(quantized - img)) <= 0.5 / 255.0 + 1e-12
