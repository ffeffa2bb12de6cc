"""Binary file formats for the demonstration and frame datasets.

Demo dataset: header + per-record fixed-width numeric fields and the embedded
Frame.  Images are stored as 8-bit RGB and masks as packed bitsets; all other
fields round-trip bit-exactly as little-endian float64.  Saving a loaded
dataset reproduces the file byte for byte.
"""

from __future__ import annotations

import struct

import numpy as np

from .demos import DemoRecord
from .errors import ContractViolation
from .render import Frame

DEMO_MAGIC = b"THROWDM1"
FRAME_MAGIC = b"THROWFR1"


def _write_frame(fh, frame: Frame) -> None:
    image_u8 = np.round(np.clip(frame.image, 0.0, 1.0) * 255.0).astype(np.uint8)
    fh.write(image_u8.tobytes())
    fh.write(np.packbits(frame.mask.reshape(-1)).tobytes())


def _read_frame(fh, h: int, w: int) -> Frame:
    image_u8 = np.frombuffer(fh.read(h * w * 3), dtype=np.uint8).reshape(h, w, 3)
    n_mask = (h * w + 7) // 8
    bits = np.unpackbits(np.frombuffer(fh.read(n_mask), dtype=np.uint8))[: h * w]
    return Frame(
        image=image_u8.astype(np.float64) / 255.0,
        mask=bits.astype(bool).reshape(h, w),
    )


def save_demo_dataset(records: list[DemoRecord], path) -> None:
    if not records:
        raise ContractViolation("refusing to save an empty demo dataset")
    h, w = records[0].frame.mask.shape
    with open(path, "wb") as fh:
        fh.write(DEMO_MAGIC)
        fh.write(struct.pack("<IHH", len(records), h, w))
        for r in records:
            if r.frame.mask.shape != (h, w):
                raise ContractViolation("mixed frame sizes in demo dataset")
            nums = np.concatenate([r.action, r.q_throw, r.p_target, r.p_obj])
            fh.write(nums.astype("<f8").tobytes())
            _write_frame(fh, r.frame)


def load_demo_dataset(path) -> list[DemoRecord]:
    with open(path, "rb") as fh:
        if fh.read(8) != DEMO_MAGIC:
            raise ContractViolation(f"{path} is not a demo dataset")
        n, h, w = struct.unpack("<IHH", fh.read(8))
        records = []
        for _ in range(n):
            nums = np.frombuffer(fh.read(12 * 8), dtype="<f8")
            records.append(
                DemoRecord(
                    action=nums[0:4].copy(),
                    q_throw=nums[4:8].copy(),
                    p_target=nums[8:10].copy(),
                    p_obj=nums[10:12].copy(),
                    frame=_read_frame(fh, h, w),
                )
            )
        if fh.read(1):
            raise ContractViolation(f"trailing bytes in demo dataset {path}")
    return records


def save_frame_dataset(frames: list[Frame], labels: np.ndarray, path) -> None:
    if len(frames) != len(labels):
        raise ContractViolation("frame/label count mismatch")
    if not frames:
        raise ContractViolation("refusing to save an empty frame dataset")
    h, w = frames[0].mask.shape
    labels = np.asarray(labels, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(FRAME_MAGIC)
        fh.write(struct.pack("<IHH", len(frames), h, w))
        for frame, label in zip(frames, labels):
            fh.write(label.astype("<f8").tobytes())
            _write_frame(fh, frame)


def load_frame_dataset(path) -> tuple[list[Frame], np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(8) != FRAME_MAGIC:
            raise ContractViolation(f"{path} is not a frame dataset")
        n, h, w = struct.unpack("<IHH", fh.read(8))
        frames, labels = [], []
        for _ in range(n):
            labels.append(np.frombuffer(fh.read(3 * 8), dtype="<f8").copy())
            frames.append(_read_frame(fh, h, w))
        if fh.read(1):
            raise ContractViolation(f"trailing bytes in frame dataset {path}")
    return frames, np.stack(labels)
