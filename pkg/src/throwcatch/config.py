"""Dataclass configuration tree, JSON round-trip, and content digests.

One config file drives every subcommand; ``config_digest`` hashes the fully
resolved tree so pipeline stages can be content-addressed.
"""

from __future__ import annotations

import hashlib
import json
import typing
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path

from .errors import ContractViolation


@dataclass
class RandomizationConfig:
    """Per-episode sampling ranges (uniform unless noted)."""

    enabled: bool = True
    mass_range: tuple[float, float] = (0.3, 0.5)
    color_range: tuple[float, float] = (0.0, 1.0)
    stiffness_scale_range: tuple[float, float] = (0.75, 1.5)
    damping_scale_range: tuple[float, float] = (0.75, 1.5)
    restitution_offset_range: tuple[float, float] = (-0.04, 0.04)
    friction_offset_range: tuple[float, float] = (-0.04, 0.04)
    obs_noise_std: float = 0.02  # per-step additive, proprioceptive entries
    obs_bias_std: float = 0.001  # per-episode additive
    act_noise_std: float = 0.002
    act_bias_std: float = 0.0001
    background_noise_prob: float = 0.3  # chance per episode of N(0,1) pixels


@dataclass
class WorldConfig:
    gravity: float = 9.81
    physics_dt: float = 1.0 / 120.0
    decimation: int = 2  # physics substeps per control step (60 Hz control)
    max_episode_time: float = 3.0  # seconds -> 180 control steps

    thrower_base: tuple[float, float] = (0.0, 0.5)
    catcher_base: tuple[float, float] = (1.2, 0.5)
    link_lengths: tuple[float, float, float] = (0.30, 0.25, 0.10)
    joint_limit: float = 3.5  # rad, symmetric hard clamp
    velocity_limit: float = 8.0  # rad/s
    torque_limit: float = 60.0  # N*m, unit-inertia joints
    arm_kd: float = 30.0  # velocity-servo damping gain
    grip_kp: float = 2000.0
    grip_kd: float = 90.0
    grip_force_limit: float = 60.0

    arm_vel_scale: float = 4.0  # action [-1,1] -> rad/s
    grip_max_aperture: float = 0.06  # action [-1,1] -> [0, 0.06] m
    grip_close_threshold: float = 0.02  # aperture below: can catch / keeps hold
    grip_release_threshold: float = 0.045  # aperture above: holder releases

    catch_radius: float = 0.05
    base_restitution: float = 0.2

    nominal_thrower_q: tuple[float, float, float] = (1.1, -0.5, -0.3)
    pose_jitter: float = 0.04  # rad, reset randomization of arm joints

    target_height_min: float = 0.6
    target_radius_range: tuple[float, float] = (0.25, 0.55)

    fall_z_threshold: float = 0.1
    goal_deviation_limit: float = 0.4
    hand_min_distance: float = 0.1
    link_clearance: float = 0.02

    frustum_x: tuple[float, float] = (-0.55, 1.55)
    frustum_z: tuple[float, float] = (0.0, 1.6)

    object_set: str = "train"
    randomization: RandomizationConfig = field(default_factory=RandomizationConfig)

    @property
    def control_dt(self) -> float:
        return self.physics_dt * self.decimation

    @property
    def max_control_steps(self) -> int:
        return int(round(self.max_episode_time / self.control_dt))


@dataclass
class VisionConfig:
    height: int = 48
    width: int = 64
    pool: int = 4  # average-pooling factor before the encoder
    embed_dim: int = 8
    hidden: tuple[int, int] = (128, 64)
    lr: float = 1e-4
    epochs: int = 3000
    batch_size: int = 128
    val_fraction: float = 0.15
    input_noise: float = 0.0  # std of pixel jitter applied during pretraining


@dataclass
class DemoConfig:
    episodes: int = 60
    retention_distance: float = 0.05  # keep demos landing this close to target
    release_angle_range: tuple[float, float] = (1.15, 2.05)  # rad from +x at base
    release_radius_range: tuple[float, float] = (0.46, 0.60)  # m from base
    windup_time: float = 0.6  # s
    joint_speed_budget: float = 3.7  # rad/s allowed at release (headroom under 4)
    t_flight_range: tuple[float, float] = (0.3, 0.8)
    post_release_ticks: int = 3


@dataclass
class BCConfig:
    hidden: tuple[int, int] = (256, 256)
    lr: float = 1e-4
    epochs: int = 10000
    batch_size: int = 256
    val_fraction: float = 0.15
    human_sigma: float = 0.1  # fixed reference spread for the KL term


@dataclass
class TrainerConfig:
    gamma: float = 0.995
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    lr: float = 1e-4
    epochs: int = 8
    minibatch_size: int = 4096
    hidden: tuple[int, ...] = (512, 512, 512)
    activation: str = "elu"
    beta1: float = 0.01  # internal-advantage weight
    beta2: float = 0.001  # advantage-noise weight
    lambda_reg: float = 0.2
    iterations: int = 50
    t_max: int = 128  # rollout length per environment
    n_envs: int = 16
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    grad_clip: float = 1.0
    init_log_sigma: float = -1.0
    checkpoint_every: int = 10
    scripted_thrower: bool = False  # catcher-only training against the oracle
    ablate: str = "none"  # none | open-loop | no-marl | no-human-reg | no-hybrid
    finetune_encoder: bool = False

    def __post_init__(self):
        if not 0.0 <= self.lambda_reg <= 1.0:
            raise ContractViolation("lambda_reg must lie in [0, 1]")
        if self.ablate not in ("none", "open-loop", "no-marl", "no-human-reg", "no-hybrid"):
            raise ContractViolation(f"unknown ablation {self.ablate!r}")


@dataclass
class EvalConfig:
    n_episodes: int = 200
    object_set: str = "train"


@dataclass
class Config:
    seed: int = 0
    world: WorldConfig = field(default_factory=WorldConfig)
    vision: VisionConfig = field(default_factory=VisionConfig)
    demo: DemoConfig = field(default_factory=DemoConfig)
    bc: BCConfig = field(default_factory=BCConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


def _to_jsonable(obj):
    if is_dataclass(obj):
        return {f.name: _to_jsonable(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_to_jsonable(v) for v in obj]
    return obj


def _from_dict(cls, data):
    if not is_dataclass(cls):
        return data
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        ftype = hints.get(f.name)
        if isinstance(ftype, type) and is_dataclass(ftype):
            kwargs[f.name] = _from_dict(ftype, value)
        elif isinstance(value, list):
            kwargs[f.name] = tuple(value)
        else:
            kwargs[f.name] = value
    return cls(**kwargs)


def config_to_dict(config: Config) -> dict:
    return _to_jsonable(config)


def config_from_dict(data: dict) -> Config:
    return _from_dict(Config, data)


def save_config(config: Config, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(config), indent=2) + "\n")


def load_config(path) -> Config:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ContractViolation(f"malformed config file {path}: {exc}") from exc
    return config_from_dict(data)


def config_digest(config) -> str:
    """Hash of the fully resolved config; changes iff any field changes."""
    blob = json.dumps(_to_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
