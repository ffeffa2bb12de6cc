"""Planar two-arm throw-and-catch environment.

Physics runs at 120 Hz with two substeps per 60 Hz control step.  Arms are
unit-inertia PD-servoed joint chains; the free object follows exact ballistic
flight; contact is kinematic attachment at the palm point.  Rewards,
termination causes, and observation layouts follow the task's Dec-POMDP
definition:

  O_throw = [q_throw (4), p_target (2), f (8)]                       -> R^14
  O_catch = [q_catch (4), p_target (2), tau_f (6 x 8)]               -> R^54
  S       = [O_throw, O_catch, qd_throw (4), qd_catch (4),
             p_obj (2), v_obj (2)]                                   -> R^80
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ballistics import ballistic_step
from .config import VisionConfig, WorldConfig
from .encoder import FeatureHistory
from .errors import ContractViolation
from .kinematics import (
    forward_kinematics,
    joint_points,
    palm_velocity,
    segment_distance,
    solve_ik,
)
from .objects import ShapeDescriptor, get_object_set
from .render import Frame, Renderer, labels_from_mask

FAILURE_CAUSES = (
    "none",
    "object-fell",
    "goal-deviation",
    "hands-too-close",
    "unexpected-contact",
    "out-of-view",
    "timeout",
    "numeric-fault",
)

OBS_THROW_DIM = 14
OBS_CATCH_DIM = 54
GLOBAL_DIM = 80
FEATURE_DIM = 8
ACTION_DIM = 4

# slices of the global state used to rebuild the human-policy input o*
S_QTHROW = slice(0, 4)
S_PTARGET = slice(4, 6)
S_POBJ = slice(76, 78)

FREE = "free"
HELD_BY_THROWER = "held-by-thrower"
HELD_BY_CATCHER = "held-by-catcher"

NOMINAL_CATCHER_Q = np.array([2.4, 0.5, 0.3])

REWARD_WEIGHTS = {
    "r_dist": 4.0,
    "r_obj": 0.5,
    "r_contact": 1.0,
    "p_action": 0.0001,
    "p_hand": 1.0,
}


@dataclass
class ArmState:
    q: np.ndarray  # 3 arm joints (rad) + gripper aperture (m)
    qdot: np.ndarray
    cmd_qdot: np.ndarray = field(default_factory=lambda: np.zeros(3))
    cmd_grip: float = 0.0
    torque: np.ndarray = field(default_factory=lambda: np.zeros(4))


@dataclass
class ObjectState:
    shape: ShapeDescriptor
    mass: float
    p: np.ndarray
    v: np.ndarray
    attachment: str = FREE
    color: np.ndarray = field(default_factory=lambda: np.array([0.8, 0.2, 0.2]))


@dataclass
class EpisodeRandomization:
    stiffness_scale: float = 1.0
    damping_scale: float = 1.0
    restitution_offset: float = 0.0
    friction_offset: float = 0.0
    obs_bias: np.ndarray = field(default_factory=lambda: np.zeros(16))
    act_bias: np.ndarray = field(default_factory=lambda: np.zeros(8))
    background_noise: np.ndarray | None = None  # (H, W, 3) texture, frozen per episode


@dataclass
class StepOutcome:
    reward: float
    terms: dict
    terminated: bool
    failure_cause: str
    f_contact: bool
    l_target: float
    l_obj: float
    l_hand: float


def reward_terms(l_target, l_obj, l_hand, f_contact, torques, qdots) -> dict:
    """The five per-step reward terms, before weighting."""
    power = np.asarray(torques) * np.asarray(qdots)
    return {
        "r_dist": float(np.exp(-10.0 * l_target)),
        "r_obj": float(np.exp(-10.0 * l_obj)),
        "r_contact": 1.0 if f_contact else 0.0,
        "p_action": -float(np.sqrt(np.sum(power * power))),
        "p_hand": -float(np.exp(-10.0 * l_hand)),
    }


def combine_reward(terms: dict) -> float:
    return float(sum(REWARD_WEIGHTS[k] * v for k, v in terms.items()))


def zero_features(frame: Frame) -> np.ndarray:
    return np.zeros(FEATURE_DIM)


def oracle_features(frame: Frame) -> np.ndarray:
    """Mask-label features padded to 8 dims; privileged stand-in for tests."""
    out = np.zeros(FEATURE_DIM)
    out[:3] = labels_from_mask(frame.mask)
    return out


class ThrowCatchEnv:
    """Single deterministic environment instance (strictly single-threaded)."""

    def __init__(
        self,
        world: WorldConfig | None = None,
        vision: VisionConfig | None = None,
        feature_fn=None,
        seed: int = 0,
    ):
        self.world = world or WorldConfig()
        self.vision = vision or VisionConfig()
        self.feature_fn = feature_fn or zero_features
        self.renderer = Renderer(self.world, self.vision)
        self.rng = np.random.default_rng(seed)
        self.objects = get_object_set(self.world.object_set)
        self.state = None

    # -- episode setup -----------------------------------------------------

    def _sample_randomization(self) -> tuple[EpisodeRandomization, float, np.ndarray]:
        rz = self.world.randomization
        if not rz.enabled:
            return EpisodeRandomization(), 0.4, np.array([0.8, 0.2, 0.2])
        rng = self.rng
        mass = rng.uniform(*rz.mass_range)
        color = rng.uniform(rz.color_range[0], rz.color_range[1], size=3)
        rand = EpisodeRandomization(
            stiffness_scale=rng.uniform(*rz.stiffness_scale_range),
            damping_scale=rng.uniform(*rz.damping_scale_range),
            restitution_offset=rng.uniform(*rz.restitution_offset_range),
            friction_offset=rng.uniform(*rz.friction_offset_range),
            obs_bias=rng.normal(0.0, rz.obs_bias_std, size=16),
            act_bias=rng.normal(0.0, rz.act_bias_std, size=8),
            background_noise=(
                rng.standard_normal((self.vision.height, self.vision.width, 3))
                if rng.uniform() < rz.background_noise_prob
                else None
            ),
        )
        return rand, mass, color

    def _sample_target(self) -> np.ndarray:
        w = self.world
        base = np.asarray(w.catcher_base)
        for _ in range(100):
            radius = self.rng.uniform(*w.target_radius_range)
            # aim into the half-plane facing the thrower
            angle = self.rng.uniform(np.pi / 2 + 0.15, np.pi - 0.35)
            target = base + radius * np.array([np.cos(angle), np.sin(angle)])
            if target[1] >= w.target_height_min:
                return target
        raise ContractViolation("could not sample a reachable target")

    def reset(self, seed: int | None = None):
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        w = self.world
        rand, mass, color = self._sample_randomization()
        shape = self.objects[self.rng.integers(len(self.objects))]
        p_target = self._sample_target()

        jitter = w.pose_jitter if w.randomization.enabled else 0.0
        q_throw = np.asarray(w.nominal_thrower_q) + self.rng.uniform(-jitter, jitter, 3)
        q_catch_arm = solve_ik(
            p_target, NOMINAL_CATCHER_Q, np.asarray(w.catcher_base), w.link_lengths
        )
        q_catch_arm = q_catch_arm + self.rng.uniform(-jitter, jitter, 3)

        thrower = ArmState(q=np.append(q_throw, 0.0), qdot=np.zeros(4))
        catcher = ArmState(q=np.append(q_catch_arm, 0.0), qdot=np.zeros(4))
        palm, _ = forward_kinematics(thrower.q[:3], np.asarray(w.thrower_base), w.link_lengths)
        obj = ObjectState(
            shape=shape,
            mass=mass,
            p=palm.copy(),
            v=np.zeros(2),
            attachment=HELD_BY_THROWER,
            color=color,
        )
        self.state = _WorldState(
            thrower=thrower,
            catcher=catcher,
            obj=obj,
            p_target=p_target,
            rand=rand,
            feature_history=FeatureHistory(),
        )
        frame = self._render()
        feat = np.asarray(self.feature_fn(frame), dtype=np.float64)
        self.state.feature_history.initialize(feat)
        self.state.last_frame = frame
        return self._build_observations(feat)

    # -- physics -----------------------------------------------------------

    def _palm(self, which: str):
        w = self.world
        if which == "throw":
            arm, base = self.state.thrower, w.thrower_base
        else:
            arm, base = self.state.catcher, w.catcher_base
        return forward_kinematics(arm.q[:3], np.asarray(base), w.link_lengths)[0]

    def _palm_vel(self, which: str):
        w = self.world
        if which == "throw":
            arm, base = self.state.thrower, w.thrower_base
        else:
            arm, base = self.state.catcher, w.catcher_base
        return palm_velocity(arm.q[:3], arm.qdot[:3], np.asarray(base), w.link_lengths)

    def _substep_arm(self, arm: ArmState) -> None:
        w = self.world
        rand = self.state.rand
        dt = w.physics_dt
        kd = w.arm_kd * rand.damping_scale
        tau_arm = np.clip(
            kd * (arm.cmd_qdot - arm.qdot[:3]), -w.torque_limit, w.torque_limit
        )
        kp_g = w.grip_kp * rand.stiffness_scale
        kd_g = w.grip_kd * rand.damping_scale
        tau_grip = np.clip(
            kp_g * (arm.cmd_grip - arm.q[3]) - kd_g * arm.qdot[3],
            -w.grip_force_limit,
            w.grip_force_limit,
        )
        arm.torque = np.append(tau_arm, tau_grip)
        arm.qdot = arm.qdot + arm.torque * dt
        np.clip(arm.qdot, -w.velocity_limit, w.velocity_limit, out=arm.qdot)
        arm.q = arm.q + arm.qdot * dt
        low = np.array([-w.joint_limit] * 3 + [0.0])
        high = np.array([w.joint_limit] * 3 + [w.grip_max_aperture])
        clamped = (arm.q < low) | (arm.q > high)
        np.clip(arm.q, low, high, out=arm.q)
        arm.qdot[clamped] = 0.0

    def _substep_object(self) -> None:
        w = self.world
        st = self.state
        obj = st.obj
        if obj.attachment == HELD_BY_THROWER:
            obj.p = self._palm("throw")
            obj.v = self._palm_vel("throw")
            if st.thrower.q[3] >= w.grip_release_threshold:
                obj.attachment = FREE
            return
        if obj.attachment == HELD_BY_CATCHER:
            obj.p = self._palm("catch")
            obj.v = self._palm_vel("catch")
            if st.catcher.q[3] >= w.grip_release_threshold:
                obj.attachment = FREE
            return
        obj.p, obj.v = ballistic_step(obj.p, obj.v, w.physics_dt, w.gravity)
        palm = self._palm("catch")
        dist = float(np.linalg.norm(obj.p - palm))
        if dist < w.catch_radius:
            st.contact_this_step = True
            st.hit = True
            if st.catcher.q[3] < w.grip_close_threshold:
                obj.attachment = HELD_BY_CATCHER
                obj.p = palm.copy()
                obj.v = self._palm_vel("catch")
            elif not st.bounce_latch:
                # failed catch window: reflect the approach velocity component
                normal = obj.p - palm
                norm = np.linalg.norm(normal)
                if norm > 1e-9:
                    normal = normal / norm
                    approach = float(obj.v @ normal)
                    if approach < 0.0:
                        e = max(0.0, w.base_restitution + st.rand.restitution_offset)
                        obj.v = obj.v - (1.0 + e) * approach * normal
                st.bounce_latch = True
        else:
            st.bounce_latch = False

    def step(self, a_throw: np.ndarray, a_catch: np.ndarray):
        st = self.state
        if st is None:
            raise ContractViolation("step before reset")
        if st.terminated:
            raise ContractViolation("step on a terminated episode")
        w = self.world
        rz = w.randomization
        actions = np.concatenate(
            [np.clip(a_throw, -1.0, 1.0), np.clip(a_catch, -1.0, 1.0)]
        ).astype(np.float64)
        if rz.enabled:
            actions = actions + self.rng.normal(0.0, rz.act_noise_std, 8) + st.rand.act_bias
            np.clip(actions, -1.0, 1.0, out=actions)
        for arm, a in ((st.thrower, actions[:4]), (st.catcher, actions[4:])):
            arm.cmd_qdot = a[:3] * w.arm_vel_scale
            arm.cmd_grip = (a[3] + 1.0) * 0.5 * w.grip_max_aperture

        st.contact_this_step = False
        for _ in range(w.decimation):
            self._substep_arm(st.thrower)
            self._substep_arm(st.catcher)
            self._substep_object()

        palm_t = self._palm("throw")
        palm_c = self._palm("catch")
        l_target = float(np.linalg.norm(st.obj.p - st.p_target))
        l_obj = float(np.linalg.norm(st.obj.p - palm_c))
        l_hand = float(np.linalg.norm(palm_t - palm_c))
        torques = np.concatenate([st.thrower.torque, st.catcher.torque])
        qdots = np.concatenate([st.thrower.qdot, st.catcher.qdot])
        f_contact = st.contact_this_step or st.obj.attachment == HELD_BY_CATCHER
        terms = reward_terms(l_target, l_obj, l_hand, f_contact, torques, qdots)
        reward = combine_reward(terms)

        st.step_count += 1
        st.t += w.control_dt
        cause = self._check_failure(l_hand, palm_c)
        terminated = cause != "none"
        if terminated:
            st.terminated = True

        outcome = StepOutcome(
            reward=reward,
            terms=terms,
            terminated=terminated,
            failure_cause=cause,
            f_contact=f_contact,
            l_target=l_target,
            l_obj=l_obj,
            l_hand=l_hand,
        )
        frame = self._render()
        feat = np.asarray(self.feature_fn(frame), dtype=np.float64)
        st.feature_history.push(feat)
        st.last_frame = frame
        return outcome, *self._build_observations(feat)

    # -- termination -------------------------------------------------------

    def _check_failure(self, l_hand: float, palm_c: np.ndarray) -> str:
        w = self.world
        st = self.state
        vals = [st.obj.p, st.obj.v, st.thrower.q, st.thrower.qdot, st.catcher.q, st.catcher.qdot]
        if not all(np.isfinite(v).all() for v in vals):
            return "numeric-fault"
        if st.obj.p[1] < w.fall_z_threshold:
            return "object-fell"
        if float(np.linalg.norm(palm_c - st.p_target)) > w.goal_deviation_limit:
            return "goal-deviation"
        if l_hand < w.hand_min_distance:
            return "hands-too-close"
        if self._unexpected_contact():
            return "unexpected-contact"
        if self._out_of_view():
            return "out-of-view"
        if st.step_count >= w.max_control_steps:
            return "timeout"
        return "none"

    def _unexpected_contact(self) -> bool:
        w = self.world
        pts_t = joint_points(self.state.thrower.q[:3], np.asarray(w.thrower_base), w.link_lengths)
        pts_c = joint_points(self.state.catcher.q[:3], np.asarray(w.catcher_base), w.link_lengths)
        if pts_t[1:, 1].min() < 0.0 or pts_c[1:, 1].min() < 0.0:
            return True
        for i in range(3):
            for j in range(3):
                d = segment_distance(pts_t[i], pts_t[i + 1], pts_c[j], pts_c[j + 1])
                if d < w.link_clearance:
                    return True
        return False

    def _out_of_view(self) -> bool:
        w = self.world
        p = self.state.obj.p
        r = self.state.obj.shape.bounding_radius
        return (
            p[0] < w.frustum_x[0] - r
            or p[0] > w.frustum_x[1] + r
            or p[1] < w.frustum_z[0] - r
            or p[1] > w.frustum_z[1] + r
        )

    # -- observations ------------------------------------------------------

    def _render(self) -> Frame:
        st = self.state
        return self.renderer.render(
            st.thrower.q[:3],
            st.catcher.q[:3],
            st.obj.shape,
            st.obj.p,
            st.obj.color,
            background_noise=st.rand.background_noise,
        )

    def _build_observations(self, feat: np.ndarray):
        st = self.state
        rz = self.world.randomization
        q_t, q_c = st.thrower.q.copy(), st.catcher.q.copy()
        qd_t, qd_c = st.thrower.qdot.copy(), st.catcher.qdot.copy()
        if rz.enabled:
            noise = self.rng.normal(0.0, rz.obs_noise_std, 16)
            proprio = np.concatenate([q_t, q_c, qd_t, qd_c]) + noise + st.rand.obs_bias
            q_t, q_c = proprio[0:4], proprio[4:8]
            qd_t, qd_c = proprio[8:12], proprio[12:16]
        o_throw = np.concatenate([q_t, st.p_target, feat])
        o_catch = np.concatenate([q_c, st.p_target, st.feature_history.flat()])
        s = np.concatenate([o_throw, o_catch, qd_t, qd_c, st.obj.p, st.obj.v])
        return o_throw, o_catch, s

    # -- accessors ---------------------------------------------------------

    @property
    def terminated(self) -> bool:
        return self.state is not None and self.state.terminated

    def success(self) -> bool:
        """Caught and still held when the episode clock ran out."""
        st = self.state
        return (
            st is not None
            and st.terminated
            and st.obj.attachment == HELD_BY_CATCHER
            and st.step_count >= self.world.max_control_steps
        )

    def hit(self) -> bool:
        return self.state is not None and self.state.hit


@dataclass
class _WorldState:
    thrower: ArmState
    catcher: ArmState
    obj: ObjectState
    p_target: np.ndarray
    rand: EpisodeRandomization
    feature_history: FeatureHistory
    t: float = 0.0
    step_count: int = 0
    terminated: bool = False
    hit: bool = False
    contact_this_step: bool = False
    bounce_latch: bool = False
    last_frame: Frame | None = None
