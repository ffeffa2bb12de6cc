"""Scripted throwing demonstrator, demo collection, and behavior cloning.

The demonstrator stands in for human teleoperation: it solves the release
velocity analytically, winds up along a minimum-jerk joint trajectory,
accelerates along a smoothstep joint-space ramp with a deadbeat finish that
pins the joint state onto the release state, and times the gripper-open
command against the (deterministic) aperture dynamics so the release
threshold is crossed at the planned substep.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ballistics import closest_approach, solve_release
from .config import BCConfig, DemoConfig, WorldConfig
from .encoder import FeatureHistory  # noqa: F401  (re-export convenience)
from .env import FREE, HELD_BY_THROWER, ThrowCatchEnv
from .errors import ContractViolation, InfeasibleDemo
from .kinematics import forward_kinematics, solve_ik
from .nn import Adam, DenseNetwork
from .render import Frame


ACCEL_DISTANCE = 0.18  # m, nominal straight-line palm acceleration run


@dataclass
class DemoRecord:
    action: np.ndarray  # normalized thrower action, (4,)
    q_throw: np.ndarray  # (4,) joint state at the same tick
    p_target: np.ndarray  # (2,)
    p_obj: np.ndarray  # (2,)
    frame: Frame


def _min_jerk(s: float):
    """Normalized min-jerk position and velocity profiles on s in [0,1]."""
    s = min(max(s, 0.0), 1.0)
    pos = 10 * s**3 - 15 * s**4 + 6 * s**5
    vel = 30 * s**2 - 60 * s**3 + 30 * s**4
    return pos, vel


def gripper_open_delay(
    world: WorldConfig,
    stiffness_scale: float,
    damping_scale: float,
    q: float = 0.0,
    qdot: float = 0.0,
) -> int:
    """Physics substeps from the open command until the release threshold.

    Mirrors the env gripper integration exactly (torque clip, velocity limit,
    aperture clamp) so the release substep can be predicted ahead of time.
    """
    kp = world.grip_kp * stiffness_scale
    kd = world.grip_kd * damping_scale
    dt = world.physics_dt
    target = world.grip_max_aperture
    for n in range(1, 600):
        tau = float(
            np.clip(kp * (target - q) - kd * qdot, -world.grip_force_limit, world.grip_force_limit)
        )
        qdot = float(np.clip(qdot + tau * dt, -world.velocity_limit, world.velocity_limit))
        q = float(np.clip(q + qdot * dt, 0.0, world.grip_max_aperture))
        if q >= world.grip_release_threshold:
            return n
    raise ContractViolation("gripper never reaches the release threshold")


def _ramp(s: float):
    """Smoothstep velocity ramp on s in [0, 1].

    Returns (velocity fraction w, position integral W, acceleration fraction
    w').  The joint velocity profile v(s) = v_end * w(s) rises monotonically
    from rest to the release velocity with zero end acceleration, so commands
    never need to exceed the release joint speeds and the final ticks track
    without saturation.  Integral W(1) = 1/2, matching a constant-accel run.
    """
    s = min(max(s, 0.0), 1.0)
    w = s * s * (3.0 - 2.0 * s)
    big_w = s**3 - 0.5 * s**4
    dw = 6.0 * s * (1.0 - s)
    return w, big_w, dw


class ScriptedThrower:
    """Privileged analytic thrower driving the right arm of one env."""

    def __init__(self, world: WorldConfig, demo: DemoConfig):
        self.world = world
        self.demo = demo
        self.plan = None

    def _search_release(self, target: np.ndarray):
        """Grid-search release point and flight time minimizing the peak joint
        velocity needed at release (elbow-up overhead configurations)."""
        w = self.world
        d = self.demo
        base = np.asarray(w.thrower_base)
        margin = 0.08
        best = None
        ik_seed = np.array([1.3, 0.9, 0.3])  # elbow-up overhead branch
        for angle in np.arange(d.release_angle_range[0], d.release_angle_range[1], 0.1):
            for radius in np.linspace(*d.release_radius_range, 3):
                p_rel = base + radius * np.array([np.cos(angle), np.sin(angle)])
                if p_rel[0] < w.frustum_x[0] + margin or p_rel[1] > w.frustum_z[1] - margin:
                    continue
                q_rel = solve_ik(p_rel, ik_seed, base, w.link_lengths)
                palm, jac = forward_kinematics(q_rel, base, w.link_lengths)
                if np.linalg.norm(palm - p_rel) > 1e-5:
                    continue
                if np.max(np.abs(q_rel)) > w.joint_limit - 0.1:
                    continue
                pinv = np.linalg.pinv(jac)
                for t_flight in np.arange(d.t_flight_range[0], d.t_flight_range[1], 0.025):
                    v = solve_release(p_rel, target, t_flight, w.gravity)
                    apex = p_rel[1] + max(0.0, v[1]) ** 2 / (2 * w.gravity)
                    if apex > w.frustum_z[1] - margin:
                        continue
                    peak_qd = float(np.max(np.abs(pinv @ v)))
                    if best is None or peak_qd < best[0]:
                        best = (peak_qd, p_rel, q_rel, v, t_flight)
        if best is None or best[0] > d.joint_speed_budget:
            raise InfeasibleDemo(f"target {target} needs joint speed {best and best[0]}")
        return best[1:]

    def start_episode(self, env: ThrowCatchEnv) -> None:
        w = self.world
        d = self.demo
        st = env.state
        base = np.asarray(w.thrower_base)
        target = st.p_target
        p_rel, q_rel, v_rel, best_t = self._search_release(target)
        speed = float(np.linalg.norm(v_rel))
        u = v_rel / speed
        dt_c = w.control_dt
        windup_ticks = int(round(d.windup_time / dt_c))
        _, jac_rel = forward_kinematics(q_rel, base, w.link_lengths)
        qdot_rel = np.linalg.pinv(jac_rel) @ v_rel

        # acceleration ramp: all joints follow the same smoothstep velocity
        # shape into (q_rel, qdot_rel); stretch it until the inverted servo
        # command (tracking velocity plus the acceleration feedforward the
        # first-order lag requires) stays within the command range
        # gripper delay parity decides whether the aperture crosses the
        # release threshold at the last ramp substep (even delay) or one
        # substep later (odd).  For the odd case the deadbeat targets the
        # joint state one substep before (q_rel, qdot_rel); the held release
        # velocity then carries the joints exactly onto it at the crossing.
        delay_sub = gripper_open_delay(w, st.rand.stiffness_scale, st.rand.damping_scale)
        cross_offset = delay_sub % 2
        q_db = q_rel - cross_offset * qdot_rel * w.physics_dt

        # the smoothstep reaches full release velocity three ticks before ramp
        # end; the final three ticks are a deadbeat hold that pins the joint
        # state onto the target exactly at the scheduled substep
        kd_eff = w.arm_kd * st.rand.damping_scale
        acc_ticks = max(7, 3 + int(np.ceil(2.0 * ACCEL_DISTANCE / speed / dt_c)))
        for _ in range(16):
            t_acc = acc_ticks * dt_c
            t_ramp = t_acc - 3 * dt_c
            q_pre = q_db - qdot_rel * (0.5 * t_ramp + 3 * dt_c)
            if float(np.max(np.abs(q_pre))) > w.joint_limit - 0.05:
                raise InfeasibleDemo(f"pre-throw pose out of joint range for target {target}")
            cmd_peak = max(
                float(
                    np.max(
                        np.abs(
                            qdot_rel * _ramp(s)[0]
                            + qdot_rel * _ramp(s)[2] / (t_ramp * kd_eff)
                        )
                    )
                )
                for s in np.linspace(0.0, 1.0, 33)
            )
            if cmd_peak <= w.arm_vel_scale - 0.15:
                break
            acc_ticks += 1
        else:
            raise InfeasibleDemo(f"no feasible acceleration ramp for target {target}")
        p_pre, _ = forward_kinematics(q_pre, base, w.link_lengths)
        if not (
            w.frustum_x[0] + 0.03 <= p_pre[0] <= w.frustum_x[1] - 0.03
            and 0.12 <= p_pre[1] <= w.frustum_z[1] - 0.03
        ):
            raise InfeasibleDemo(f"pre-throw palm position out of view for target {target}")

        # open the gripper so the aperture crosses the release threshold at the
        # final ramp substep (or one substep later for odd delays), where the
        # deadbeat finish has pinned the joints onto the release state
        accel_end_tick = windup_ticks + acc_ticks
        open_tick = max(windup_ticks + 1, int(np.ceil((2 * accel_end_tick - delay_sub) / 2)))

        self.plan = {
            "q0": st.thrower.q[:3].copy(),
            "q_pre": q_pre,
            "q_rel": q_rel,
            "q_db": q_db,
            "qdot_rel": qdot_rel,
            "p_rel": p_rel,
            "v_rel": v_rel,
            "t_flight": best_t,
            "t_ramp": t_ramp,
            "windup_ticks": windup_ticks,
            "accel_end_tick": accel_end_tick,
            "open_tick": open_tick,
            "tick": 0,
            "released": False,
        }

    def action(self, env: ThrowCatchEnv) -> np.ndarray:
        """Normalized thrower action for the current control tick."""
        if self.plan is None:
            raise ContractViolation("start_episode must run before action")
        w = self.world
        plan = self.plan
        st = env.state
        tick = plan["tick"]
        plan["tick"] = tick + 1
        dt_c = w.control_dt
        dt = w.physics_dt
        base = np.asarray(w.thrower_base)
        q = st.thrower.q[:3]
        qdot = st.thrower.qdot[:3]

        # the arm joints integrate as a first-order lag toward the commanded
        # velocity; invert it so the joint velocity lands on target after
        # ``horizon`` physics substeps
        decay = 1.0 - w.arm_kd * st.rand.damping_scale * dt

        def invert(qd_target: np.ndarray, horizon: int) -> np.ndarray:
            c = decay**horizon
            return (qd_target - c * qdot) / (1.0 - c)

        if st.obj.attachment == FREE or plan["released"]:
            plan["released"] = True
            qd_cmd = -2.0 * qdot
            grip_cmd = 1.0
        elif tick < plan["windup_ticks"]:
            s0 = tick / plan["windup_ticks"]
            s2 = (tick + 1) / plan["windup_ticks"]
            pos0, _ = _min_jerk(s0)
            _, vel2 = _min_jerk(s2)
            dq = plan["q_pre"] - plan["q0"]
            q_ref = plan["q0"] + pos0 * dq
            qd_ref = vel2 * dq / (plan["windup_ticks"] * dt_c)
            qd_cmd = invert(qd_ref + 8.0 * (q_ref - q), 2)
            grip_cmd = -1.0
        elif tick < plan["accel_end_tick"] - 3:
            t_ramp = plan["t_ramp"]
            s0 = (tick - plan["windup_ticks"]) * dt_c / t_ramp
            s2 = s0 + dt_c / t_ramp
            _, big_w0, _ = _ramp(s0)
            w2, _, _ = _ramp(s2)
            q_ref = plan["q_pre"] + plan["qdot_rel"] * t_ramp * big_w0
            qd_ref = plan["qdot_rel"] * w2
            qd_cmd = invert(qd_ref + 15.0 * (q_ref - q), 2)
            grip_cmd = 1.0 if tick >= plan["open_tick"] else -1.0
        elif tick < plan["accel_end_tick"]:
            # deadbeat finish: over the remaining K ticks the servo dynamics
            # are linear, so solve for the command sequence that puts the
            # joint state exactly on (q_rel, qdot_rel) at the final ramp
            # substep -- where the gripper crossing is scheduled -- spreading
            # the correction with minimum deviation from the release speeds.
            # Re-solved each tick (receding horizon); the last tick matches
            # the velocity exactly.
            d = decay
            c = d * d
            v_tgt = plan["qdot_rel"]
            horizon = plan["accel_end_tick"] - tick
            if horizon == 1:
                qd_cmd = (v_tgt - c * qdot) / (1.0 - c)
            else:
                amat = np.array([[1.0, dt * (d + c)], [0.0, c]])
                bvec = np.array([dt * (2.0 - d - c), 1.0 - c])
                x0 = np.stack([q, qdot])  # (2, 3)
                target = np.stack([plan["q_db"], v_tgt])
                bmat = np.column_stack(
                    [np.linalg.matrix_power(amat, horizon - 1 - k) @ bvec for k in range(horizon)]
                )  # (2, K)
                free = np.linalg.matrix_power(amat, horizon) @ x0
                u_ref = np.tile(v_tgt, (horizon, 1))  # (K, 3)
                resid = target - free - bmat @ u_ref
                u_seq = u_ref + bmat.T @ np.linalg.solve(bmat @ bmat.T, resid)
                qd_cmd = u_seq[0]
            grip_cmd = 1.0 if tick >= plan["open_tick"] else -1.0
        else:
            # the aperture crossing is scheduled for the last ramp substep or
            # one substep after it (the planner shifted the release state to
            # whichever parity applies), so past ramp end the commanded joint
            # velocity is simply held at the release value -- the servo
            # equilibrium -- until the object actually leaves the palm
            qd_cmd = plan["qdot_rel"]
            grip_cmd = 1.0 if tick >= plan["open_tick"] else -1.0

        a = np.empty(4)
        a[:3] = np.clip(qd_cmd / w.arm_vel_scale, -1.0, 1.0)
        a[3] = grip_cmd
        return a

    @property
    def released(self) -> bool:
        return self.plan is not None and self.plan["released"]


def run_demo_episode(env: ThrowCatchEnv, thrower: ScriptedThrower, demo: DemoConfig):
    """One scripted episode.  Returns (records, release state, landing miss).

    Records cover episode start through release + post_release_ticks; the miss
    is the closest analytic-flight approach to the target.
    """
    thrower.start_episode(env)
    records = []
    release = None
    ticks_after_release = 0
    catch_action = np.array([0.0, 0.0, 0.0, -1.0])  # hold pose, gripper closed
    max_ticks = env.world.max_control_steps
    for _ in range(max_ticks):
        st = env.state
        a = thrower.action(env)
        records.append(
            DemoRecord(
                action=a.copy(),
                q_throw=st.thrower.q.copy(),
                p_target=st.p_target.copy(),
                p_obj=st.obj.p.copy(),
                frame=st.last_frame,
            )
        )
        was_held = st.obj.attachment == HELD_BY_THROWER
        outcome, *_ = env.step(a, catch_action)
        if was_held and env.state.obj.attachment != HELD_BY_THROWER:
            release = (env.state.obj.p.copy(), env.state.obj.v.copy())
        if release is not None:
            ticks_after_release += 1
            if ticks_after_release >= demo.post_release_ticks:
                break
        if outcome.terminated:
            break
    if release is None:
        return records, None, np.inf
    miss, _ = closest_approach(
        release[0], release[1], env.state.p_target, 1.5, env.world.gravity
    )
    return records, release, miss


def collect_demos(
    n_episodes: int,
    world: WorldConfig,
    demo: DemoConfig,
    seed: int = 0,
    vision=None,
    feature_fn=None,
):
    """Collect retained demo episodes; returns (records, stats).

    Only episodes whose throw lands within ``demo.retention_distance`` of the
    target are kept.
    """
    if n_episodes < 1:
        raise ContractViolation("need at least one episode")
    env = ThrowCatchEnv(world, vision, feature_fn=feature_fn, seed=seed)
    thrower = ScriptedThrower(world, demo)
    seeds = np.random.SeedSequence(seed).spawn(n_episodes)
    records: list[DemoRecord] = []
    stats = {"episodes": 0, "retained": 0, "infeasible": 0, "misses": []}
    for ep_seed in seeds:
        env.reset(seed=int(ep_seed.generate_state(1)[0] % 2**31))
        stats["episodes"] += 1
        try:
            ep_records, release, miss = run_demo_episode(env, thrower, demo)
        except InfeasibleDemo:
            stats["infeasible"] += 1
            continue
        stats["misses"].append(miss)
        if release is not None and miss <= demo.retention_distance:
            records.extend(ep_records)
            stats["retained"] += 1
    if stats["retained"] == 0:
        raise ContractViolation(
            f"no demo episode retained out of {n_episodes} "
            f"(infeasible: {stats['infeasible']}, misses: {stats['misses'][:5]})"
        )
    return records, stats


class HumanPolicy:
    """Behavior-cloned deterministic throwing policy with a fixed reference spread."""

    def __init__(self, net: DenseNetwork, sigma: float):
        self.net = net
        self.sigma = sigma

    def mean(self, o_star: np.ndarray) -> np.ndarray:
        return self.net.forward(o_star)

    def save(self, fh) -> None:
        import struct

        fh.write(b"THROWHUM")
        fh.write(struct.pack("<d", self.sigma))
        from .nn import save_network

        save_network(self.net, fh)

    @classmethod
    def load(cls, fh) -> "HumanPolicy":
        import struct

        if fh.read(8) != b"THROWHUM":
            raise ContractViolation("bad human-policy magic")
        (sigma,) = struct.unpack("<d", fh.read(8))
        from .nn import load_network

        return cls(load_network(fh), sigma)


def bc_inputs(records: list[DemoRecord]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([np.concatenate([r.q_throw, r.p_target, r.p_obj]) for r in records])
    y = np.stack([r.action for r in records])
    return x, y


def train_human_policy(
    records: list[DemoRecord],
    bc: BCConfig,
    rng: np.random.Generator,
    epochs: int | None = None,
    min_records: int = 500,
):
    """MSE behavior cloning of the thrower; returns (policy, history)."""
    if len(records) < min_records:
        raise ContractViolation(f"need >= {min_records} records, got {len(records)}")
    epochs = bc.epochs if epochs is None else epochs
    x, y = bc_inputs(records)
    n = len(x)
    order = rng.permutation(n)
    n_val = max(1, int(n * bc.val_fraction))
    val_idx, train_idx = order[:n_val], order[n_val:]
    x_train, y_train = x[train_idx], y[train_idx]
    x_val, y_val = x[val_idx], y[val_idx]

    net = DenseNetwork.create([x.shape[1], *bc.hidden, y.shape[1]], rng)
    opt = Adam(net.parameters(), lr=bc.lr)
    batch = min(bc.batch_size, len(x_train))
    history = []
    for epoch in range(epochs):
        perm = rng.permutation(len(x_train))
        for start in range(0, len(x_train), batch):
            idx = perm[start : start + batch]
            pred = net.forward(x_train[idx])
            err = pred - y_train[idx]
            grads, _ = net.backward(2.0 * err / err.size)
            opt.step(grads)
        if epoch % max(1, epochs // 20) == 0 or epoch == epochs - 1:
            train_mse = float(np.mean((net.forward(x_train) - y_train) ** 2))
            val_mse = float(np.mean((net.forward(x_val) - y_val) ** 2))
            history.append({"epoch": epoch, "train_mse": train_mse, "val_mse": val_mse})
    return HumanPolicy(net, bc.human_sigma), history
