"""Evaluation harness: metrics reports, trajectory export, ablation suite.

Evaluation rolls policies out at their mean action (no exploration noise),
with per-episode seeds derived from the master seed, and aggregates hit rate,
success rate, reward terms, and the failure-cause histogram per object and
overall.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from .config import Config, config_digest
from .demos import ScriptedThrower
from .env import ThrowCatchEnv, zero_features
from .errors import ContractViolation, InfeasibleDemo
from .kinematics import forward_kinematics
from .mappo import AgentBundle, Trainer, _plan_open_loop, load_checkpoint

HOLD_ACTION = np.array([0.0, 0.0, 0.0, -1.0])


# -- controllers -------------------------------------------------------------


class PolicyController:
    """Deterministic (mean-action) wrapper around a trained Gaussian policy."""

    def __init__(self, policy, role: str):
        if role not in ("throw", "catch"):
            raise ContractViolation(f"unknown controller role {role!r}")
        self.policy = policy
        self.role = role

    def reset(self, env: ThrowCatchEnv) -> None:
        pass

    def action(self, env, o_throw, o_catch) -> np.ndarray:
        obs = o_throw if self.role == "throw" else o_catch
        return np.clip(self.policy.mean(obs), -1.0, 1.0)


class JointPolicyController:
    """Single-agent (no-marl) checkpoint driving both arms; split on request."""

    def __init__(self, policy):
        self.policy = policy
        self._cache = None

    def reset(self, env) -> None:
        self._cache = None

    def joint_action(self, o_throw, o_catch) -> np.ndarray:
        return np.clip(self.policy.mean(np.concatenate([o_throw, o_catch])), -1.0, 1.0)


class ScriptedController:
    """Privileged analytic thrower; raises InfeasibleDemo on unreachable targets."""

    def __init__(self, config: Config):
        self.thrower = ScriptedThrower(config.world, config.demo)

    def reset(self, env) -> None:
        self.thrower.start_episode(env)

    def action(self, env, o_throw, o_catch) -> np.ndarray:
        return self.thrower.action(env)


class OpenLoopController:
    """Replays the demonstrator's nominal-dynamics plan without feedback."""

    def __init__(self, config: Config):
        self.config = config
        self.replay = None

    def reset(self, env) -> None:
        self.replay = _plan_open_loop(env, self.config)

    def action(self, env, o_throw, o_catch) -> np.ndarray:
        idx = min(env.state.step_count, len(self.replay) - 1)
        return self.replay[idx]


class PerfectCatcher:
    """Oracle catcher: servo the palm onto the analytic interception point.

    The thrower aims at p_target, so the palm is regulated to the target with
    the gripper closed; any residual reset jitter is servoed out.
    """

    def __init__(self, world, gain: float = 6.0):
        self.world = world
        self.gain = gain

    def reset(self, env) -> None:
        pass

    def action(self, env, o_throw, o_catch) -> np.ndarray:
        w = self.world
        st = env.state
        palm, jac = forward_kinematics(
            st.catcher.q[:3], np.asarray(w.catcher_base), w.link_lengths
        )
        qd = np.linalg.pinv(jac) @ (self.gain * (st.p_target - palm))
        a = np.empty(4)
        a[:3] = np.clip(qd / w.arm_vel_scale, -1.0, 1.0)
        a[3] = -1.0
        return a


class RandomController:
    """Uniform-random actions; the null baseline."""

    def __init__(self, seed: int, role: str = "catch"):
        self.rng = np.random.default_rng(seed)
        self.role = role

    def reset(self, env) -> None:
        pass

    def action(self, env, o_throw, o_catch) -> np.ndarray:
        return self.rng.uniform(-1.0, 1.0, 4)


class HoldController:
    """Keeps the arm still with the gripper closed."""

    def reset(self, env) -> None:
        pass

    def action(self, env, o_throw, o_catch) -> np.ndarray:
        return HOLD_ACTION.copy()


def controllers_from_checkpoint(path, config: Config):
    """Build (thrower, catcher) controllers from a trainer checkpoint."""
    agents = {a.name: a for a in load_checkpoint(path, config)}
    if "joint" in agents:
        joint = JointPolicyController(agents["joint"].actor)
        return joint, joint
    catcher = PolicyController(agents["catch"].actor, "catch")
    if "throw" in agents:
        return PolicyController(agents["throw"].actor, "throw"), catcher
    return ScriptedController(config), catcher


# -- evaluation --------------------------------------------------------------


@dataclass
class EvalReport:
    n_episodes: int
    object_set: str
    seed: int
    config_digest: str
    hit_rate: float
    success_rate: float
    reward_mean: float
    reward_terms: dict
    failure_causes: dict
    per_object: dict
    skipped: int = 0  # infeasible scripted targets

    def __post_init__(self):
        if not 0.0 <= self.success_rate <= self.hit_rate <= 1.0:
            raise ContractViolation("rate ordering violated: need success <= hit in [0,1]")

    def to_dict(self) -> dict:
        return {
            "n_episodes": self.n_episodes,
            "object_set": self.object_set,
            "seed": self.seed,
            "config_digest": self.config_digest,
            "hit_rate": self.hit_rate,
            "success_rate": self.success_rate,
            "reward_mean": self.reward_mean,
            "reward_terms": self.reward_terms,
            "failure_causes": self.failure_causes,
            "per_object": self.per_object,
            "skipped": self.skipped,
        }


def _run_episode(env, thrower, catcher, record_steps=None):
    joint = thrower is catcher and isinstance(thrower, JointPolicyController)
    o_throw, o_catch, _ = env.reset()
    thrower.reset(env)
    if not joint:
        catcher.reset(env)
    total_reward = 0.0
    term_sums = None
    steps = 0
    cause = "none"
    while not env.terminated:
        if joint:
            a = thrower.joint_action(o_throw, o_catch)
            a_throw, a_catch = a[:4], a[4:]
        else:
            a_throw = thrower.action(env, o_throw, o_catch)
            a_catch = catcher.action(env, o_throw, o_catch)
        if record_steps is not None:
            record_steps(env, a_throw, a_catch)
        outcome, o_throw, o_catch, _ = env.step(a_throw, a_catch)
        total_reward += outcome.reward
        steps += 1
        if term_sums is None:
            term_sums = {k: 0.0 for k in outcome.terms}
        for k, v in outcome.terms.items():
            term_sums[k] += v
        cause = outcome.failure_cause
    return {
        "reward": total_reward,
        "steps": steps,
        "terms": {k: v / steps for k, v in term_sums.items()},
        "hit": env.hit(),
        "success": env.success(),
        "failure_cause": cause,
        "object": env.state.obj.shape.name,
    }


def evaluate(
    thrower,
    catcher,
    config: Config,
    n_episodes: int | None = None,
    seed: int | None = None,
    object_set: str | None = None,
    feature_fn=None,
) -> EvalReport:
    """Roll out ``n_episodes`` deterministic episodes and aggregate metrics."""
    n_episodes = config.eval.n_episodes if n_episodes is None else n_episodes
    if n_episodes < 1:
        raise ContractViolation("evaluation needs n_episodes >= 1")
    seed = config.seed if seed is None else seed
    object_set = object_set or config.eval.object_set
    world = copy.deepcopy(config.world)
    world.object_set = object_set
    feature_fn = feature_fn or zero_features
    env = ThrowCatchEnv(world, config.vision, feature_fn=feature_fn, seed=seed)
    seeds = np.random.SeedSequence(seed).spawn(n_episodes)

    episodes = []
    skipped = 0
    for ss in seeds:
        env.rng = np.random.default_rng(int(ss.generate_state(1)[0] % 2**31))
        try:
            episodes.append(_run_episode(env, thrower, catcher))
        except InfeasibleDemo:
            skipped += 1
    if not episodes:
        raise ContractViolation("every evaluation episode was skipped as infeasible")

    causes: dict = {}
    per_object: dict = {}
    for ep in episodes:
        causes[ep["failure_cause"]] = causes.get(ep["failure_cause"], 0) + 1
        bucket = per_object.setdefault(ep["object"], {"episodes": 0, "hits": 0, "successes": 0})
        bucket["episodes"] += 1
        bucket["hits"] += int(ep["hit"])
        bucket["successes"] += int(ep["success"])
    for name, b in per_object.items():
        b["hit_rate"] = b["hits"] / b["episodes"]
        b["success_rate"] = b["successes"] / b["episodes"]
    term_keys = episodes[0]["terms"]
    return EvalReport(
        n_episodes=len(episodes),
        object_set=object_set,
        seed=seed,
        config_digest=config_digest(config),
        hit_rate=float(np.mean([ep["hit"] for ep in episodes])),
        success_rate=float(np.mean([ep["success"] for ep in episodes])),
        reward_mean=float(np.mean([ep["reward"] for ep in episodes])),
        reward_terms={
            k: float(np.mean([ep["terms"][k] for ep in episodes])) for k in term_keys
        },
        failure_causes=causes,
        per_object=per_object,
        skipped=skipped,
    )


def print_report(report: EvalReport, fh=None) -> None:
    import sys

    fh = fh or sys.stdout
    print(f"object set: {report.object_set}   episodes: {report.n_episodes}", file=fh)
    print(
        f"hit rate: {report.hit_rate:.3f}   success rate: {report.success_rate:.3f}"
        f"   mean reward: {report.reward_mean:.3f}",
        file=fh,
    )
    print(f"{'object':<14} {'episodes':>8} {'hit':>8} {'success':>8}", file=fh)
    for name in sorted(report.per_object):
        b = report.per_object[name]
        print(
            f"{name:<14} {b['episodes']:>8} {b['hit_rate']:>8.3f} {b['success_rate']:>8.3f}",
            file=fh,
        )
    print("failure causes: " + json.dumps(report.failure_causes, sort_keys=True), file=fh)


# -- trajectory export -------------------------------------------------------

TRAJECTORY_FIELDS = (
    ["episode", "t"]
    + [f"q_throw_{i}" for i in range(4)]
    + [f"qd_throw_{i}" for i in range(4)]
    + [f"q_catch_{i}" for i in range(4)]
    + [f"qd_catch_{i}" for i in range(4)]
    + ["obj_px", "obj_pz", "obj_vx", "obj_vz", "attachment"]
    + ["reward", "r_dist", "r_obj", "r_contact", "p_action", "p_hand", "failure_cause"]
)


def export_trajectories(
    thrower,
    catcher,
    config: Config,
    n_episodes: int,
    out_path,
    seed: int | None = None,
    object_set: str | None = None,
    feature_fn=None,
) -> int:
    """Write line-delimited episode trajectories; returns episodes written.

    One CSV header, then per-episode a ``# episode`` marker line followed by
    one record per control step in TRAJECTORY_FIELDS order.
    """
    if n_episodes < 1:
        raise ContractViolation("export needs n_episodes >= 1")
    seed = config.seed if seed is None else seed
    world = copy.deepcopy(config.world)
    world.object_set = object_set or config.eval.object_set
    env = ThrowCatchEnv(world, config.vision, feature_fn=feature_fn or zero_features, seed=seed)
    seeds = np.random.SeedSequence(seed).spawn(n_episodes)

    written = 0
    with open(out_path, "w") as fh:
        fh.write(",".join(TRAJECTORY_FIELDS) + "\n")
        for ep_index, ss in enumerate(seeds):
            ep_seed = int(ss.generate_state(1)[0] % 2**31)
            env.rng = np.random.default_rng(ep_seed)
            rows = []

            def record(env, a_throw, a_catch, rows=rows, ep=ep_index):
                st = env.state
                rows.append(
                    [ep, st.t]
                    + list(st.thrower.q)
                    + list(st.thrower.qdot)
                    + list(st.catcher.q)
                    + list(st.catcher.qdot)
                    + list(st.obj.p)
                    + list(st.obj.v)
                    + [st.obj.attachment]
                )

            try:
                o_throw, o_catch, _ = env.reset()
                thrower.reset(env)
                catcher.reset(env)
            except InfeasibleDemo:
                fh.write(f"# episode {ep_index} seed {ep_seed} skipped infeasible\n")
                continue
            fh.write(f"# episode {ep_index} seed {ep_seed}\n")
            while not env.terminated:
                a_throw = thrower.action(env, o_throw, o_catch)
                a_catch = catcher.action(env, o_throw, o_catch)
                record(env, a_throw, a_catch)
                outcome, o_throw, o_catch, _ = env.step(a_throw, a_catch)
                rows[-1] += [
                    outcome.reward,
                    outcome.terms["r_dist"],
                    outcome.terms["r_obj"],
                    outcome.terms["r_contact"],
                    outcome.terms["p_action"],
                    outcome.terms["p_hand"],
                    outcome.failure_cause,
                ]
            for row in rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
            written += 1
    return written


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# -- ablation suite ----------------------------------------------------------

ABLATION_ARMS = ("ours", "open-loop", "no-marl", "no-human-reg", "no-hybrid")
LAMBDA_SWEEP = (0.0, 0.1, 0.2, 0.4)


def run_ablation_suite(
    base_config: Config,
    budget_iterations: int,
    workdir,
    human_policy,
    feature_fn=None,
    encoder=None,
    eval_episodes: int | None = None,
    arms=ABLATION_ARMS,
    lambda_sweep=LAMBDA_SWEEP,
) -> list[dict]:
    """Train every ablation arm and the lambda sweep under one budget/seed.

    Returns comparison rows (one per arm per object set), ordered arms first,
    then the sweep by ascending lambda.
    """
    rows = []

    def train_and_eval(label: str, mutate):
        config = copy.deepcopy(base_config)
        config.trainer.iterations = budget_iterations
        mutate(config.trainer)
        arm_dir = workdir / label.replace(" ", "_")
        arm_dir.mkdir(parents=True, exist_ok=True)
        trainer = Trainer(
            config,
            workdir=arm_dir,
            encoder=encoder,
            human_policy=human_policy,
            feature_fn=feature_fn,
        )
        trainer.train()
        checkpoint = arm_dir / f"checkpoint_{trainer.iteration:05d}.bin"
        throw_ctl, catch_ctl = controllers_from_checkpoint(checkpoint, config)
        for object_set in ("train", "unseen"):
            report = evaluate(
                throw_ctl,
                catch_ctl,
                config,
                n_episodes=eval_episodes,
                object_set=object_set,
                feature_fn=feature_fn,
            )
            rows.append(
                {
                    "arm": label,
                    "lambda_reg": config.trainer.lambda_reg
                    if config.trainer.ablate not in ("no-human-reg",)
                    else 0.0,
                    "object_set": object_set,
                    "hit_rate": report.hit_rate,
                    "success_rate": report.success_rate,
                    "reward_mean": report.reward_mean,
                }
            )

    for arm in arms:
        if arm == "ours":
            train_and_eval("ours", lambda t: None)
        else:
            train_and_eval(arm, lambda t, a=arm: setattr(t, "ablate", a))
    for lam in sorted(lambda_sweep):
        train_and_eval(
            f"lambda_{lam:g}", lambda t, l=lam: setattr(t, "lambda_reg", l)
        )
    (workdir / "ablation_report.jsonl").write_text(
        "".join(json.dumps(r) + "\n" for r in rows)
    )
    return rows
