"""Human-regularized MAPPO: CTDE trainer for the thrower/catcher pair.

Rollouts are collected from parallel environments, advantages are estimated
with GAE plus the hybrid terms (internal advantage and exploration noise),
and each agent runs clipped-surrogate PPO updates against its own critic over
the global state.  The thrower's objective mixes the PPO surrogate with a KL
term toward the frozen behavior-cloned human policy.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
import time
from dataclasses import dataclass, field

import numpy as np

from .config import Config, config_digest, config_to_dict
from .demos import HumanPolicy, ScriptedThrower
from .env import FEATURE_DIM, ThrowCatchEnv, zero_features
from .errors import ContractViolation, InfeasibleDemo
from .nn import Adam, DenseNetwork, clip_grad_norm, load_network, save_network
from .policy import (
    GaussianPolicy,
    gaussian_entropy,
    gaussian_kl,
    gaussian_kl_grads,
    gaussian_log_prob,
)

CHECKPOINT_MAGIC = b"THROWCKP"

# observation layout (see env._build_observations)
O_THROW_DIM = 4 + 2 + FEATURE_DIM
O_CATCH_DIM = 4 + 2 + 6 * FEATURE_DIM
STATE_DIM = O_THROW_DIM + O_CATCH_DIM + 4 + 4 + 2 + 2
_P_OBJ_OFFSET = O_THROW_DIM + O_CATCH_DIM + 8


def o_star_from_state(s: np.ndarray) -> np.ndarray:
    """Reconstruct the human-policy input (q_throw, p_target, p_obj) from S."""
    s = np.asarray(s)
    return np.concatenate(
        [s[..., 0:6], s[..., _P_OBJ_OFFSET : _P_OBJ_OFFSET + 2]], axis=-1
    )


# -- advantage estimation ----------------------------------------------------


def compute_gae(rewards, values, dones, bootstrap, gamma: float, lam: float):
    """Backward GAE recursion over (T, E) arrays; returns (advantages, returns).

    ``bootstrap`` holds V(s_T) per environment; ``dones[t]`` masks the value
    beyond a terminal transition.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if rewards.shape != values.shape or rewards.shape != dones.shape:
        raise ContractViolation("GAE sequence lengths disagree")
    t_max = rewards.shape[0]
    adv = np.zeros_like(rewards)
    gae = np.zeros_like(np.asarray(bootstrap, dtype=np.float64))
    next_value = np.asarray(bootstrap, dtype=np.float64)
    for t in range(t_max - 1, -1, -1):
        not_done = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * not_done - values[t]
        gae = delta + gamma * lam * not_done * gae
        adv[t] = gae
        next_value = values[t]
    return adv, adv + values


def internal_advantage(values, dones, bootstrap) -> np.ndarray:
    """A_I = min(V(s_{t+1}) - V(s_t), 0), with V(s_{t+1}) = 0 past terminals."""
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    next_values = np.concatenate(
        [values[1:], np.asarray(bootstrap, dtype=np.float64)[None, :]], axis=0
    )
    next_values = next_values * (1.0 - dones)
    return np.minimum(next_values - values, 0.0)


def hybrid_advantage(a_gae, a_i, rng: np.random.Generator, beta1: float, beta2: float):
    """A_hybrid = A_GAE + beta1 * A_I + beta2 * N(0, 1), on raw advantages."""
    if beta1 < 0.0 or beta2 < 0.0:
        raise ContractViolation("advantage weights must be non-negative")
    a_gae = np.asarray(a_gae, dtype=np.float64)
    noise = rng.standard_normal(a_gae.shape) if beta2 > 0.0 else 0.0
    return a_gae + beta1 * np.asarray(a_i, dtype=np.float64) + beta2 * noise


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    adv = np.asarray(adv, dtype=np.float64)
    return (adv - adv.mean()) / (adv.std() + 1e-8)


# -- agents ------------------------------------------------------------------


@dataclass
class AgentBundle:
    name: str
    actor: GaussianPolicy
    critic: DenseNetwork
    actor_opt: Adam
    critic_opt: Adam
    human: HumanPolicy | None = None

    @classmethod
    def create(
        cls,
        name: str,
        obs_dim: int,
        action_dim: int,
        config,
        rng: np.random.Generator,
        human: HumanPolicy | None = None,
    ) -> "AgentBundle":
        actor = GaussianPolicy.create(
            obs_dim,
            action_dim,
            list(config.hidden),
            rng,
            init_log_sigma=config.init_log_sigma,
            activation=config.activation,
        )
        critic = DenseNetwork.create(
            [STATE_DIM, *config.hidden, 1], rng, hidden_activation=config.activation
        )
        return cls(
            name=name,
            actor=actor,
            critic=critic,
            actor_opt=Adam(actor.parameters(), lr=config.lr),
            critic_opt=Adam(critic.parameters(), lr=config.lr),
            human=human,
        )

    def value(self, states: np.ndarray) -> np.ndarray:
        return self.critic.forward(states)[..., 0]

    def save(self, fh) -> None:
        name = self.name.encode()
        fh.write(struct.pack("<H", len(name)))
        fh.write(name)
        self.actor.save(fh)
        save_network(self.critic, fh)

    @classmethod
    def load_into(cls, fh, config) -> "AgentBundle":
        (n,) = struct.unpack("<H", fh.read(2))
        name = fh.read(n).decode()
        actor = GaussianPolicy.load(fh)
        critic = load_network(fh)
        return cls(
            name=name,
            actor=actor,
            critic=critic,
            actor_opt=Adam(actor.parameters(), lr=config.lr),
            critic_opt=Adam(critic.parameters(), lr=config.lr),
        )


def save_checkpoint(path, agents: list[AgentBundle], config: Config) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        digest = config_digest(config).encode()
        fh.write(struct.pack("<H", len(digest)))
        fh.write(digest)
        fh.write(struct.pack("<H", len(agents)))
        for agent in agents:
            agent.save(fh)


def load_checkpoint(path, config: Config) -> list[AgentBundle]:
    with open(path, "rb") as fh:
        if fh.read(8) != CHECKPOINT_MAGIC:
            raise ContractViolation(f"{path} is not a trainer checkpoint")
        (n,) = struct.unpack("<H", fh.read(2))
        fh.read(n)  # stored config digest; informational
        (n_agents,) = struct.unpack("<H", fh.read(2))
        return [AgentBundle.load_into(fh, config.trainer) for _ in range(n_agents)]


# -- rollout collection ------------------------------------------------------


@dataclass
class RolloutBuffer:
    """Flattened (T*E) tensors for one collection sweep; shapes (T, E, ...)."""

    obs: dict  # agent name -> (T, E, obs_dim)
    actions: dict  # agent name -> (T, E, act_dim)
    log_probs: dict  # agent name -> (T, E)
    values: dict  # agent name -> (T, E)
    bootstrap: dict  # agent name -> (E,)
    states: np.ndarray  # (T, E, STATE_DIM)
    rewards: np.ndarray  # (T, E)
    dones: np.ndarray  # (T, E)
    episodes: list = field(default_factory=list)  # finished-episode summaries
    events: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return int(self.rewards.size)

    def flat(self, arr: np.ndarray) -> np.ndarray:
        return arr.reshape(self.size, *arr.shape[2:])


class _EpisodeTracker:
    def __init__(self):
        self.reward = 0.0
        self.steps = 0
        self.terms = None

    def add(self, outcome):
        self.reward += outcome.reward
        self.steps += 1
        if self.terms is None:
            self.terms = {k: 0.0 for k in outcome.terms}
        for k, v in outcome.terms.items():
            self.terms[k] += v


class EnvPool:
    """Parallel environments with per-env RNG streams and auto-reset.

    Thrower actions may come from the learning agent, the privileged scripted
    demonstrator, or an open-loop replay of its plan (see Trainer).
    """

    def __init__(
        self,
        config: Config,
        feature_fn,
        seed: int,
        scripted: bool = False,
        open_loop: bool = False,
    ):
        trainer = config.trainer
        self.config = config
        self.scripted = scripted or open_loop
        self.open_loop = open_loop
        seeds = np.random.SeedSequence(seed).spawn(trainer.n_envs)
        self.envs = []
        self.throwers = []
        self.replays = []
        self.trackers = []
        self.episode_summaries = []
        self.events = {"numeric-fault": 0, "infeasible-demo": 0}
        for ss in seeds:
            env = ThrowCatchEnv(
                config.world, config.vision, feature_fn=feature_fn, seed=_seed_of(ss)
            )
            self.envs.append(env)
            self.throwers.append(
                ScriptedThrower(config.world, config.demo) if self.scripted else None
            )
            self.replays.append(None)
            self.trackers.append(_EpisodeTracker())
        self.obs = [self._reset_env(i) for i in range(len(self.envs))]

    def _reset_env(self, i):
        env = self.envs[i]
        for _ in range(64):
            obs = env.reset()
            if not self.scripted:
                return obs
            try:
                if self.open_loop:
                    self.replays[i] = _plan_open_loop(env, self.config)
                else:
                    self.throwers[i].start_episode(env)
                return obs
            except InfeasibleDemo:
                self.events["infeasible-demo"] += 1
                continue
        raise ContractViolation("no feasible demo target after 64 resets")

    def thrower_action(self, i: int) -> np.ndarray:
        if self.open_loop:
            replay = self.replays[i]
            step = self.envs[i].state.step_count
            idx = min(step, len(replay) - 1)
            return replay[idx]
        return self.throwers[i].action(self.envs[i])

    def step(self, i: int, a_throw: np.ndarray, a_catch: np.ndarray):
        env = self.envs[i]
        outcome, o_throw, o_catch, s = env.step(a_throw, a_catch)
        self.trackers[i].add(outcome)
        done = outcome.terminated
        if done:
            tracker = self.trackers[i]
            self.episode_summaries.append(
                {
                    "reward": tracker.reward,
                    "steps": tracker.steps,
                    "terms": {k: v / tracker.steps for k, v in tracker.terms.items()},
                    "hit": env.hit(),
                    "success": env.success(),
                    "failure_cause": outcome.failure_cause,
                }
            )
            if outcome.failure_cause == "numeric-fault":
                self.events["numeric-fault"] += 1
            self.trackers[i] = _EpisodeTracker()
            o_throw, o_catch, s = self._reset_env(i)
        self.obs[i] = (o_throw, o_catch, s)
        return outcome, done

    def drain_summaries(self) -> list:
        out = self.episode_summaries
        self.episode_summaries = []
        return out


def _seed_of(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1)[0] % 2**31)


def _plan_open_loop(env: ThrowCatchEnv, config: Config) -> list[np.ndarray]:
    """Precompute the demonstrator's action sequence for this episode, blind.

    The plan is executed in a shadow copy of the environment with nominal
    dynamics (no randomization), so the replayed actions carry no feedback
    about the actual episode's randomized parameters.
    """
    import copy

    shadow_world = copy.deepcopy(config.world)
    shadow_world.randomization.enabled = False
    shadow = ThrowCatchEnv(shadow_world, config.vision, feature_fn=zero_features, seed=0)
    shadow.reset()
    st = copy.deepcopy(env.state)
    st.rand.stiffness_scale = 1.0
    st.rand.damping_scale = 1.0
    st.rand.act_bias = np.zeros(8)
    shadow.state = st
    thrower = ScriptedThrower(shadow_world, config.demo)
    thrower.start_episode(shadow)
    hold = np.array([0.0, 0.0, 0.0, -1.0])
    actions = []
    for _ in range(config.world.max_control_steps):
        a = thrower.action(shadow)
        actions.append(a)
        outcome, *_ = shadow.step(a, hold)
        if outcome.terminated or (thrower.released and len(actions) > 6):
            break
    # after release the replay just damps the arm toward rest
    return actions


def collect_rollouts(
    agents: dict,
    pool: EnvPool,
    t_max: int,
    rng: np.random.Generator,
) -> RolloutBuffer:
    """Run ``t_max`` steps in every pooled env, sampling from the agents."""
    if t_max < 1:
        raise ContractViolation("rollout length must be >= 1")
    n_envs = len(pool.envs)
    names = list(agents)
    obs_dims = {name: agents[name].actor.mean_net.in_dim for name in names}
    act_dims = {name: agents[name].actor.action_dim for name in names}
    buf_obs = {n: np.zeros((t_max, n_envs, obs_dims[n])) for n in names}
    buf_act = {n: np.zeros((t_max, n_envs, act_dims[n])) for n in names}
    buf_logp = {n: np.zeros((t_max, n_envs)) for n in names}
    buf_val = {n: np.zeros((t_max, n_envs)) for n in names}
    states = np.zeros((t_max, n_envs, STATE_DIM))
    rewards = np.zeros((t_max, n_envs))
    dones = np.zeros((t_max, n_envs))

    for t in range(t_max):
        for i in range(n_envs):
            o_throw, o_catch, s = pool.obs[i]
            local = {"throw": o_throw, "catch": o_catch, "joint": np.concatenate([o_throw, o_catch])}
            states[t, i] = s
            acts = {}
            for name in names:
                agent = agents[name]
                obs = local[name]
                action, logp = agent.actor.sample(obs, rng)
                buf_obs[name][t, i] = obs
                buf_act[name][t, i] = action
                buf_logp[name][t, i] = logp
                buf_val[name][t, i] = agent.value(s)
                acts[name] = action
            if "joint" in acts:
                a_throw, a_catch = acts["joint"][:4], acts["joint"][4:]
            else:
                a_catch = acts["catch"]
                a_throw = acts["throw"] if "throw" in acts else pool.thrower_action(i)
            outcome, done = pool.step(i, a_throw, a_catch)
            rewards[t, i] = outcome.reward
            dones[t, i] = float(done)

    bootstrap = {}
    final_states = np.stack([pool.obs[i][2] for i in range(n_envs)])
    for name in names:
        bootstrap[name] = agents[name].value(final_states)
    return RolloutBuffer(
        obs=buf_obs,
        actions=buf_act,
        log_probs=buf_logp,
        values=buf_val,
        bootstrap=bootstrap,
        states=states,
        rewards=rewards,
        dones=dones,
        episodes=pool.drain_summaries(),
        events=dict(pool.events),
    )


# -- updates -----------------------------------------------------------------


def policy_objective(
    actor: GaussianPolicy,
    batch: dict,
    config,
    lambda_reg: float = 0.0,
    sigma_star: float | None = None,
):
    """Policy loss (minimized) and its gradients w.r.t. actor parameters.

    Loss = -(1 - lambda) * (surrogate + c_e * entropy) + lambda * KL, the
    policy part of Eq. 13; the clipped-surrogate gradient flows through the
    unclipped branch exactly when it is the active minimum.  Returns
    ``(loss, grads, diag)``; grads match ``actor.parameters()`` order.
    """
    if not 0.0 <= lambda_reg <= 1.0:
        raise ContractViolation("lambda_reg must lie in [0, 1]")
    obs = batch["obs"]
    actions = batch["actions"]
    logp_old = batch["log_probs"]
    adv = batch["advantages"]
    n = len(obs)
    eps = config.clip_epsilon

    mu = actor.mean_net.forward(obs)
    sigma = actor.sigma()
    logp = gaussian_log_prob(mu, sigma, actions)
    ratio = np.exp(logp - logp_old)
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps)
    surrogate = float(np.mean(np.minimum(ratio * adv, clipped * adv)))
    entropy = float(np.mean(gaussian_entropy(np.broadcast_to(sigma, mu.shape))))

    gate = np.where(adv >= 0.0, ratio <= 1.0 + eps, ratio >= 1.0 - eps)
    g_logp = -(gate * ratio * adv) / n  # d(-surrogate)/d logp
    d = actions - mu
    inv_var = 1.0 / sigma**2
    dmu = (1.0 - lambda_reg) * g_logp[:, None] * d * inv_var
    dlogsig = (1.0 - lambda_reg) * np.sum(g_logp[:, None] * (d * d * inv_var - 1.0), axis=0)
    dlogsig = dlogsig - (1.0 - lambda_reg) * config.entropy_coef  # maximize entropy

    kl_mean = 0.0
    if lambda_reg > 0.0:
        if sigma_star is None or "mu_star" not in batch:
            raise ContractViolation("regularized update needs the human reference")
        mu_star = batch["mu_star"]
        sig_star = np.full_like(sigma, sigma_star)
        kl = gaussian_kl(
            mu_star, np.broadcast_to(sig_star, mu.shape), mu, np.broadcast_to(sigma, mu.shape)
        )
        kl_mean = float(np.mean(kl))
        dkl_mu, dkl_logsig = gaussian_kl_grads(mu_star, sig_star, mu, sigma)
        dmu = dmu + lambda_reg * dkl_mu / n
        dlogsig = dlogsig + lambda_reg * np.sum(dkl_logsig, axis=0) / n

    loss = -(1.0 - lambda_reg) * (surrogate + config.entropy_coef * entropy)
    loss += lambda_reg * kl_mean
    grads, _ = actor.mean_net.backward(dmu)
    grads = grads + [dlogsig]
    diag = {
        "surrogate": surrogate,
        "entropy": entropy,
        "kl": kl_mean,
        "ratio_mean": float(np.mean(ratio)),
        "clip_fraction": float(np.mean((ratio < 1.0 - eps) | (ratio > 1.0 + eps))),
    }
    return loss, grads, diag


def critic_objective(critic: DenseNetwork, states, returns, value_coef: float):
    """Value regression loss (minimized) and its parameter gradients."""
    n = len(states)
    values = critic.forward(states)[:, 0]
    value_err = values - returns
    loss = value_coef * float(np.mean(value_err**2))
    grads, _ = critic.backward(value_coef * 2.0 * value_err[:, None] / n)
    return loss, grads


def ppo_update(
    agent: AgentBundle,
    batch: dict,
    config,
    lambda_reg: float = 0.0,
    sigma_star: float | None = None,
) -> dict:
    """One clipped-surrogate minibatch update; returns loss diagnostics.

    With ``lambda_reg`` > 0 the policy objective becomes Eq. 13's mixture
    (1 - lambda) * J_ppo - lambda * KL(pi_star || pi); the critic loss is
    unaffected.  ``batch`` holds obs, actions, old log-probs, normalized
    advantages, returns, states, and (if regularized) the human means mu_star.
    """
    policy_loss, actor_grads, diag = policy_objective(
        agent.actor, batch, config, lambda_reg, sigma_star
    )
    value_loss, critic_grads = critic_objective(
        agent.critic, batch["states"], batch["returns"], config.value_coef
    )
    diag["value_loss"] = value_loss / config.value_coef if config.value_coef else value_loss
    diag["loss"] = policy_loss + value_loss
    diag["skipped"] = False
    if not np.isfinite(diag["loss"]):
        diag["skipped"] = True
        return diag

    clip_grad_norm(actor_grads, config.grad_clip)
    agent.actor_opt.step(actor_grads)
    agent.actor.clamp_log_sigma()
    clip_grad_norm(critic_grads, config.grad_clip)
    agent.critic_opt.step(critic_grads)
    return diag


def thrower_objective(
    agent: AgentBundle,
    batch: dict,
    human_policy: HumanPolicy,
    lambda_reg: float,
    config,
) -> dict:
    """Eq. 13 update: (1 - lambda) * J_ppo - lambda * KL(pi_star || pi_throw)."""
    if not 0.0 <= lambda_reg <= 1.0:
        raise ContractViolation("lambda_reg must lie in [0, 1]")
    if lambda_reg > 0.0:
        o_star = o_star_from_state(batch["states"])
        batch = dict(batch, mu_star=human_policy.mean(o_star))
        return ppo_update(agent, batch, config, lambda_reg, human_policy.sigma)
    return ppo_update(agent, batch, config)


# -- trainer -----------------------------------------------------------------


class Trainer:
    """Algorithm-style training loop with metrics log and checkpoints.

    ``feature_fn`` overrides the visual encoder (tests use the oracle or zero
    features); otherwise a pretrained encoder is required.  The human policy
    is required whenever the thrower trains with lambda_reg > 0.
    """

    def __init__(
        self,
        config: Config,
        workdir=None,
        encoder=None,
        human_policy: HumanPolicy | None = None,
        feature_fn=None,
    ):
        trainer = config.trainer
        self.config = config
        self.workdir = None if workdir is None else Path(workdir)
        if self.workdir is not None:
            os.makedirs(self.workdir, exist_ok=True)
        self.human_policy = human_policy
        self.ablate = trainer.ablate
        self.lambda_reg = 0.0 if self.ablate == "no-human-reg" else trainer.lambda_reg
        self.beta1 = 0.0 if self.ablate == "no-hybrid" else trainer.beta1
        self.beta2 = 0.0 if self.ablate == "no-hybrid" else trainer.beta2
        self.scripted = trainer.scripted_thrower
        self.open_loop = self.ablate == "open-loop"

        if feature_fn is None:
            if encoder is None:
                raise ContractViolation(
                    "training needs a pretrained encoder (or an explicit feature_fn)"
                )
            pool_factor = config.vision.pool
            feature_fn = lambda frame: encoder.encode_frame(frame, pool_factor)
        trains_thrower = not (self.scripted or self.open_loop)
        if (
            trains_thrower
            and self.lambda_reg > 0.0
            and "throw" in self._agent_names()
            and human_policy is None
        ):
            raise ContractViolation(
                "training needs the pretrained human policy (or the no-human-reg flag)"
            )

        self.rng = np.random.default_rng(config.seed)
        agent_rng = np.random.default_rng(
            _seed_of(np.random.SeedSequence(config.seed).spawn(1)[0])
        )
        self.pool = EnvPool(
            config,
            feature_fn,
            seed=config.seed + 1,
            scripted=self.scripted,
            open_loop=self.open_loop,
        )
        self.agents = {}
        for name in self._agent_names():
            obs_dim = {
                "throw": O_THROW_DIM,
                "catch": O_CATCH_DIM,
                "joint": O_THROW_DIM + O_CATCH_DIM,
            }[name]
            act_dim = 8 if name == "joint" else 4
            self.agents[name] = AgentBundle.create(
                name, obs_dim, act_dim, trainer, agent_rng,
                human=human_policy if name == "throw" else None,
            )
        self.metrics: list[dict] = []
        self.iteration = 0

    def _agent_names(self) -> list[str]:
        if self.ablate == "no-marl":
            return ["joint"]
        if self.scripted or self.open_loop:
            return ["catch"]
        return ["throw", "catch"]

    # -- one iteration -----------------------------------------------------

    def train_iteration(self) -> dict:
        trainer = self.config.trainer
        t0 = time.monotonic()
        buf = collect_rollouts(self.agents, self.pool, trainer.t_max, self.rng)
        update_diags = {name: [] for name in self.agents}
        batches = {}
        for name, agent in self.agents.items():
            a_gae, returns = compute_gae(
                buf.rewards,
                buf.values[name],
                buf.dones,
                buf.bootstrap[name],
                trainer.gamma,
                trainer.gae_lambda,
            )
            a_i = internal_advantage(buf.values[name], buf.dones, buf.bootstrap[name])
            a_hyb = hybrid_advantage(a_gae, a_i, self.rng, self.beta1, self.beta2)
            batches[name] = {
                "obs": buf.flat(buf.obs[name]),
                "actions": buf.flat(buf.actions[name]),
                "log_probs": buf.flat(buf.log_probs[name]),
                "advantages": normalize_advantages(buf.flat(a_hyb)),
                "returns": buf.flat(returns),
                "states": buf.flat(buf.states),
            }
        n = buf.size
        batch_size = min(trainer.minibatch_size, n)
        for _ in range(trainer.epochs):
            perm = self.rng.permutation(n)
            for start in range(0, n, batch_size):
                idx = perm[start : start + batch_size]
                for name, agent in self.agents.items():
                    mb = {k: v[idx] for k, v in batches[name].items()}
                    if name == "throw" and self.lambda_reg > 0.0:
                        diag = thrower_objective(
                            agent, mb, self.human_policy, self.lambda_reg, trainer
                        )
                    else:
                        diag = ppo_update(agent, mb, trainer)
                    update_diags[name].append(diag)

        record = self._metrics_record(buf, update_diags, time.monotonic() - t0)
        self.metrics.append(record)
        self.iteration += 1
        if self.workdir is not None:
            self._append_metrics(record)
            if (
                self.iteration % trainer.checkpoint_every == 0
                or self.iteration >= trainer.iterations
            ):
                self.checkpoint()
        return record

    def _metrics_record(self, buf: RolloutBuffer, diags: dict, wall: float) -> dict:
        episodes = buf.episodes
        record = {
            "iteration": self.iteration,
            "wall_time": wall,
            "reward_mean": float(buf.rewards.mean()),
            "episodes": len(episodes),
            "hit_rate": float(np.mean([e["hit"] for e in episodes])) if episodes else 0.0,
            "success_rate": (
                float(np.mean([e["success"] for e in episodes])) if episodes else 0.0
            ),
            "events": buf.events,
        }
        if episodes:
            keys = episodes[0]["terms"]
            record["reward_terms"] = {
                k: float(np.mean([e["terms"][k] for e in episodes])) for k in keys
            }
        for name, dlist in diags.items():
            record[name] = {
                "surrogate": float(np.mean([d["surrogate"] for d in dlist])),
                "value_loss": float(np.mean([d["value_loss"] for d in dlist])),
                "entropy": float(np.mean([d["entropy"] for d in dlist])),
                "clip_fraction": float(np.mean([d["clip_fraction"] for d in dlist])),
                "kl": float(np.mean([d["kl"] for d in dlist])),
                "skipped": int(sum(d["skipped"] for d in dlist)),
            }
        return record

    def _append_metrics(self, record: dict) -> None:
        path = self.workdir / "metrics.jsonl"
        with open(path, "a") as fh:
            fh.write(json.dumps(record) + "\n")

    def checkpoint(self) -> None:
        path = self.workdir / f"checkpoint_{self.iteration:05d}.bin"
        save_checkpoint(path, list(self.agents.values()), self.config)
        (self.workdir / "trainer_config.json").write_text(
            json.dumps(config_to_dict(self.config), indent=2) + "\n"
        )

    def train(self, iterations: int | None = None) -> list[dict]:
        target = self.config.trainer.iterations if iterations is None else iterations
        while self.iteration < target:
            self.train_iteration()
        return self.metrics
