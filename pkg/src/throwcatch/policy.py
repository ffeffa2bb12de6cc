"""Diagonal Gaussian policies: sampling, log-densities, closed-form KL."""

from __future__ import annotations

import struct

import numpy as np

from .errors import ContractViolation
from .nn import DenseNetwork, load_network, save_network

LOG_SIGMA_MIN = -5.0
LOG_SIGMA_MAX = 2.0
POLICY_MAGIC = b"THROWPOL"

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


def gaussian_log_prob(mu: np.ndarray, sigma: np.ndarray, action: np.ndarray) -> np.ndarray:
    """Diagonal-Gaussian log density, summed over the action dimensions."""
    z = (action - mu) / sigma
    return np.sum(-np.log(sigma) - _HALF_LOG_2PI - 0.5 * z * z, axis=-1)


def gaussian_kl(
    mu_ref: np.ndarray,
    sigma_ref: np.ndarray,
    mu: np.ndarray,
    sigma: np.ndarray,
) -> np.ndarray:
    """KL(ref || current) for diagonal Gaussians, summed over dimensions.

    Per dimension: log(sigma/sigma_ref) + (sigma_ref^2 + (mu_ref-mu)^2)
    / (2 sigma^2) - 1/2.
    """
    mu_ref, sigma_ref = np.asarray(mu_ref, float), np.asarray(sigma_ref, float)
    mu, sigma = np.asarray(mu, float), np.asarray(sigma, float)
    if mu_ref.shape != mu.shape or sigma_ref.shape != sigma.shape:
        raise ContractViolation("KL operand shapes disagree")
    if np.any(sigma_ref <= 0.0) or np.any(sigma <= 0.0):
        raise ContractViolation("KL requires positive sigmas")
    d = mu_ref - mu
    terms = np.log(sigma / sigma_ref) + (sigma_ref**2 + d * d) / (2.0 * sigma**2) - 0.5
    return np.sum(terms, axis=-1)


def gaussian_kl_grads(mu_ref, sigma_ref, mu, sigma):
    """d KL / d mu and d KL / d log(sigma) of the current distribution."""
    d = np.asarray(mu, float) - np.asarray(mu_ref, float)
    dmu = d / sigma**2
    dlog_sigma = 1.0 - (sigma_ref**2 + d * d) / sigma**2
    return dmu, dlog_sigma


def gaussian_entropy(sigma: np.ndarray) -> np.ndarray:
    return np.sum(np.log(sigma) + 0.5 + _HALF_LOG_2PI, axis=-1)


class GaussianPolicy:
    """State-dependent mean network plus a learnable state-independent log-sigma."""

    def __init__(self, mean_net: DenseNetwork, log_sigma: np.ndarray | None = None):
        self.mean_net = mean_net
        if log_sigma is None:
            log_sigma = np.zeros(mean_net.out_dim)
        self.log_sigma = np.clip(
            np.asarray(log_sigma, dtype=np.float64), LOG_SIGMA_MIN, LOG_SIGMA_MAX
        )
        if self.log_sigma.shape != (mean_net.out_dim,):
            raise ContractViolation("log_sigma length must match action dim")

    @classmethod
    def create(
        cls,
        obs_dim: int,
        action_dim: int,
        hidden: list[int],
        rng: np.random.Generator,
        init_log_sigma: float = 0.0,
        activation: str = "elu",
    ) -> "GaussianPolicy":
        net = DenseNetwork.create(
            [obs_dim, *hidden, action_dim],
            rng,
            hidden_activation=activation,
            final_scale=0.01,
        )
        return cls(net, np.full(action_dim, init_log_sigma))

    @property
    def action_dim(self) -> int:
        return self.mean_net.out_dim

    def sigma(self) -> np.ndarray:
        return np.exp(np.clip(self.log_sigma, LOG_SIGMA_MIN, LOG_SIGMA_MAX))

    def clamp_log_sigma(self) -> None:
        np.clip(self.log_sigma, LOG_SIGMA_MIN, LOG_SIGMA_MAX, out=self.log_sigma)

    def mean(self, obs: np.ndarray) -> np.ndarray:
        return self.mean_net.forward(obs)

    def sample(self, obs: np.ndarray, rng: np.random.Generator):
        """Draw action = mu + sigma * z and return (action, log_prob)."""
        mu = self.mean_net.forward(obs)
        sigma = self.sigma()
        z = rng.standard_normal(mu.shape)
        action = mu + sigma * z
        return action, gaussian_log_prob(mu, sigma, action)

    def log_prob(self, obs: np.ndarray, action: np.ndarray) -> np.ndarray:
        return gaussian_log_prob(self.mean_net.forward(obs), self.sigma(), action)

    def parameters(self) -> list[np.ndarray]:
        return self.mean_net.parameters() + [self.log_sigma]

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.mean_net.copy(), self.log_sigma.copy())

    def save(self, fh) -> None:
        fh.write(POLICY_MAGIC)
        save_network(self.mean_net, fh)
        fh.write(struct.pack("<I", self.action_dim))
        fh.write(self.log_sigma.astype("<f8").tobytes())

    @classmethod
    def load(cls, fh) -> "GaussianPolicy":
        if fh.read(len(POLICY_MAGIC)) != POLICY_MAGIC:
            raise ContractViolation("bad policy magic")
        net = load_network(fh)
        (n,) = struct.unpack("<I", fh.read(4))
        log_sigma = np.frombuffer(fh.read(8 * n), dtype="<f8").copy()
        return cls(net, log_sigma)
