"""Goal-conditioned off-policy learner operating in latent space.

The actor maps (latent state, latent goal) to a bounded action; twin critics
score (state, goal, action) with min-over-heads targets and slowly tracking
target copies. Rewards are sparse latent-proximity indicators that fire at
most once per episode. An optional truncated-quantile critic can replace the
twin scalar heads.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn


class AgentError(ValueError):
    pass


def sparse_latent_reward(z_x, z_g, delta_latent: float, already_rewarded: bool) -> int:
    """1 iff the encoded state is strictly within delta of the latent goal and
    the episode has not been rewarded yet."""
    z_x = np.asarray(z_x, dtype=np.float64)
    z_g = np.asarray(z_g, dtype=np.float64)
    if z_x.shape != z_g.shape:
        raise AgentError("latent state and goal dimensionality differ")
    if already_rewarded:
        return 0
    return int(np.linalg.norm(z_x - z_g) < delta_latent)


def _mlp(sizes, out_dim):
    layers = []
    feat = sizes[0]
    for width in sizes[1:]:
        layers += [nn.Linear(feat, width), nn.ReLU()]
        feat = width
    layers.append(nn.Linear(feat, out_dim))
    return nn.Sequential(*layers)


class Actor(nn.Module):
    def __init__(self, latent_dim, action_dim, hidden=(512, 512, 512)):
        super().__init__()
        self.net = _mlp((2 * latent_dim, *hidden), action_dim)

    def forward(self, z, z_g):
        return torch.tanh(self.net(torch.cat([z, z_g], dim=-1)))


class Critic(nn.Module):
    """Scalar Q head; `quantiles` > 1 switches to a quantile critic."""

    def __init__(self, latent_dim, action_dim, hidden=(512, 512, 512), quantiles=1):
        super().__init__()
        self.quantiles = quantiles
        self.net = _mlp((2 * latent_dim + action_dim, *hidden), quantiles)

    def forward(self, z, z_g, a):
        out = self.net(torch.cat([z, z_g, a], dim=-1))
        return out.squeeze(-1) if self.quantiles == 1 else out


@dataclass
class LearnerConfig:
    gamma: float = 0.98
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    action_l2_reg: float = 0.1
    noise_std: float = 0.1          # exploration noise, also the spec ceiling
    target_update_rate: float = 0.05
    hidden: tuple = (512, 512, 512)
    critic_type: str = "twin"       # "twin" | "tqc"
    tqc_quantiles: int = 25
    tqc_drop_per_net: int = 2

    def __post_init__(self):
        if self.critic_type not in ("twin", "tqc"):
            raise AgentError(f"unknown critic_type {self.critic_type!r}")
        if not (0.0 <= self.noise_std <= 0.1):
            raise AgentError("noise_std must lie in [0, 0.1]")


class PolicyCritic(nn.Module):
    """Actor, twin critics, and their target shadows plus optimizers."""

    def __init__(self, latent_dim, action_dim, cfg: LearnerConfig | None = None):
        super().__init__()
        self.cfg = cfg or LearnerConfig()
        q = self.cfg.tqc_quantiles if self.cfg.critic_type == "tqc" else 1
        self.actor = Actor(latent_dim, action_dim, self.cfg.hidden)
        self.q1 = Critic(latent_dim, action_dim, self.cfg.hidden, q)
        self.q2 = Critic(latent_dim, action_dim, self.cfg.hidden, q)
        self.actor_target = copy.deepcopy(self.actor)
        self.q1_target = copy.deepcopy(self.q1)
        self.q2_target = copy.deepcopy(self.q2)
        for net in (self.actor_target, self.q1_target, self.q2_target):
            for p in net.parameters():
                p.requires_grad_(False)
        self.actor_opt = torch.optim.Adam(self.actor.parameters(), lr=self.cfg.actor_lr)
        self.critic_opt = torch.optim.Adam(
            list(self.q1.parameters()) + list(self.q2.parameters()), lr=self.cfg.critic_lr)
        self.latent_dim = latent_dim
        self.action_dim = action_dim


def act(policy: PolicyCritic, z, z_g, explore: bool, rng: np.random.Generator | None = None
        ) -> np.ndarray:
    """Action in [-1, 1]^k: the deterministic actor mean, Gaussian-perturbed
    and re-clipped when exploring."""
    zt = torch.as_tensor(np.asarray(z, dtype=np.float32)).reshape(1, -1)
    gt = torch.as_tensor(np.asarray(z_g, dtype=np.float32)).reshape(1, -1)
    with torch.no_grad():
        a = policy.actor(zt, gt).numpy()[0].astype(np.float64)
    if explore:
        if rng is None:
            raise AgentError("exploration requires an rng")
        a = a + rng.normal(0.0, policy.cfg.noise_std, size=a.shape)
    return np.clip(a, -1.0, 1.0)


def soft_update(target: nn.Module, live: nn.Module, rate: float) -> None:
    """target <- (1 - rate) * target + rate * live."""
    with torch.no_grad():
        for tp, lp in zip(target.parameters(), live.parameters()):
            tp.mul_(1.0 - rate).add_(lp, alpha=rate)


def critic_loss(policy: PolicyCritic, batch: dict) -> torch.Tensor:
    """TD loss toward r + gamma * (1 - done) * min over twin target heads."""
    cfg = policy.cfg
    with torch.no_grad():
        a_next = policy.actor_target(batch["z_next"], batch["z_goal"])
        if cfg.critic_type == "twin":
            q_next = torch.minimum(
                policy.q1_target(batch["z_next"], batch["z_goal"], a_next),
                policy.q2_target(batch["z_next"], batch["z_goal"], a_next))
            target = batch["reward"] + cfg.gamma * (1.0 - batch["done"]) * q_next
        else:
            atoms = torch.cat([
                policy.q1_target(batch["z_next"], batch["z_goal"], a_next),
                policy.q2_target(batch["z_next"], batch["z_goal"], a_next)], dim=-1)
            atoms, _ = torch.sort(atoms, dim=-1)
            keep = atoms.shape[-1] - 2 * cfg.tqc_drop_per_net
            atoms = atoms[..., :keep]
            target = (batch["reward"].unsqueeze(-1)
                      + cfg.gamma * (1.0 - batch["done"]).unsqueeze(-1) * atoms)
    if cfg.critic_type == "twin":
        loss = 0.0
        for qnet in (policy.q1, policy.q2):
            q = qnet(batch["z"], batch["z_goal"], batch["action"])
            loss = loss + ((q - target) ** 2).mean()
        return loss
    loss = 0.0
    n_q = cfg.tqc_quantiles
    taus = (torch.arange(n_q, dtype=target.dtype) + 0.5) / n_q
    for qnet in (policy.q1, policy.q2):
        q = qnet(batch["z"], batch["z_goal"], batch["action"])  # (B, n_q)
        diff = target.unsqueeze(1) - q.unsqueeze(2)              # (B, n_q, keep)
        huber = torch.where(diff.abs() <= 1.0, 0.5 * diff ** 2, diff.abs() - 0.5)
        loss = loss + (torch.abs(taus[None, :, None] - (diff < 0).to(diff.dtype))
                       * huber).mean()
    return loss


def actor_loss(policy: PolicyCritic, batch: dict) -> torch.Tensor:
    """Deterministic policy-gradient objective with action magnitude penalty."""
    a = policy.actor(batch["z"], batch["z_goal"])
    q = policy.q1(batch["z"], batch["z_goal"], a)
    if policy.cfg.critic_type == "tqc":
        q = q.mean(dim=-1)
    return (-q).mean() + policy.cfg.action_l2_reg * (a ** 2).mean()


def learner_update(policy: PolicyCritic, batch: dict) -> dict:
    """One critic step, one actor step, then soft target updates."""
    if batch["z"].shape[0] == 0:
        raise AgentError("empty batch")
    policy.critic_opt.zero_grad(set_to_none=True)
    c_loss = critic_loss(policy, batch)
    c_loss.backward()
    policy.critic_opt.step()

    policy.actor_opt.zero_grad(set_to_none=True)
    a_loss = actor_loss(policy, batch)
    a_loss.backward()
    policy.actor_opt.step()

    rate = policy.cfg.target_update_rate
    soft_update(policy.actor_target, policy.actor, rate)
    soft_update(policy.q1_target, policy.q1, rate)
    soft_update(policy.q2_target, policy.q2, rate)
    with torch.no_grad():
        q = policy.q1(batch["z"], batch["z_goal"], batch["action"])
        if policy.cfg.critic_type == "tqc":
            q = q.mean(dim=-1)
    return {"critic_loss": float(c_loss.detach()), "actor_loss": float(a_loss.detach()),
            "mean_q": float(q.mean())}


class ReplayBuffer:
    """FIFO ring over latent transitions with one writer and snapshot reads.

    Each slot also keeps the index of the raw next observation inside the
    reached-state buffer, so diagnostics can trace a transition back to
    pixels without storing images twice.
    """

    def __init__(self, capacity: int, latent_dim: int, action_dim: int):
        self.capacity = capacity
        self.z = np.zeros((capacity, latent_dim), dtype=np.float32)
        self.action = np.zeros((capacity, action_dim), dtype=np.float32)
        self.z_next = np.zeros((capacity, latent_dim), dtype=np.float32)
        self.z_goal = np.zeros((capacity, latent_dim), dtype=np.float32)
        self.reward = np.zeros(capacity, dtype=np.float32)
        self.done = np.zeros(capacity, dtype=np.float32)
        self.obs_ref = np.zeros(capacity, dtype=np.int64)
        self.size = 0
        self._head = 0

    def add(self, z, action, z_next, z_goal, reward, done, obs_ref) -> None:
        i = self._head
        self.z[i] = z
        self.action[i] = action
        self.z_next[i] = z_next
        self.z_goal[i] = z_goal
        self.reward[i] = reward
        self.done[i] = float(done)
        self.obs_ref[i] = obs_ref
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        if self.size == 0:
            raise AgentError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return {
            "z": torch.from_numpy(self.z[idx]),
            "action": torch.from_numpy(self.action[idx]),
            "z_next": torch.from_numpy(self.z_next[idx]),
            "z_goal": torch.from_numpy(self.z_goal[idx]),
            "reward": torch.from_numpy(self.reward[idx]),
            "done": torch.from_numpy(self.done[idx]),
        }

    def state_arrays(self) -> dict:
        return {"z": self.z, "action": self.action, "z_next": self.z_next,
                "z_goal": self.z_goal, "reward": self.reward, "done": self.done,
                "obs_ref": self.obs_ref,
                "size": np.int64(self.size), "head": np.int64(self._head)}

    def load_state_arrays(self, state: dict) -> None:
        for name in ("z", "action", "z_next", "z_goal", "reward", "done", "obs_ref"):
            getattr(self, name)[:] = state[name]
        self.size = int(state["size"])
        self._head = int(state["head"])
