"""Latent goal generation.

Base behavior samples goals straight from the N(0, I) prior. The resampling
strategies draw a candidate set from the prior and pick one candidate using
either a novelty signal (KDE density over visited latent codes) or a learned
success predictor (goal difficulty).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

GOAL_STRATEGIES = ("PRIOR", "MEGA", "LGE", "GOID", "SVGG")


class GoalError(ValueError):
    pass


def sample_prior_goal(dim: int, rng: np.random.Generator) -> np.ndarray:
    """One latent goal from the standard normal prior."""
    return rng.standard_normal(dim)


def sample_candidates(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Candidate goal set C of n prior draws, shape (n, dim)."""
    return rng.standard_normal((n, dim))


# ---------------------------------------------------------------------------
# Kernel density model over stored latent codes


@dataclass
class KdeModel:
    """Isotropic-Gaussian mixture over support latent codes (RBF bandwidth)."""

    support: np.ndarray
    bandwidth: float = 0.1

    def __post_init__(self):
        self.support = np.atleast_2d(np.asarray(self.support, dtype=np.float64))
        if self.support.size == 0:
            raise GoalError("KDE needs at least one support point")
        if self.bandwidth <= 0:
            raise GoalError("bandwidth must be positive")

    def log_density(self, z) -> np.ndarray:
        """log (1/K) sum_k N(z | s_k, sigma^2 I), stable in log space."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        k, d = self.support.shape
        diff = z[:, None, :] - self.support[None, :, :]
        sq = (diff * diff).sum(axis=-1)
        log_norm = -0.5 * d * math.log(2.0 * math.pi * self.bandwidth ** 2)
        log_kernels = log_norm - sq / (2.0 * self.bandwidth ** 2)
        m = log_kernels.max(axis=1, keepdims=True)
        return (m[:, 0] + np.log(np.exp(log_kernels - m).sum(axis=1))) - math.log(k)

    def density(self, z) -> np.ndarray:
        return np.exp(self.log_density(z))


def kde_density(model: KdeModel, z) -> float:
    """Mixture density at a single latent code."""
    return float(model.density(np.atleast_2d(z))[0])


# ---------------------------------------------------------------------------
# Candidate selectors


def _as_candidates(candidates) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    if arr.size == 0:
        raise GoalError("candidate set is empty")
    if not np.all(np.isfinite(arr)):
        raise GoalError("candidate set contains non-finite codes")
    return arr


def mega_select(candidates, kde: KdeModel) -> np.ndarray:
    """Candidate with minimal estimated density; ties go to the lowest index."""
    cand = _as_candidates(candidates)
    dens = kde.log_density(cand)
    return cand[int(np.argmin(dens))].copy()


def lge_select(candidates, kde: KdeModel, p: float, rng: np.random.Generator) -> np.ndarray:
    """Geometric sampling over density ranks, renormalized on the candidates.

    Rank 1 is the lowest-density candidate; rank r carries mass (1-p)^(r-1) p
    before renormalization, so p -> 1 degenerates to the minimum-density pick.
    """
    if not (0.0 < p < 1.0):
        raise GoalError(f"geometric parameter p must lie in (0, 1), got {p}")
    cand = _as_candidates(candidates)
    order = np.argsort(kde.log_density(cand), kind="stable")  # ascending density
    ranks = np.empty(len(cand), dtype=np.int64)
    ranks[order] = np.arange(1, len(cand) + 1)
    probs = (1.0 - p) ** (ranks - 1) * p
    probs = probs / probs.sum()
    return cand[int(rng.choice(len(cand), p=probs))].copy()


def goid_select(candidates, predictor, p_min: float = 0.3, p_max: float = 0.7,
                rng: np.random.Generator | None = None) -> np.ndarray:
    """Uniform draw over candidates of intermediate predicted difficulty.

    The band is strict: p_min < D(z) < p_max. When no candidate falls inside,
    falls back to the candidate whose prediction is closest to 0.5 (lowest
    index on ties, with distances rounded to 12 decimals so symmetric pairs
    like 0.05/0.95 tie despite float representation) so goal generation
    never stalls.
    """
    cand = _as_candidates(candidates)
    scores = predict_success(predictor, cand)
    inside = np.where((scores > p_min) & (scores < p_max))[0]
    if inside.size == 0:
        return cand[int(np.argmin(np.round(np.abs(scores - 0.5), 12)))].copy()
    if rng is None:
        raise GoalError("goid_select requires an rng when the band is non-empty")
    return cand[int(rng.choice(inside))].copy()


def svgg_select(candidates, predictor, rng: np.random.Generator) -> np.ndarray:
    """Difficulty-shaped categorical draw with weights exp(f22(D(z))).

    f22 is the Beta(2, 2) density 6 x (1 - x), peaking at D = 1/2, so goals
    the agent half-masters are emphasized smoothly rather than filtered.
    """
    cand = _as_candidates(candidates)
    scores = predict_success(predictor, cand)
    logits = 6.0 * scores * (1.0 - scores)
    weights = np.exp(logits - logits.max())
    probs = weights / weights.sum()
    return cand[int(rng.choice(len(cand), p=probs))].copy()


# ---------------------------------------------------------------------------
# Success predictor


class SuccessPredictor(nn.Module):
    """D: latent goal -> predicted success probability in [0, 1]."""

    def __init__(self, latent_dim: int, hidden=(64, 64), lr: float = 1e-3):
        super().__init__()
        layers = []
        feat = latent_dim
        for width in hidden:
            layers += [nn.Linear(feat, width), nn.ReLU()]
            feat = width
        layers.append(nn.Linear(feat, 1))
        self.net = nn.Sequential(*layers)
        self.opt = torch.optim.Adam(self.parameters(), lr=lr)

    def forward(self, z):
        return torch.sigmoid(self.net(z)).squeeze(-1)


def predict_success(predictor: SuccessPredictor, z) -> np.ndarray:
    zt = torch.as_tensor(np.atleast_2d(np.asarray(z, dtype=np.float32)))
    with torch.no_grad():
        return predictor(zt).double().numpy()


def bce_loss(predictor: SuccessPredictor, z: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    probs = predictor(z).clamp(1e-7, 1.0 - 1e-7)
    return -(labels * torch.log(probs) + (1.0 - labels) * torch.log(1.0 - probs)).mean()


def train_success_predictor(predictor: SuccessPredictor, history,
                            rng: np.random.Generator, steps: int = 100,
                            batch_size: int = 100) -> float:
    """Fit D on (latent goal, success) pairs from recent episodes.

    Minibatch BCE for a fixed number of Adam steps; returns the final loss.
    """
    if len(history) == 0:
        raise GoalError("success-predictor history is empty")
    goals = np.asarray([h[0] for h in history], dtype=np.float32)
    labels = np.asarray([h[1] for h in history], dtype=np.float32)
    if not np.all((labels == 0.0) | (labels == 1.0)):
        raise GoalError("success labels must be 0 or 1")
    last = float("nan")
    for _ in range(steps):
        idx = rng.integers(0, len(goals), size=min(batch_size, len(goals)))
        z = torch.from_numpy(goals[idx])
        y = torch.from_numpy(labels[idx])
        predictor.opt.zero_grad(set_to_none=True)
        loss = bce_loss(predictor, z, y)
        loss.backward()
        predictor.opt.step()
        last = float(loss.detach())
    return last
