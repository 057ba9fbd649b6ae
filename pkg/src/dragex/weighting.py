"""Adversarial sample weights for the robust VAE training distribution.

Two routes produce the same kind of object, a per-batch vector of positive
likelihood ratios with mean exactly 1:

* the closed-form softmax solution of the entropy-regularized inner
  maximization (non-parametric route, identical to skewed resampling), and
* a trained neural scorer whose batch-normalized exponential enforces the
  mean-1 validity constraint structurally (parametric route).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

WEIGHT_MEAN_TOL = 1e-9


class WeightError(ValueError):
    """Raised when inputs cannot yield a valid weight vector."""


@dataclass(frozen=True)
class Temperature:
    """Entropy-regularization strength and its skewing exponent, alpha = -1/lambda."""

    lam: float

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise WeightError(f"temperature lambda must be positive and finite, got {self.lam}")

    @property
    def alpha(self) -> float:
        return -1.0 / self.lam

    @classmethod
    def from_alpha(cls, alpha: float) -> "Temperature":
        if not (alpha < 0 and math.isfinite(alpha)):
            raise WeightError(f"skewing exponent alpha must be negative and finite, got {alpha}")
        return cls(lam=-1.0 / alpha)


def check_weight_vector(weights: np.ndarray, tol: float = WEIGHT_MEAN_TOL) -> np.ndarray:
    """Validate the weight-vector contract: all entries > 0, mean 1 within tol."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 1 or weights.size == 0:
        raise WeightError(f"expected a non-empty 1-d weight vector, got shape {weights.shape}")
    if not np.all(np.isfinite(weights)):
        raise WeightError("weight vector contains non-finite entries")
    if not np.all(weights > 0):
        raise WeightError("weight vector contains non-positive entries")
    mean = float(weights.mean())
    if abs(mean - 1.0) > tol:
        raise WeightError(f"weight vector mean {mean!r} deviates from 1 by more than {tol}")
    return weights


_POSITIVE_FLOOR = float(np.finfo(np.float64).smallest_subnormal)


def _scaled_softmax(scores: np.ndarray) -> np.ndarray:
    """n * softmax(scores), computed with max-subtraction. Mean is 1 up to rounding.

    Entries whose exponent underflows are floored at the smallest subnormal so
    the strict-positivity contract survives arbitrarily spread scores.
    """
    shifted = scores - scores.max()
    e = np.exp(shifted)
    return np.maximum(e.size * e / e.sum(), _POSITIVE_FLOOR)


def nonparametric_weights(losses, lam: float) -> np.ndarray:
    """Closed-form adversarial weights r_i = n exp(l_i / lam) / sum_j exp(l_j / lam).

    This is the exact maximizer of mean(r * l) - lam * mean(r * log r) over
    the scaled simplex {r >= 0, mean(r) = 1}. High-loss samples are upweighted,
    with lam controlling how sharply.
    """
    losses = np.asarray(losses, dtype=np.float64)
    if losses.ndim != 1 or losses.size == 0:
        raise WeightError(f"losses must be a non-empty 1-d vector, got shape {losses.shape}")
    if not np.all(np.isfinite(losses)):
        raise WeightError("losses contain non-finite entries")
    if not (lam > 0 and math.isfinite(lam)):
        raise WeightError(f"lambda must be positive and finite, got {lam}")
    return check_weight_vector(_scaled_softmax(losses / lam))


def skewfit_weights(loglik, alpha: float) -> np.ndarray:
    """Skewed-resampling weights r_i = n exp(alpha * L_i) / sum_j exp(alpha * L_j).

    L_i are marginal log-likelihood estimates and alpha < 0, so poorly modeled
    samples are upweighted. Equals nonparametric_weights(-L, lam=-1/alpha).
    """
    loglik = np.asarray(loglik, dtype=np.float64)
    if loglik.ndim != 1 or loglik.size == 0:
        raise WeightError(f"loglik must be a non-empty 1-d vector, got shape {loglik.shape}")
    if not np.all(np.isfinite(loglik)):
        raise WeightError("loglik contains non-finite entries")
    if not (alpha < 0 and math.isfinite(alpha)):
        raise WeightError(f"alpha must be negative and finite, got {alpha}")
    return check_weight_vector(_scaled_softmax(alpha * loglik))


def _conv_out(size: int, n_layers: int) -> int:
    for _ in range(n_layers):
        size = (size - 2) // 2 + 1  # kernel 4, stride 2, pad 1
    return size


class WeighterNet(nn.Module):
    """Scalar scorer f(x) over pixel observations, backing the parametric ratios.

    Mirrors the VAE encoder backbone (stride-2 convs then dense layers) but with
    a single linear output head. An MLP backbone is available for tiny inputs.
    Deterministic: no dropout or other stochastic layers.
    """

    def __init__(self, obs_size: int, channels=(3, 32, 64, 128, 256), dense=(512, 128),
                 backbone: str = "conv"):
        super().__init__()
        self.obs_size = obs_size
        self.backbone = backbone
        if backbone == "conv":
            convs = []
            for cin, cout in zip(channels[:-1], channels[1:]):
                convs += [nn.Conv2d(cin, cout, kernel_size=4, stride=2, padding=1), nn.ReLU()]
            self.features = nn.Sequential(*convs)
            side = _conv_out(obs_size, len(channels) - 1)
            feat_dim = channels[-1] * side * side
        elif backbone == "mlp":
            self.features = nn.Flatten()
            feat_dim = 3 * obs_size * obs_size
        else:
            raise ValueError(f"unknown backbone {backbone!r}")
        head = []
        for width in dense:
            head += [nn.Linear(feat_dim, width), nn.ReLU()]
            feat_dim = width
        head.append(nn.Linear(feat_dim, 1))
        self.head = nn.Sequential(*head)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Scores for a batch of observations, shape (n, 3, H, W) -> (n,)."""
        feats = self.features(x)
        if feats.ndim > 2:
            feats = feats.flatten(1)
        return self.head(feats).squeeze(-1)


def batch_scores(weighter: WeighterNet, batch: torch.Tensor) -> torch.Tensor:
    if batch.ndim != 4 or batch.shape[0] == 0:
        raise WeightError(f"expected a non-empty (n, 3, H, W) batch, got shape {tuple(batch.shape)}")
    return weighter(batch)


def ratios_from_scores(scores: torch.Tensor) -> torch.Tensor:
    """n * softmax(scores). Differentiable; mean 1 holds up to float rounding."""
    return scores.shape[0] * torch.softmax(scores, dim=0)


def batch_ratios(weighter: WeighterNet, batch: torch.Tensor) -> np.ndarray:
    """Parametric likelihood ratios r_i = n exp(f(x_i)) / sum_j exp(f(x_j)).

    Pure given frozen parameters; safe to call from parallel evaluation workers.
    """
    with torch.no_grad():
        # softmax in double precision so the mean-1 contract holds to 1e-9
        # even when the network itself runs in float32
        r = ratios_from_scores(batch_scores(weighter, batch).double())
    return check_weight_vector(r.cpu().numpy())


def weighter_objective(weighter: WeighterNet, batch: torch.Tensor,
                       neg_loglik: torch.Tensor, lam: float) -> torch.Tensor:
    """Inner-maximization payoff J = mean(r * (-L)) - lam * mean(r * log r).

    neg_loglik holds -L estimates computed on the same batch with frozen VAE
    parameters; only the weighter parameters receive gradients here.
    """
    if neg_loglik.shape[0] != batch.shape[0]:
        raise WeightError(
            f"batch size {batch.shape[0]} does not match loss vector length {neg_loglik.shape[0]}")
    r = ratios_from_scores(batch_scores(weighter, batch))
    payoff = (r * neg_loglik.detach()).mean()
    entropy_penalty = (r * torch.log(r.clamp_min(1e-300))).mean()
    return payoff - lam * entropy_penalty


def weighter_update(weighter: WeighterNet, batch: torch.Tensor, neg_loglik: torch.Tensor,
                    lam: float, optimizer: torch.optim.Optimizer) -> float:
    """One ascent step on the weighter objective. Returns the objective value."""
    optimizer.zero_grad(set_to_none=True)
    objective = weighter_objective(weighter, batch, neg_loglik, lam)
    (-objective).backward()
    optimizer.step()
    return float(objective.detach())


def weight_entropy(weights: np.ndarray) -> float:
    """Shannon entropy of the normalized weights p_i = r_i / n, in [0, log n].

    log(n) means uniform weighting; lower values mean the adversary is
    concentrating mass on few samples.
    """
    p = np.asarray(weights, dtype=np.float64)
    p = p / p.sum()
    return float(-(p * np.log(p)).sum())
