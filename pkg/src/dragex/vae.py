"""Pixel beta-VAE with adversarially weighted training.

The encoder maps observations to diagonal-Gaussian posterior parameters; the
decoder maps latents to per-pixel likelihood parameters. Training minimizes a
weighted negative ELBO where the per-sample weights come from one of four
routes: unit weights, skewed resampling, the analytic entropic closed form,
or a trained neural weighter. A separate EMA-delayed encoder provides the
agent's (slowly moving) view of the latent space.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .weighting import (
    batch_ratios,
    check_weight_vector,
    nonparametric_weights,
    skewfit_weights,
    weight_entropy,
    weighter_update,
)

log = logging.getLogger(__name__)

VARIANTS = ("RIG", "SKEWFIT", "DRAG", "DRAG_NONPARAMETRIC")


class VaeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Networks


def _conv_sizes(obs_size: int, n_layers: int) -> list:
    sizes = [obs_size]
    for _ in range(n_layers):
        sizes.append((sizes[-1] - 2) // 2 + 1)  # kernel 4, stride 2, pad 1
    return sizes


class ConvEncoder(nn.Module):
    """Stride-2 CNN producing posterior (mu, log_sigma)."""

    def __init__(self, obs_size, latent_dim, channels=(3, 32, 64, 128, 256), dense=(512, 128)):
        super().__init__()
        layers = []
        for cin, cout in zip(channels[:-1], channels[1:]):
            layers += [nn.Conv2d(cin, cout, 4, stride=2, padding=1), nn.ReLU()]
        self.conv = nn.Sequential(*layers)
        side = _conv_sizes(obs_size, len(channels) - 1)[-1]
        feat = channels[-1] * side * side
        trunk = []
        for width in dense:
            trunk += [nn.Linear(feat, width), nn.ReLU()]
            feat = width
        self.trunk = nn.Sequential(*trunk)
        self.mu_head = nn.Linear(feat, latent_dim)
        self.log_sigma_head = nn.Linear(feat, latent_dim)

    def forward(self, x):
        h = self.trunk(self.conv(x).flatten(1))
        return self.mu_head(h), self.log_sigma_head(h)


class ConvDecoder(nn.Module):
    """Mirror of ConvEncoder; sigmoid output gives per-pixel Bernoulli means
    (interpreted as a Gaussian mean when the Gaussian likelihood is used)."""

    def __init__(self, obs_size, latent_dim, channels=(3, 32, 64, 128, 256), dense=(512, 128)):
        super().__init__()
        sizes = _conv_sizes(obs_size, len(channels) - 1)
        self.base_side = sizes[-1]
        self.base_channels = channels[-1]
        feat = latent_dim
        trunk = []
        for width in reversed(dense):
            trunk += [nn.Linear(feat, width), nn.ReLU()]
            feat = width
        trunk.append(nn.Linear(feat, self.base_channels * self.base_side ** 2))
        self.trunk = nn.Sequential(*trunk)
        deconvs = []
        rev = list(reversed(channels))
        for i, (cin, cout) in enumerate(zip(rev[:-1], rev[1:])):
            target = sizes[len(sizes) - 2 - i]
            src = sizes[len(sizes) - 1 - i]
            out_pad = target - 2 * src  # recover odd sizes lost to floor division
            deconvs.append(nn.ConvTranspose2d(cin, cout, 4, stride=2, padding=1,
                                              output_padding=out_pad))
            if i < len(rev) - 2:
                deconvs.append(nn.ReLU())
        self.deconv = nn.Sequential(*deconvs)

    def forward(self, z):
        h = self.trunk(z).reshape(-1, self.base_channels, self.base_side, self.base_side)
        return torch.sigmoid(self.deconv(h))


class MlpEncoder(nn.Module):
    """Dense encoder for tiny observations and unit tests."""

    def __init__(self, obs_size, latent_dim, hidden=(128, 64), in_channels=3):
        super().__init__()
        feat = in_channels * obs_size * obs_size
        layers = []
        for width in hidden:
            layers += [nn.Linear(feat, width), nn.ReLU()]
            feat = width
        self.trunk = nn.Sequential(*layers)
        self.mu_head = nn.Linear(feat, latent_dim)
        self.log_sigma_head = nn.Linear(feat, latent_dim)

    def forward(self, x):
        h = self.trunk(x.flatten(1))
        return self.mu_head(h), self.log_sigma_head(h)


class MlpDecoder(nn.Module):
    def __init__(self, obs_size, latent_dim, hidden=(64, 128), out_channels=3):
        super().__init__()
        self.out_shape = (out_channels, obs_size, obs_size)
        feat = latent_dim
        layers = []
        for width in hidden:
            layers += [nn.Linear(feat, width), nn.ReLU()]
            feat = width
        layers.append(nn.Linear(feat, out_channels * obs_size * obs_size))
        self.trunk = nn.Sequential(*layers)

    def forward(self, z):
        return torch.sigmoid(self.trunk(z)).reshape(-1, *self.out_shape)


class PixelVae(nn.Module):
    """Encoder/decoder pair with a beta-scaled KL and a pixel likelihood.

    likelihood: 'bernoulli' treats pixels in [0,1] as continuous Bernoulli
    targets; 'gaussian' uses a fixed-sigma Gaussian around the decoder mean.
    """

    def __init__(self, encoder, decoder, latent_dim, beta=2.0,
                 likelihood="bernoulli", gaussian_sigma=0.1):
        super().__init__()
        if likelihood not in ("bernoulli", "gaussian"):
            raise VaeError(f"unknown likelihood {likelihood!r}")
        self.encoder = encoder
        self.decoder = decoder
        self.latent_dim = latent_dim
        self.beta = beta
        self.likelihood = likelihood
        self.gaussian_sigma = gaussian_sigma


def build_pixel_vae(obs_size, latent_dim, channels=(3, 32, 64, 128, 256),
                    dense=(512, 128), backbone="conv", beta=2.0,
                    likelihood="bernoulli", gaussian_sigma=0.1) -> PixelVae:
    if backbone == "conv":
        enc = ConvEncoder(obs_size, latent_dim, channels, dense)
        dec = ConvDecoder(obs_size, latent_dim, channels, dense)
    elif backbone == "mlp":
        enc = MlpEncoder(obs_size, latent_dim, dense)
        dec = MlpDecoder(obs_size, latent_dim, tuple(reversed(dense)))
    else:
        raise VaeError(f"unknown backbone {backbone!r}")
    return PixelVae(enc, dec, latent_dim, beta, likelihood, gaussian_sigma)


# ---------------------------------------------------------------------------
# Core operations


def _ensure_batched(x: torch.Tensor) -> tuple:
    if x.ndim == 3:
        return x.unsqueeze(0), True
    if x.ndim == 4:
        return x, False
    raise VaeError(f"expected (3,H,W) or (B,3,H,W) input, got shape {tuple(x.shape)}")


def encode(vae: PixelVae, x: torch.Tensor):
    """Posterior parameters (mu, log_sigma); deterministic given parameters."""
    xb, single = _ensure_batched(x)
    with torch.no_grad():
        mu, log_sigma = vae.encoder(xb)
    if single:
        return mu.squeeze(0), log_sigma.squeeze(0)
    return mu, log_sigma


def reparam_sample(mu: torch.Tensor, log_sigma: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """z = mu + exp(log_sigma) * eps."""
    return mu + torch.exp(log_sigma) * eps


def kl_to_prior(mu: torch.Tensor, log_sigma: torch.Tensor) -> torch.Tensor:
    """Closed-form KL(N(mu, sigma) || N(0, I)) per sample, summed over dims."""
    var = torch.exp(2.0 * log_sigma)
    return 0.5 * (mu * mu + var - 1.0 - 2.0 * log_sigma).sum(dim=-1)


def recon_loglik(vae: PixelVae, x: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    """log p(x | z) summed over pixels, per sample.

    Bernoulli decoder outputs are clamped to [1e-6, 1 - 1e-6] before the log.
    """
    decoded = vae.decoder(z)
    if vae.likelihood == "bernoulli":
        p = decoded.clamp(1e-6, 1.0 - 1e-6)
        ll = x * torch.log(p) + (1.0 - x) * torch.log(1.0 - p)
    else:
        sigma = vae.gaussian_sigma
        ll = -0.5 * math.log(2.0 * math.pi * sigma ** 2) - (x - decoded) ** 2 / (2.0 * sigma ** 2)
    return ll.flatten(1).sum(dim=1)


def weighted_elbo(vae: PixelVae, x: torch.Tensor, weights, m: int = 1,
                  beta: float | None = None, generator: torch.Generator | None = None
                  ) -> torch.Tensor:
    """(1/n) sum_i r_i [ (1/m) sum_j log p(x_i|z_ij) - beta * KL_i ].

    Unit weights recover the plain beta-ELBO. Differentiable w.r.t. both
    encoder and decoder parameters via the reparameterization trick.
    """
    if x.ndim != 4:
        raise VaeError(f"expected a (n,3,H,W) batch, got {tuple(x.shape)}")
    n = x.shape[0]
    w = torch.as_tensor(np.asarray(weights), dtype=x.dtype)
    if w.shape != (n,):
        raise VaeError(f"weight vector length {tuple(w.shape)} does not match batch size {n}")
    beta = vae.beta if beta is None else beta
    mu, log_sigma = vae.encoder(x)
    kl = kl_to_prior(mu, log_sigma)
    recon = torch.zeros_like(kl)
    for _ in range(m):
        eps = torch.randn(mu.shape, generator=generator, dtype=x.dtype)
        recon = recon + recon_loglik(vae, x, reparam_sample(mu, log_sigma, eps))
    recon = recon / m
    return (w * (recon - beta * kl)).mean()


def marginal_loglik_estimate(vae: PixelVae, x: torch.Tensor, num_samples: int = 1,
                             generator: torch.Generator | None = None) -> torch.Tensor:
    """Importance-sampled marginal log-likelihood per sample.

    logsumexp_j [ log p(x|z_j) + log p(z_j) - log q(z_j|x) ] - log M with
    z_j ~ q(z|x); the logsumexp keeps very low likelihoods from vanishing.
    """
    xb, single = _ensure_batched(x)
    if num_samples < 1:
        raise VaeError("num_samples must be >= 1")
    with torch.no_grad():
        mu, log_sigma = vae.encoder(xb)
        B, d = mu.shape
        eps = torch.randn((num_samples, B, d), generator=generator, dtype=xb.dtype)
        z = mu.unsqueeze(0) + torch.exp(log_sigma).unsqueeze(0) * eps
        log_prior = (-0.5 * math.log(2.0 * math.pi) - 0.5 * z * z).sum(dim=-1)
        log_q = (-log_sigma.unsqueeze(0) - 0.5 * math.log(2.0 * math.pi)
                 - 0.5 * eps * eps).sum(dim=-1)
        log_px = torch.stack([recon_loglik(vae, xb, z[j]) for j in range(num_samples)])
        estimate = torch.logsumexp(log_px + log_prior - log_q, dim=0) - math.log(num_samples)
    return estimate.squeeze(0) if single else estimate


# ---------------------------------------------------------------------------
# Delayed encoder


def make_delayed_encoder(encoder: nn.Module) -> nn.Module:
    """Detached deep copy of the encoder, updated only through ema_update."""
    delayed = copy.deepcopy(encoder)
    for p in delayed.parameters():
        p.requires_grad_(False)
    return delayed


def ema_update(delayed: nn.Module, live: nn.Module, tau: float) -> None:
    """delayed <- (1 - tau) * delayed + tau * live, parameter-wise.

    tau is the copy rate: tau = 1 replaces the delayed encoder outright
    (no smoothing); small tau tracks the live encoder slowly.
    """
    if not (0.0 < tau <= 1.0):
        raise VaeError(f"tau must lie in (0, 1], got {tau}")
    d_state = dict(delayed.named_parameters())
    l_state = dict(live.named_parameters())
    if d_state.keys() != l_state.keys():
        raise VaeError("delayed/live encoder parameter sets differ")
    with torch.no_grad():
        for name, dp in d_state.items():
            lp = l_state[name]
            if dp.shape != lp.shape:
                raise VaeError(f"shape mismatch for {name}: {dp.shape} vs {lp.shape}")
            dp.mul_(1.0 - tau).add_(lp, alpha=tau)
        for (dn, db), (ln, lb) in zip(delayed.named_buffers(), live.named_buffers()):
            db.mul_(1.0 - tau).add_(lb, alpha=tau)


# ---------------------------------------------------------------------------
# Training phase (one representation-learning block of the outer loop)


@dataclass
class VaePhaseConfig:
    variant: str = "DRAG"
    lam: float = 100.0
    n_epochs: int = 50
    samples_per_epoch: int = 1000
    minibatch: int = 100
    elbo_samples: int = 1          # m
    loglik_samples: int = 1        # M
    tau: float = 0.05
    weighter_steps: int = 1        # gradient steps per minibatch in pass 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise VaeError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.samples_per_epoch % self.minibatch != 0:
            raise VaeError("samples_per_epoch must be a multiple of minibatch")

    @property
    def alpha(self) -> float:
        return -1.0 / self.lam


@dataclass
class PhaseDiagnostics:
    skipped: bool = False
    weight_vectors: list = field(default_factory=list)
    elbo_values: list = field(default_factory=list)
    weighter_objectives: list = field(default_factory=list)
    recon_loglik_values: list = field(default_factory=list)

    @property
    def mean_elbo(self) -> float:
        return float(np.mean(self.elbo_values)) if self.elbo_values else float("nan")

    @property
    def mean_weight_entropy(self) -> float:
        if not self.weight_vectors:
            return float("nan")
        return float(np.mean([weight_entropy(w) for w in self.weight_vectors]))


def obs_batch_to_tensor(obs_u8: np.ndarray) -> torch.Tensor:
    """(B,H,W,3) uint8 -> (B,3,H,W) float32 in [0,1]."""
    arr = np.asarray(obs_u8)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) / np.float32(255.0)
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


def minibatch_weights(vae: PixelVae, weighter, x: torch.Tensor, cfg: VaePhaseConfig,
                      generator: torch.Generator) -> np.ndarray:
    """Dispatch the per-minibatch weight computation for a variant."""
    n = x.shape[0]
    if cfg.variant == "RIG":
        return check_weight_vector(np.ones(n))
    if cfg.variant == "DRAG":
        return batch_ratios(weighter, x)
    loglik = marginal_loglik_estimate(vae, x, cfg.loglik_samples, generator)
    ll = loglik.double().cpu().numpy()
    if cfg.variant == "SKEWFIT":
        return skewfit_weights(ll, cfg.alpha)
    return nonparametric_weights(-ll, cfg.lam)  # DRAG_NONPARAMETRIC


def vae_train_phase(vae: PixelVae, vae_opt: torch.optim.Optimizer,
                    weighter, weighter_opt, delayed_encoder,
                    obs_u8: np.ndarray, cfg: VaePhaseConfig,
                    np_rng: np.random.Generator,
                    torch_gen: torch.Generator) -> PhaseDiagnostics:
    """One representation-learning phase.

    Per epoch: draw a uniform train set from the reached-state buffer, run
    the weighter pass (DRAG only, frozen VAE), then the weighted VAE pass,
    EMA-updating the delayed encoder after every VAE step.
    """
    diag = PhaseDiagnostics()
    n_available = len(obs_u8)
    if n_available < cfg.minibatch:
        log.warning("skipping VAE phase: buffer has %d states, minibatch needs %d",
                    n_available, cfg.minibatch)
        diag.skipped = True
        return diag
    n_batches = cfg.samples_per_epoch // cfg.minibatch
    for _ in range(cfg.n_epochs):
        idx = np_rng.integers(0, n_available, size=cfg.samples_per_epoch)
        batches = idx.reshape(n_batches, cfg.minibatch)
        if cfg.variant == "DRAG":
            for b in batches:
                x = obs_batch_to_tensor(obs_u8[b])
                neg_ll = -marginal_loglik_estimate(vae, x, cfg.loglik_samples, torch_gen)
                for _ in range(cfg.weighter_steps):
                    J = weighter_update(weighter, x, neg_ll, cfg.lam, weighter_opt)
                diag.weighter_objectives.append(J)
        for b in batches:
            x = obs_batch_to_tensor(obs_u8[b])
            w = minibatch_weights(vae, weighter, x, cfg, torch_gen)
            diag.weight_vectors.append(w)
            vae_opt.zero_grad(set_to_none=True)
            elbo = weighted_elbo(vae, x, w, cfg.elbo_samples, vae.beta, torch_gen)
            (-elbo).backward()
            vae_opt.step()
            ema_update(delayed_encoder, vae.encoder, cfg.tau)
            diag.elbo_values.append(float(elbo.detach()))
    return diag
