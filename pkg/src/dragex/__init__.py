"""Robust online representation learning for goal-conditioned pixel agents.

Subpackage map:

* :mod:`dragex.weighting` -- adversarial sample weights (closed form, skewed
  resampling, neural weighter).
* :mod:`dragex.vae` -- pixel beta-VAE, weighted training objective, marginal
  log-likelihood estimator, delayed encoder.
* :mod:`dragex.envs` -- continuous point mazes and a walled 3-d reach task,
  pixel-rendered.
* :mod:`dragex.agent` -- latent-space goal-conditioned actor-critic and
  replay buffer.
* :mod:`dragex.goals` -- latent goal sampling strategies over prior
  candidates (novelty- and difficulty-based).
* :mod:`dragex.orchestrator` -- the full training loop, checkpointing, and
  run configuration.
* :mod:`dragex.metrics` -- success coverage, embedding drift, aggregate
  statistics, latent-map export.
* :mod:`dragex.plots` -- static figures from run outputs.
"""

__version__ = "0.1.0"
