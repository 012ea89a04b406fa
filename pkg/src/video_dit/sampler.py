"""Ancestral reverse-process sampling.

The chain starts from x_T ~ N(0, I) and applies T Gaussian denoising
steps whose mean is reparameterized from the predicted noise:

    mu = (x_t - beta_t / sqrt(1 - abar_t) * eps) / sqrt(alpha_t)

The step variance is fixed (not learned): either beta_t or the posterior
variance beta_tilde_t (default).  No noise is injected at the final
step, so the t=1 output is the mean itself.
"""

from dataclasses import dataclass

import numpy as np

from .schedule import DiffusionSchedule, _check_t

VARIANCE_CHOICES = ("beta", "beta_tilde")


@dataclass(frozen=True)
class SamplerConfig:
    """clip_x0 clamps the implied x0 to the data range [-1, 1] before the
    posterior mean is formed; off, the step mean is the plain epsilon
    reparameterization.  Both agree whenever the implied x0 is in range."""

    variance_choice: str = "beta_tilde"
    seed: int = 0
    clip_x0: bool = False

    def __post_init__(self):
        if self.variance_choice not in VARIANCE_CHOICES:
            raise ValueError(f"variance_choice must be one of {VARIANCE_CHOICES}")


def predict_x0(s: DiffusionSchedule, xt, eps, t):
    """Invert the forward marginal: x0_hat = (x_t - sqrt(1-abar_t) eps) / sqrt(abar_t)."""
    if xt.shape != eps.shape:
        raise ValueError(f"shape mismatch: xt {xt.shape} vs eps {eps.shape}")
    t = int(_check_t(s, np.asarray(t)))
    ab = float(s.alpha_bar[t - 1])
    return (xt - float(np.sqrt(1.0 - ab)) * eps) / float(np.sqrt(ab))


def step_variance(s: DiffusionSchedule, cfg: SamplerConfig, t: int) -> float:
    i = t - 1
    if cfg.variance_choice == "beta":
        return float(s.beta[i])
    return float(s.posterior_var[i])


def denoise_step(model_eps, xt, t, s: DiffusionSchedule, cfg: SamplerConfig, noise):
    """One reverse step x_t -> x_{t-1}; noise is ignored (forced 0) at t=1."""
    if model_eps.shape != xt.shape:
        raise ValueError(f"shape mismatch: eps {model_eps.shape} vs xt {xt.shape}")
    t = int(_check_t(s, np.asarray(t)))
    i = t - 1
    if cfg.clip_x0:
        x0 = np.clip(predict_x0(s, xt, model_eps, t), -1.0, 1.0)
        denom = 1.0 - s.alpha_bar[i]
        c0 = float(np.sqrt(s.alpha_bar_prev[i]) * s.beta[i] / denom)
        ct = float(np.sqrt(s.alpha[i]) * (1.0 - s.alpha_bar_prev[i]) / denom)
        mu = c0 * x0 + ct * xt
    else:
        coef = float(s.beta[i] / np.sqrt(1.0 - s.alpha_bar[i]))
        mu = (xt - coef * model_eps) / float(np.sqrt(s.alpha[i]))
    if t == 1:
        return mu
    if noise.shape != xt.shape:
        raise ValueError("noise shape mismatch")
    return mu + float(np.sqrt(step_variance(s, cfg, t))) * noise


def sample(eps_fn, s: DiffusionSchedule, cfg: SamplerConfig, shape, cond=None,
           rng=None, dtype=np.float64):
    """Run the full reverse chain.

    eps_fn(xt, t, cond) is the noise predictor (see network.make_eps_fn);
    shape is (B, F, H, W, C) or (F, H, W, C) for a single clip.  The
    chain is deterministic given cfg.seed (or a caller-supplied rng).
    Conditional frames are never part of the diffusion state: they enter
    eps_fn unchanged at every step.
    """
    squeeze = len(shape) == 4
    if squeeze:
        shape = (1,) + tuple(shape)
        if cond is not None and cond.ndim == 4:
            cond = cond[None]
    if len(shape) != 5:
        raise ValueError(f"shape must be 4- or 5-d, got {shape}")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    x = rng.standard_normal(shape).astype(dtype)
    for t in range(s.T, 0, -1):
        eps = eps_fn(x, t, cond)
        noise = rng.standard_normal(shape).astype(dtype) if t > 1 \
            else np.zeros(shape, dtype=dtype)
        x = denoise_step(eps, x, t, s, cfg, noise)
    return x[0] if squeeze else x


def predict(eps_fn, s: DiffusionSchedule, cfg: SamplerConfig, cond, frames: int,
            rng=None):
    """Conditional prediction: sample `frames` future frames given cond.

    Returns (full, predicted) where full is cond and the prediction
    concatenated along the frame axis; the conditional part of `full`
    is the input array values untouched.
    """
    squeeze = cond.ndim == 4
    cond_b = cond[None] if squeeze else cond
    b, k, h, w, c = cond_b.shape
    pred = sample(eps_fn, s, cfg, (b, frames, h, w, c), cond_b, rng=rng,
                  dtype=cond_b.dtype)
    full = np.concatenate([cond_b, pred], axis=1)
    if squeeze:
        return full[0], pred[0]
    return full, pred
