"""Closed-form diffusion math: forward noising, posterior, bound term, loss.

Conventions
-----------
Steps are 1-indexed: t runs over 1..T.  Internally the tables are
0-indexed, so beta[t-1] is the variance added at step t.  The cumulative
signal coefficient abar_t = prod_{s<=t} (1 - beta_s) with abar_0 := 1,
which makes the t=1 posterior degenerate at x0.

The forward marginal follows from composing the per-step Gaussians:

    x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps,   eps ~ N(0, I)

and the posterior q(x_{t-1} | x_t, x0) is Gaussian with

    mean = sqrt(abar_{t-1}) beta_t / (1 - abar_t) * x0
         + sqrt(alpha_t) (1 - abar_{t-1}) / (1 - abar_t) * x_t
    var  = beta_t (1 - abar_{t-1}) / (1 - abar_t)

All tables are computed in float64; per-sample arrays follow the dtype
of their inputs.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DiffusionSchedule:
    """Precomputed noise-schedule tables for T steps."""

    T: int
    beta: np.ndarray            # (T,)
    alpha: np.ndarray           # (T,) = 1 - beta
    alpha_bar: np.ndarray       # (T,) cumulative product of alpha
    alpha_bar_prev: np.ndarray  # (T,) = [1, abar_1, ..., abar_{T-1}]
    posterior_var: np.ndarray   # (T,) beta_t (1-abar_{t-1}) / (1-abar_t)
    beta_start: float
    beta_end: float
    kind: str

    def to_config(self) -> dict:
        """JSON-serializable description; make_schedule(**cfg) rebuilds it."""
        return {
            "T": self.T,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
            "kind": self.kind,
        }


def make_schedule(T: int, beta_start: float, beta_end: float,
                  kind: str = "linear") -> DiffusionSchedule:
    """Build a linear beta schedule and all derived tables."""
    if kind != "linear":
        raise ValueError(f"unknown schedule kind {kind!r}")
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate(([1.0], alpha_bar[:-1]))
    posterior_var = beta * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar)
    return DiffusionSchedule(
        T=int(T), beta=beta, alpha=alpha, alpha_bar=alpha_bar,
        alpha_bar_prev=alpha_bar_prev, posterior_var=posterior_var,
        beta_start=float(beta_start), beta_end=float(beta_end), kind=kind,
    )


def _check_t(s: DiffusionSchedule, t) -> np.ndarray:
    t = np.asarray(t)
    if not np.issubdtype(t.dtype, np.integer):
        raise ValueError(f"t must be integer, got dtype {t.dtype}")
    if np.any(t < 1) or np.any(t > s.T):
        raise ValueError(f"t out of range 1..{s.T}: {t}")
    return t


def _per_sample(coef: np.ndarray, t, x: np.ndarray) -> np.ndarray:
    """Index a (T,) table at steps t and broadcast against x.

    Scalar t broadcasts directly; an array t must match x's leading
    (batch) axis and is expanded over the remaining axes.
    """
    t = np.asarray(t)
    c = coef[t - 1]
    if t.ndim == 0:
        return x.dtype.type(c)
    if t.shape[0] != x.shape[0]:
        raise ValueError(f"batched t has length {t.shape[0]}, x batch {x.shape[0]}")
    return c.reshape((-1,) + (1,) * (x.ndim - 1)).astype(x.dtype)


def add_noise(s: DiffusionSchedule, x0: np.ndarray, eps: np.ndarray, t):
    """Forward marginal: x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs eps {eps.shape}")
    t = _check_t(s, t)
    a = _per_sample(np.sqrt(s.alpha_bar), t, x0)
    b = _per_sample(np.sqrt(1.0 - s.alpha_bar), t, x0)
    return a * x0 + b * eps


def posterior_params(s: DiffusionSchedule, x0: np.ndarray, xt: np.ndarray, t: int):
    """Mean and (scalar) variance of q(x_{t-1} | x_t, x0)."""
    if x0.shape != xt.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs xt {xt.shape}")
    t = int(_check_t(s, t))
    i = t - 1
    denom = 1.0 - s.alpha_bar[i]
    coef_x0 = np.sqrt(s.alpha_bar_prev[i]) * s.beta[i] / denom
    coef_xt = np.sqrt(s.alpha[i]) * (1.0 - s.alpha_bar_prev[i]) / denom
    mean = coef_x0 * x0 + coef_xt * xt
    return mean, float(s.posterior_var[i])


def vb_kl_term(s: DiffusionSchedule, x0, xt, model_mean, model_var: float, t: int) -> float:
    """KL( q(x_{t-1}|x_t,x0) || N(model_mean, model_var I) ), summed over elements.

    Diagnostic only; training uses simple_loss.  At t=1 the posterior is
    degenerate (variance 0) and the KL is infinite unless the means match.
    """
    if model_var <= 0.0:
        raise ValueError(f"model_var must be positive, got {model_var}")
    q_mean, q_var = posterior_params(s, x0, xt, t)
    if model_mean.shape != q_mean.shape:
        raise ValueError("model_mean shape mismatch")
    n = q_mean.size
    sq = float(np.sum((q_mean - model_mean) ** 2))
    if q_var == 0.0:
        # degenerate posterior (t=1): KL of a point mass vs a Gaussian
        return float(np.inf)
    return float(
        n * 0.5 * (np.log(model_var / q_var) + q_var / model_var - 1.0)
        + sq / (2.0 * model_var)
    )


def _mask_selection(eps_pred, eps_true, frame_mask):
    if eps_pred.shape != eps_true.shape:
        raise ValueError(f"shape mismatch: {eps_pred.shape} vs {eps_true.shape}")
    if frame_mask is None:
        return eps_pred, eps_true
    frame_mask = np.asarray(frame_mask, dtype=bool)
    if frame_mask.shape != (eps_pred.shape[-4],):
        raise ValueError(
            f"frame_mask must have length {eps_pred.shape[-4]} (frame axis), "
            f"got shape {frame_mask.shape}"
        )
    if not frame_mask.any():
        raise ValueError("frame_mask selects no frames")
    take = np.compress(frame_mask, eps_pred, axis=-4)
    ref = np.compress(frame_mask, eps_true, axis=-4)
    return take, ref


def simple_loss(eps_pred, eps_true, frame_mask=None) -> float:
    """Mean squared error between predicted and true noise.

    frame_mask, if given, is a boolean array over the frame axis
    (axis -4 of a (..., F, H, W, C) array); only selected frames
    contribute.  Used by token-concat prediction where conditional
    frames carry no loss.
    """
    a, b = _mask_selection(eps_pred, eps_true, frame_mask)
    d = a - b
    return float(np.mean(d * d))


def simple_loss_grad(eps_pred, eps_true, frame_mask=None):
    """(loss, dloss/deps_pred), gradient zero on masked-out frames."""
    a, b = _mask_selection(eps_pred, eps_true, frame_mask)
    d = a - b
    loss = float(np.mean(d * d))
    grad = np.zeros_like(eps_pred)
    g = 2.0 * d / d.size
    if frame_mask is None:
        grad[...] = g
    else:
        idx = np.flatnonzero(np.asarray(frame_mask, dtype=bool))
        grad[..., idx, :, :, :] = g
    return loss, grad
