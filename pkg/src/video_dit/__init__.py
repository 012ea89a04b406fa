"""Desk-scale video diffusion transformer.

DDPM training and ancestral sampling over per-frame latents, with a
transformer backbone of interleaved temporal/spatial attention blocks,
three conditional-prediction schemes, and a spatial-temporal decoupled
two-stage training strategy.  Numerics are numpy with numba-jitted hot
kernels (see kernels/).
"""

from .config import ModelConfig, preset, param_count
from .schedule import (DiffusionSchedule, make_schedule, add_noise,
                       posterior_params, vb_kl_term, simple_loss)

__all__ = [
    "ModelConfig", "preset", "param_count",
    "DiffusionSchedule", "make_schedule", "add_noise",
    "posterior_params", "vb_kl_term", "simple_loss",
]

__version__ = "0.1.0"
