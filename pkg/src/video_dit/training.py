"""Training loops and the spatial-temporal decoupled strategy.

Stages
------
spatial_only   single random frames per clip, temporal attention bypassed,
               every group except temporal_attn trainable
temporal_only  full clips, only the temporal_attn group (attention weights
               plus their modulation heads) trainable
joint          full clips, everything trainable

A temporal_only stage normally starts from a spatial checkpoint with the
temporal-attention parameters freshly re-initialized (zero output
projection), so the residual temporal branch starts as the identity and
the initial model equals the spatial model applied per frame.

The optimizer is AdamW (decoupled weight decay); updates touch only the
trainable set, so frozen parameters keep no optimizer state and are
bit-identical after the stage.
"""

from dataclasses import dataclass, field

import numpy as np

from . import network
from .config import ModelConfig
from .params import ParamStore, reinit_temporal
from .schedule import DiffusionSchedule

STAGES = ("spatial_only", "temporal_only", "joint")

_STAGE_ALIASES = {"spatial": "spatial_only", "temporal": "temporal_only",
                  "joint": "joint"}


def canonical_stage(name: str) -> str:
    s = _STAGE_ALIASES.get(name, name)
    if s not in STAGES:
        raise ValueError(f"unknown stage {name!r}; expected one of {STAGES}")
    return s


@dataclass
class TrainPlan:
    stage: str
    steps: int
    lr: float = 1e-4
    batch: int = 8
    weight_decay: float = 0.0
    seed: int = 0
    fresh_temporal: bool = True  # re-init temporal attn at temporal_only start

    def __post_init__(self):
        self.stage = canonical_stage(self.stage)
        if self.steps < 1 or self.batch < 1:
            raise ValueError("steps and batch must be positive")


def freeze_mask(params: ParamStore, stage: str) -> set:
    """Names of trainable parameters for a stage; freezing is tag-driven."""
    stage = canonical_stage(stage)
    names = set()
    for name in params.names():
        group = params.group_of(name)
        if stage == "joint":
            names.add(name)
        elif stage == "temporal_only":
            if group == "temporal_attn":
                names.add(name)
        else:  # spatial_only
            if group != "temporal_attn":
                names.add(name)
    return names


class AdamW:
    """Decoupled-weight-decay Adam over a named parameter subset."""

    def __init__(self, lr=1e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params: ParamStore, grads: dict, trainable: set):
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for name in sorted(grads):
            if name not in trainable:
                continue
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - self.b1) * (g - m)
            v += (1.0 - self.b2) * (g * g - v)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * params[name]
            params[name] = params[name] - self.lr * update

    def n_state_params(self) -> int:
        """Scalar count of parameters holding optimizer state (memory proxy)."""
        return sum(a.size for a in self.m.values())


def draw_batch(rng: np.random.Generator, clips: np.ndarray, plan: TrainPlan,
               cfg: ModelConfig):
    """(x0, cond) batch for a stage.

    clips: (N, F_total, H, W, C) latents in model space.  spatial_only
    picks one random frame per sampled clip and never conditions; the
    other stages split off cfg.cond_frames leading frames when the
    scheme needs them.
    """
    idx = rng.integers(0, clips.shape[0], size=plan.batch)
    batch = clips[idx]
    if plan.stage == "spatial_only":
        frame = rng.integers(0, clips.shape[1], size=plan.batch)
        return batch[np.arange(plan.batch), frame][:, None], None
    if cfg.cond_scheme != "none":
        k = cfg.cond_frames
        if clips.shape[1] <= k:
            raise ValueError(f"clips have {clips.shape[1]} frames, need more "
                             f"than cond_frames={k}")
        return batch[:, k:], batch[:, :k]
    return batch, None


def training_step(params: ParamStore, batch_x0: np.ndarray,
                  s: DiffusionSchedule, plan: TrainPlan,
                  rng: np.random.Generator, cfg: ModelConfig, cond=None):
    """One optimization objective evaluation.

    Samples t ~ U{1..T} and eps ~ N(0, I) per clip, forms x_t by the
    closed-form marginal, and returns (loss, grads) with grads holding
    entries only for trainable parameters.
    """
    spatial = plan.stage == "spatial_only"
    eff_cfg = cfg.with_scheme("none") if (spatial and cfg.cond_scheme != "none") \
        else cfg
    if spatial and cond is not None:
        raise ValueError("spatial_only stage trains unconditionally")
    b = batch_x0.shape[0]
    t = rng.integers(1, s.T + 1, size=b)
    eps = rng.standard_normal(batch_x0.shape).astype(batch_x0.dtype)
    shape = (-1,) + (1,) * (batch_x0.ndim - 1)
    ab = np.sqrt(s.alpha_bar[t - 1]).reshape(shape).astype(batch_x0.dtype)
    bb = np.sqrt(1.0 - s.alpha_bar[t - 1]).reshape(shape).astype(batch_x0.dtype)
    xt = ab * batch_x0 + bb * eps
    loss, grads, _ = network.loss_and_grads(
        params, eff_cfg, xt, t, eps, cond, bypass_temporal=spatial)
    trainable = freeze_mask(params, plan.stage)
    grads = {n: g for n, g in grads.items() if n in trainable}
    return loss, grads


@dataclass
class TrainResult:
    params: ParamStore
    history: list = field(default_factory=list)  # (stage, step, loss) rows
    state_param_counts: dict = field(default_factory=dict)

    def losses(self, stage=None):
        return [l for st, _, l in self.history if stage is None or st == stage]


def run_training(params: ParamStore, cfg: ModelConfig, s: DiffusionSchedule,
                 clips: np.ndarray, plans, seed: int = 0,
                 log_every: int = 0) -> TrainResult:
    """Execute a plan sequence in order over materialized latent clips.

    Raises FloatingPointError on a non-finite loss, with batch statistics
    in the message; diffusion-training failures should be loud.
    """
    result = TrainResult(params=params)
    for stage_idx, plan in enumerate(plans):
        if plan.stage == "temporal_only" and plan.fresh_temporal:
            reinit_temporal(params, cfg, np.random.default_rng([seed, stage_idx, 17]))
        rng = np.random.default_rng([seed, stage_idx, plan.seed])
        opt = AdamW(lr=plan.lr, weight_decay=plan.weight_decay)
        trainable = freeze_mask(params, plan.stage)
        for step in range(plan.steps):
            x0, cond = draw_batch(rng, clips, plan, cfg)
            loss, grads = training_step(params, x0, s, plan, rng, cfg, cond)
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite loss at stage {plan.stage} step {step}: "
                    f"loss={loss}, batch mean={x0.mean():.4g} "
                    f"std={x0.std():.4g} min={x0.min():.4g} max={x0.max():.4g}")
            opt.step(params, grads, trainable)
            result.history.append((plan.stage, step, loss))
            if log_every and step % log_every == 0:
                print(f"[{plan.stage}] step {step:5d} loss {loss:.5f}")
        result.state_param_counts[plan.stage] = opt.n_state_params()
    return result


def write_loss_csv(path, history, stage=None):
    """(step, loss) rows; repr() keeps the float round-trippable."""
    rows = [(st, i, l) for st, i, l in history if stage is None or st == stage]
    with open(path, "w") as fh:
        fh.write("stage,step,loss\n")
        for st, i, l in rows:
            fh.write(f"{st},{i},{l!r}\n")
    return len(rows)
