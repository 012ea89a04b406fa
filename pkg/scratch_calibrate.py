"""Scratch: calibrate the two-stage bouncing-ball prediction run."""
import sys
import time

import numpy as np

from video_dit.config import ModelConfig
from video_dit.data import (BallConfig, gen_bouncing_balls, make_tokenizer,
                            clips_to_model_space, model_space_to_clips)
from video_dit.eval import ssim
from video_dit.network import make_eps_fn
from video_dit.params import init_params
from video_dit.sampler import SamplerConfig, predict
from video_dit.schedule import make_schedule
from video_dit.training import TrainPlan, run_training


def experiment(patch, hidden, layers, steps1, steps2, lr, batch, dtype,
               n_clips=192, holdout=16, seed=0, T=200, beta_end=0.1):
    cfg = ModelConfig(layers=layers, hidden=hidden, heads=4, mlp_ratio=4,
                      patch=patch, frames=4, latent_h=16, latent_w=16,
                      latent_c=3, cond_scheme="token_concat", cond_frames=2)
    ds = gen_bouncing_balls(BallConfig(n_clips=n_clips, frames=6), seed=7)
    tok = make_tokenizer("identity")
    lat = clips_to_model_space(ds.clips, tok).astype(dtype)
    train_lat, hold_lat = lat[:-holdout], lat[-holdout:]
    hold_pix = ds.clips[-holdout:]

    s = make_schedule(T, 1e-4, beta_end)
    params = init_params(cfg, np.random.default_rng(seed), dtype=dtype)
    plans = [TrainPlan(stage="spatial", steps=steps1, lr=lr, batch=batch * 2),
             TrainPlan(stage="temporal", steps=steps2, lr=lr, batch=batch)]
    t0 = time.time()
    res = run_training(params, cfg, s, train_lat, plans, seed=seed)
    t_train = time.time() - t0

    sp = res.losses("spatial_only")
    tp = res.losses("temporal_only")
    init_loss = np.mean(sp[:10])
    final_loss = np.mean(tp[-20:])

    t0 = time.time()
    eps_fn = make_eps_fn(params, cfg)
    cond = hold_lat[:, :2]
    _, pred_lat = predict(eps_fn, s, SamplerConfig(seed=123), cond, 4)
    t_sample = time.time() - t0
    pred_pix = model_space_to_clips(pred_lat.astype(np.float64), tok)
    truth = hold_pix[:, 2:]
    ssims = [ssim(p, t) for p, t in zip(pred_pix, truth)]
    print(f"patch={patch} D={hidden} L={layers} dtype={np.dtype(dtype).name} "
          f"steps=({steps1},{steps2}) lr={lr} batch={batch}")
    print(f"  train {t_train:.0f}s  sample {t_sample:.0f}s  "
          f"loss {init_loss:.3f} -> {final_loss:.3f} "
          f"(ratio {final_loss/init_loss:.2f})")
    print(f"  holdout SSIM mean={np.mean(ssims):.3f} min={np.min(ssims):.3f} "
          f"all={['%.2f' % v for v in ssims]}")
    return np.mean(ssims), final_loss / init_loss


if __name__ == "__main__":
    which = sys.argv[1] if len(sys.argv) > 1 else "quick"
    if which == "quick":
        experiment(patch=4, hidden=64, layers=3, steps1=400, steps2=600,
                   lr=2e-3, batch=8, dtype=np.float32)
    elif which == "p2":
        experiment(patch=2, hidden=64, layers=3, steps1=400, steps2=600,
                   lr=2e-3, batch=8, dtype=np.float32)
    elif which == "full":
        experiment(patch=4, hidden=96, layers=3, steps1=800, steps2=1500,
                   lr=2e-3, batch=8, dtype=np.float32)
