"""Scratch: FD gradient check of the full network, all schemes."""
import numpy as np
from video_dit.config import ModelConfig
from video_dit.params import init_params
from video_dit import network


def fd_check(scheme, bypass_temporal=False, seed=0):
    cfg = ModelConfig(layers=2, hidden=16, heads=2, mlp_ratio=4, patch=2,
                      frames=2, latent_h=4, latent_w=4, latent_c=1,
                      cond_scheme=scheme, cond_frames=2 if scheme != "none" else 0)
    rng = np.random.default_rng(seed)
    params = init_params(cfg, rng, zero_init_heads=False)
    B = 2
    xt = rng.normal(size=(B, cfg.frames, 4, 4, 1))
    eps_true = rng.normal(size=xt.shape)
    cond = rng.normal(size=(B, 2, 4, 4, 1)) if scheme != "none" else None
    t = np.array([3, 7])

    loss, grads, (dxt, dcond) = network.loss_and_grads(
        params, cfg, xt, t, eps_true, cond, bypass_temporal=bypass_temporal)

    def loss_only():
        eps = network.forward(params, cfg, xt, t, cond, bypass_temporal=bypass_temporal)
        d = eps - eps_true
        return float(np.mean(d * d))

    hstep = 1e-6
    worst = 0.0
    worst_name = None
    checked = 0
    for name in params.names():
        if bypass_temporal and ".tattn." in name:
            assert name not in grads, name
            continue
        g = grads[name]
        w = params[name]
        # probe a few entries per tensor for speed in scratch mode
        flat_idx = np.random.default_rng(hash(name) % 2**32).choice(
            w.size, size=min(6, w.size), replace=False)
        for fi in flat_idx:
            orig = w.flat[fi]
            w.flat[fi] = orig + hstep
            lp = loss_only()
            w.flat[fi] = orig - hstep
            lm = loss_only()
            w.flat[fi] = orig
            fd = (lp - lm) / (2 * hstep)
            an = g.flat[fi]
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-10)
            checked += 1
            if rel > worst:
                worst, worst_name = rel, (name, fi, an, fd)
    print(f"{scheme:16s} bypass={bypass_temporal!s:5s} loss={loss:.4f} "
          f"checked={checked} worst_rel={worst:.2e} at {worst_name}")
    return worst


if __name__ == "__main__":
    bad = 0.0
    for scheme in ("none", "adaln", "cross_attention", "token_concat"):
        bad = max(bad, fd_check(scheme))
    bad = max(bad, fd_check("none", bypass_temporal=True))
    print("OVERALL worst rel err:", bad)
