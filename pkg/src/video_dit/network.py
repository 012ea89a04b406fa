"""The noise-prediction backbone: patch embedding, sin-cos positions,
step-embedding MLP, and a stack of blocks running temporal attention,
spatial attention and a feed-forward net, each behind a modulated
pre-norm residual.

Forward/backward are written explicitly: forward_with_cache records the
intermediates each sub-layer needs, backward walks them in reverse and
returns parameter gradients plus gradients w.r.t. the noisy and
conditional latents.  Everything is a pure function of (params, inputs);
nothing here mutates the ParamStore.

Conditioning schemes
--------------------
none            unconditional, modulation from the step embedding only
adaln           a pooled condition code is added to the step embedding
                before the per-block modulation heads
cross_attention each block gains a cross-attention sub-layer; queries are
                the noisy tokens, keys/values the embedded conditional
                tokens (with their own positions added)
token_concat    conditional tokens are prepended along the frame axis,
                share the absolute temporal positions 0..K-1, and the
                head output for those positions is discarded
"""

import numpy as np

from . import conditioning as cd
from . import layers as L
from . import tokens as tk
from .config import ModelConfig
from .params import ParamStore


def _t_array(t, batch: int) -> np.ndarray:
    t = np.asarray(t)
    if t.ndim == 0:
        t = np.full(batch, int(t))
    if t.shape != (batch,):
        raise ValueError(f"t must be scalar or shape ({batch},), got {t.shape}")
    if not np.issubdtype(t.dtype, np.integer):
        raise ValueError("t must be integer-valued")
    if np.any(t < 1):
        raise ValueError("diffusion steps are 1-indexed; got t < 1")
    return t.astype(np.int64)


def _check_inputs(cfg: ModelConfig, xt, cond):
    if xt.ndim != 5:
        raise ValueError(f"xt must be (B, F, H, W, C), got shape {xt.shape}")
    b, f, h, w, c = xt.shape
    if (h, w, c) != (cfg.latent_h, cfg.latent_w, cfg.latent_c):
        raise ValueError(f"latent dims {(h, w, c)} do not match config "
                         f"{(cfg.latent_h, cfg.latent_w, cfg.latent_c)}")
    if cfg.cond_scheme == "none":
        if cond is not None:
            raise ValueError("cond given but cond_scheme is 'none'")
        return
    if cond is None:
        raise ValueError(f"cond_scheme {cfg.cond_scheme!r} requires cond frames")
    if cond.ndim != 5 or cond.shape[0] != b or cond.shape[2:] != (h, w, c):
        raise ValueError(f"cond shape {cond.shape} incompatible with xt {xt.shape}")
    if cond.shape[1] < 1:
        raise ValueError("need at least one conditional frame")


def _mod_fwd(p, prefix, c, xh):
    """Modulated pre-norm input: ada LayerNorm driven by the c vector."""
    d = xh.shape[-1]
    modv, lin_c = L.linear_fwd(c, p[f"{prefix}.mod.w"], p[f"{prefix}.mod.b"])
    xm, mod_c = L.modulate_fwd(xh, modv[:, :d], modv[:, d:])
    return xm, (lin_c, mod_c)


def _mod_bwd(dxm, cache, prefix, grads):
    lin_c, mod_c = cache
    dxh, dsc, dsh = L.modulate_bwd(dxm, mod_c)
    dc, dw, db = L.linear_bwd(np.concatenate([dsc, dsh], axis=-1), lin_c)
    _acc(grads, f"{prefix}.mod.w", dw)
    _acc(grads, f"{prefix}.mod.b", db)
    return dxh, dc


def _attn_params(p, prefix):
    return (p[f"{prefix}.wq"], p[f"{prefix}.bq"], p[f"{prefix}.wk"],
            p[f"{prefix}.bk"], p[f"{prefix}.wv"], p[f"{prefix}.bv"],
            p[f"{prefix}.wo"], p[f"{prefix}.bo"])


def _acc(grads, name, val):
    if name in grads:
        grads[name] += val
    else:
        grads[name] = val


def _attn_grads(grads, prefix, pgrads):
    for nm, g in zip(("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"), pgrads):
        _acc(grads, f"{prefix}.{nm}", g)


def _block_fwd(p, i, x, c, cfg, bypass_temporal, mem):
    b, t, pp, d = x.shape
    cache = {"shape": (b, t, pp, d)}

    if not bypass_temporal:
        xh, ln_c = L.layernorm_fwd(x)
        xm, mod_c = _mod_fwd(p, f"block{i}.tattn", c, xh)
        xr = np.ascontiguousarray(xm.transpose(0, 2, 1, 3).reshape(b * pp, t, d))
        y, attn_c = L.mha_fwd(xr, xr, cfg.heads, *_attn_params(p, f"block{i}.tattn"))
        x = x + y.reshape(b, pp, t, d).transpose(0, 2, 1, 3)
        cache["tattn"] = (ln_c, mod_c, attn_c)

    xh, ln_c = L.layernorm_fwd(x)
    xm, mod_c = _mod_fwd(p, f"block{i}.sattn", c, xh)
    xr = np.ascontiguousarray(xm.reshape(b * t, pp, d))
    y, attn_c = L.mha_fwd(xr, xr, cfg.heads, *_attn_params(p, f"block{i}.sattn"))
    x = x + y.reshape(b, t, pp, d)
    cache["sattn"] = (ln_c, mod_c, attn_c)

    if mem is not None:
        y, xattn_c = cd.xattn_fwd(p, i, x, mem, cfg.heads)
        x = x + y
        cache["xattn"] = xattn_c

    xh, ln_c = L.layernorm_fwd(x)
    xm, mod_c = _mod_fwd(p, f"block{i}.ffn", c, xh)
    h1, c1 = L.linear_fwd(xm, p[f"block{i}.ffn.w1"], p[f"block{i}.ffn.b1"])
    a, cg = L.gelu_fwd(h1)
    h2, c2 = L.linear_fwd(a, p[f"block{i}.ffn.w2"], p[f"block{i}.ffn.b2"])
    x = x + h2
    cache["ffn"] = (ln_c, mod_c, c1, cg, c2)
    return x, cache


def _block_bwd(dseq, cache, i, grads, has_mem):
    b, t, pp, d = cache["shape"]
    dc = None
    dmem = None

    ln_c, mod_c, c1, cg, c2 = cache["ffn"]
    da, dw2, db2 = L.linear_bwd(dseq, c2)
    dh1 = L.gelu_bwd(da, cg)
    dxm, dw1, db1 = L.linear_bwd(dh1, c1)
    _acc(grads, f"block{i}.ffn.w1", dw1)
    _acc(grads, f"block{i}.ffn.b1", db1)
    _acc(grads, f"block{i}.ffn.w2", dw2)
    _acc(grads, f"block{i}.ffn.b2", db2)
    dxh, dci = _mod_bwd(dxm, mod_c, f"block{i}.ffn", grads)
    dseq = dseq + L.layernorm_bwd(dxh, ln_c)
    dc = dci

    if has_mem:
        ln_c, attn_c = cache["xattn"]
        dy = np.ascontiguousarray(dseq.reshape(b, t * pp, d))
        dxq, dmem, pgrads = L.mha_bwd(dy, attn_c)
        _attn_grads(grads, f"block{i}.xattn", pgrads)
        dseq = dseq + L.layernorm_bwd(dxq.reshape(b, t, pp, d), ln_c)

    ln_c, mod_c, attn_c = cache["sattn"]
    dy = np.ascontiguousarray(dseq.reshape(b * t, pp, d))
    dxq, dxkv, pgrads = L.mha_bwd(dy, attn_c)
    _attn_grads(grads, f"block{i}.sattn", pgrads)
    dxm = (dxq + dxkv).reshape(b, t, pp, d)
    dxh, dci = _mod_bwd(dxm, mod_c, f"block{i}.sattn", grads)
    dseq = dseq + L.layernorm_bwd(dxh, ln_c)
    dc = dc + dci

    if "tattn" in cache:
        ln_c, mod_c, attn_c = cache["tattn"]
        dy = np.ascontiguousarray(
            dseq.transpose(0, 2, 1, 3).reshape(b * pp, t, d))
        dxq, dxkv, pgrads = L.mha_bwd(dy, attn_c)
        _attn_grads(grads, f"block{i}.tattn", pgrads)
        dxm = (dxq + dxkv).reshape(b, pp, t, d).transpose(0, 2, 1, 3)
        dxh, dci = _mod_bwd(dxm, mod_c, f"block{i}.tattn", grads)
        dseq = dseq + L.layernorm_bwd(dxh, ln_c)
        dc = dc + dci

    return dseq, dc, dmem


def forward_with_cache(params: ParamStore, cfg: ModelConfig, xt, t, cond=None,
                       *, bypass_temporal: bool = False,
                       return_full: bool = False):
    """Predict the noise for xt at step t; also return the backward cache.

    xt: (B, F, H, W, C) noisy latents; t: scalar or (B,) step indices;
    cond: (B, K, H, W, C) conditional latents when the scheme needs them.
    With return_full and token_concat, the unsliced (B, K+F, ...) head
    output is returned alongside.
    """
    p = params
    _check_inputs(cfg, xt, cond)
    b, f, h, w, c_ch = xt.shape
    gh, gw, pp, d = cfg.grid_h, cfg.grid_w, cfg.tokens_per_frame, cfg.hidden
    t_arr = _t_array(t, b)
    scheme = cfg.cond_scheme
    k = 0 if cond is None else cond.shape[1]

    cache = {"cfg": cfg, "scheme": scheme, "k": k, "bypass": bypass_temporal,
             "in_shape": xt.shape}

    tok = tk.patchify(xt, cfg.patch)
    x, cache["embed_x"] = L.linear_fwd(tok, p["embed.w"], p["embed.b"])

    if scheme == "token_concat":
        ce, cache["embed_c"] = cd.embed_cond_tokens(p, cfg, cond)
        x, _ = cd.token_concat(ce, x)
    t_frames = x.shape[1]

    spat, temp = tk.positional_embeddings(t_frames, gh, gw, d)
    spat = spat.astype(x.dtype)
    temp = temp.astype(x.dtype)
    x = x + spat[None, None] + temp[None, :, None]

    basis = tk.time_basis(t_arr, d).astype(x.dtype)
    h1, cache["time1"] = L.linear_fwd(basis, p["time.w1"], p["time.b1"])
    a1, cache["time_g"] = L.gelu_fwd(h1)
    temb, cache["time2"] = L.linear_fwd(a1, p["time.w2"], p["time.b2"])
    c = temb

    mem = None
    if scheme == "adaln":
        ce, cache["embed_c"] = cd.embed_cond_tokens(p, cfg, cond)
        code, cache["cond_code"] = cd.cond_code_fwd(p, ce)
        c = c + code
    elif scheme == "cross_attention":
        mem, cache["embed_c"] = cd.build_cond_memory(p, cfg, cond)

    blocks = []
    for i in range(cfg.layers):
        x, bc = _block_fwd(p, i, x, c, cfg, bypass_temporal, mem)
        blocks.append(bc)
    cache["blocks"] = blocks

    xn, cache["final_ln"] = L.layernorm_fwd(x)
    out, cache["head"] = L.linear_fwd(xn, p["head.w"], p["head.b"])

    if scheme == "token_concat":
        out_main = out[:, k:]
    else:
        out_main = out
    eps = tk.unpatchify(out_main, gh, gw, cfg.patch, c_ch)

    if return_full:
        full = tk.unpatchify(out, gh, gw, cfg.patch, c_ch)
        return eps, cache, full
    return eps, cache


def forward(params, cfg, xt, t, cond=None, *, bypass_temporal=False):
    """Noise prediction only; shape equals xt's shape for every scheme."""
    return forward_with_cache(params, cfg, xt, t, cond,
                              bypass_temporal=bypass_temporal)[0]


def backward(cache, d_eps):
    """Backprop d_eps (gradient w.r.t. the predicted noise) through the
    cached forward pass.

    Returns (grads, d_xt, d_cond); d_cond is None for the unconditional
    scheme.  Gradients cover every parameter the forward pass touched;
    bypassed sub-layers contribute none.
    """
    cfg = cache["cfg"]
    scheme = cache["scheme"]
    k = cache["k"]
    b, f, h, w, c_ch = cache["in_shape"]
    gh, gw, pp, d = cfg.grid_h, cfg.grid_w, cfg.tokens_per_frame, cfg.hidden
    grads = {}

    dout_main = tk.patchify(d_eps, cfg.patch)
    if scheme == "token_concat":
        dout = np.zeros((b, k + f, pp, cfg.patch_dim), dtype=d_eps.dtype)
        dout[:, k:] = dout_main
    else:
        dout = dout_main

    dxn, dhw, dhb = L.linear_bwd(dout, cache["head"])
    _acc(grads, "head.w", dhw)
    _acc(grads, "head.b", dhb)
    dseq = L.layernorm_bwd(dxn, cache["final_ln"])

    dc = np.zeros((b, d), dtype=d_eps.dtype)
    dmem = None
    has_mem = scheme == "cross_attention"
    for i in reversed(range(cfg.layers)):
        dseq, dci, dmem_i = _block_bwd(dseq, cache["blocks"][i], i, grads, has_mem)
        dc += dci
        if has_mem:
            dmem = dmem_i if dmem is None else dmem + dmem_i

    d_cond = None
    if scheme == "adaln":
        c1, cg, c2, ce_shape = cache["cond_code"]
        dag, dw2, db2 = L.linear_bwd(dc, c2)  # c = temb + code
        _acc(grads, "cond.mlp.w2", dw2)
        _acc(grads, "cond.mlp.b2", db2)
        dm1 = L.gelu_bwd(dag, cg)
        dpooled, dw1, db1 = L.linear_bwd(dm1, c1)
        _acc(grads, "cond.mlp.w1", dw1)
        _acc(grads, "cond.mlp.b1", db1)
        bb, kk, ppx, _ = ce_shape
        dce = np.broadcast_to(dpooled[:, None, None, :] / (kk * ppx), ce_shape)
        dctok, dew, deb = L.linear_bwd(dce, cache["embed_c"])
        _acc(grads, "embed.w", dew)
        _acc(grads, "embed.b", deb)
        d_cond = tk.unpatchify(dctok, gh, gw, cfg.patch, c_ch)
    elif scheme == "cross_attention":
        dce = dmem.reshape(b, k, pp, d)
        dctok, dew, deb = L.linear_bwd(dce, cache["embed_c"])
        _acc(grads, "embed.w", dew)
        _acc(grads, "embed.b", deb)
        d_cond = tk.unpatchify(dctok, gh, gw, cfg.patch, c_ch)

    dtemb = dc
    da1, dw2, db2 = L.linear_bwd(dtemb, cache["time2"])
    _acc(grads, "time.w2", dw2)
    _acc(grads, "time.b2", db2)
    dh1 = L.gelu_bwd(da1, cache["time_g"])
    _, dw1, db1 = L.linear_bwd(dh1, cache["time1"])
    _acc(grads, "time.w1", dw1)
    _acc(grads, "time.b1", db1)

    if scheme == "token_concat":
        dce = dseq[:, :k]
        dx_emb = dseq[:, k:]
        dctok, dew, deb = L.linear_bwd(dce, cache["embed_c"])
        _acc(grads, "embed.w", dew)
        _acc(grads, "embed.b", deb)
        d_cond = tk.unpatchify(dctok, gh, gw, cfg.patch, c_ch)
    else:
        dx_emb = dseq

    dtok, dew, deb = L.linear_bwd(dx_emb, cache["embed_x"])
    _acc(grads, "embed.w", dew)
    _acc(grads, "embed.b", deb)
    d_xt = tk.unpatchify(dtok, gh, gw, cfg.patch, c_ch)

    return grads, d_xt, d_cond


def loss_and_grads(params, cfg, xt, t, eps_true, cond=None,
                   *, bypass_temporal=False):
    """Mean-squared noise-prediction loss and its parameter gradients.

    For token_concat the network already returns only the noisy-frame
    predictions, so the loss runs over exactly those frames.
    """
    eps, cache = forward_with_cache(params, cfg, xt, t, cond,
                                    bypass_temporal=bypass_temporal)
    diff = eps - eps_true
    loss = float(np.mean(diff * diff))
    d_eps = 2.0 * diff / diff.size
    grads, d_xt, d_cond = backward(cache, d_eps)
    return loss, grads, (d_xt, d_cond)


def make_eps_fn(params, cfg, *, bypass_temporal=False):
    """Bind (params, cfg) into the eps(xt, t, cond) callable samplers use."""
    def eps_fn(xt, t, cond=None):
        return forward(params, cfg, xt, t, cond, bypass_temporal=bypass_temporal)
    return eps_fn


def collect_attention_probs(cache):
    """All softmax probability tensors of a cached forward pass."""
    probs = []
    for bc in cache["blocks"]:
        for key in ("tattn", "sattn", "xattn"):
            if key in bc:
                attn_c = bc[key][-1]
                probs.append(attn_c[9])
    return probs
