"""Named parameter store with group tags and freeze-aware helpers.

Groups partition the parameter set:

    embed          patch embedding
    time_mlp       diffusion-step embedding MLP
    temporal_attn  per-block temporal attention + its modulation head
    spatial_attn   per-block spatial attention + its modulation head
    ffn            per-block feed-forward + its modulation head
    head           final output projection
    cond           conditioning-scheme parameters (adaln encoder or
                   cross-attention projections)

Stage freezing in the training module operates purely through these tags.
"""

import numpy as np

from .config import ModelConfig

GROUPS = ("spatial_attn", "temporal_attn", "ffn", "embed", "time_mlp", "head", "cond")

INIT_STD = 0.02

_PREFIX_GROUPS = {"embed": "embed", "time": "time_mlp", "head": "head",
                  "cond": "cond"}
_BLOCK_GROUPS = {"tattn": "temporal_attn", "sattn": "spatial_attn",
                 "ffn": "ffn", "xattn": "cond"}


def infer_group(name: str) -> str:
    """Group tag from a parameter name; used when loading checkpoints."""
    head = name.split(".", 2)
    if head[0] in _PREFIX_GROUPS:
        return _PREFIX_GROUPS[head[0]]
    if head[0].startswith("block") and len(head) > 1 and head[1] in _BLOCK_GROUPS:
        return _BLOCK_GROUPS[head[1]]
    raise ValueError(f"cannot infer group for parameter {name!r}")


class ParamStore:
    """dict-like container: name -> float array, plus name -> group tag."""

    def __init__(self, values: dict, groups: dict):
        unknown = set(groups.values()) - set(GROUPS)
        if unknown:
            raise ValueError(f"unknown group tags: {sorted(unknown)}")
        if set(values) != set(groups):
            raise ValueError("values and groups must cover the same names")
        self.values = values
        self.groups = groups

    def __getitem__(self, name):
        return self.values[name]

    def __setitem__(self, name, arr):
        if name not in self.values:
            raise KeyError(f"unknown parameter {name!r}")
        self.values[name] = arr

    def __contains__(self, name):
        return name in self.values

    def names(self):
        return list(self.values)

    def group_of(self, name: str) -> str:
        return self.groups[name]

    def names_in_group(self, group: str):
        return [n for n, g in self.groups.items() if g == group]

    def n_params(self) -> int:
        return sum(v.size for v in self.values.values())

    def copy(self) -> "ParamStore":
        return ParamStore({n: v.copy() for n, v in self.values.items()},
                          dict(self.groups))

    def astype(self, dtype) -> "ParamStore":
        return ParamStore({n: v.astype(dtype) for n, v in self.values.items()},
                          dict(self.groups))


def _attn_entries(prefix: str, group: str, d: int, rng, zero_out: bool,
                  values, groups, dtype):
    for nm in ("wq", "wk", "wv", "wo"):
        if nm == "wo" and zero_out:
            w = np.zeros((d, d), dtype=dtype)
        else:
            w = rng.normal(0.0, INIT_STD, size=(d, d)).astype(dtype)
        values[f"{prefix}.{nm}"] = w
        values[f"{prefix}.b{nm[1]}"] = np.zeros(d, dtype=dtype)
        groups[f"{prefix}.{nm}"] = group
        groups[f"{prefix}.b{nm[1]}"] = group


def _mod_entries(prefix: str, group: str, d: int, rng, zero: bool,
                 values, groups, dtype):
    if zero:
        w = np.zeros((d, 2 * d), dtype=dtype)
    else:
        w = rng.normal(0.0, INIT_STD, size=(d, 2 * d)).astype(dtype)
    values[f"{prefix}.mod.w"] = w
    values[f"{prefix}.mod.b"] = np.zeros(2 * d, dtype=dtype)
    groups[f"{prefix}.mod.w"] = group
    groups[f"{prefix}.mod.b"] = group


def init_params(cfg: ModelConfig, rng: np.random.Generator,
                dtype=np.float64, zero_init_heads: bool = True) -> ParamStore:
    """Fresh parameter set.

    With zero_init_heads (the default) the modulation heads, the output
    projection, the temporal-attention output projections and the adaln
    condition encoder's last layer start at zero, so the untrained
    network is the identity-plus-noise-free map: modulation is
    (scale=1, shift=0) and predicted noise is exactly 0.  Gradient-check
    tests disable this to probe every path with nonzero weights.
    """
    d, pd, r = cfg.hidden, cfg.patch_dim, cfg.mlp_ratio
    values, groups = {}, {}

    def add(name, arr, group):
        values[name] = arr
        groups[name] = group

    add("embed.w", rng.normal(0.0, INIT_STD, size=(pd, d)).astype(dtype), "embed")
    add("embed.b", np.zeros(d, dtype=dtype), "embed")

    add("time.w1", rng.normal(0.0, INIT_STD, size=(d, d)).astype(dtype), "time_mlp")
    add("time.b1", np.zeros(d, dtype=dtype), "time_mlp")
    add("time.w2", rng.normal(0.0, INIT_STD, size=(d, d)).astype(dtype), "time_mlp")
    add("time.b2", np.zeros(d, dtype=dtype), "time_mlp")

    for i in range(cfg.layers):
        _attn_entries(f"block{i}.tattn", "temporal_attn", d, rng,
                      zero_init_heads, values, groups, dtype)
        _mod_entries(f"block{i}.tattn", "temporal_attn", d, rng,
                     zero_init_heads, values, groups, dtype)
        _attn_entries(f"block{i}.sattn", "spatial_attn", d, rng,
                      False, values, groups, dtype)
        _mod_entries(f"block{i}.sattn", "spatial_attn", d, rng,
                     zero_init_heads, values, groups, dtype)
        if cfg.cond_scheme == "cross_attention":
            _attn_entries(f"block{i}.xattn", "cond", d, rng,
                          zero_init_heads, values, groups, dtype)
        add(f"block{i}.ffn.w1",
            rng.normal(0.0, INIT_STD, size=(d, r * d)).astype(dtype), "ffn")
        add(f"block{i}.ffn.b1", np.zeros(r * d, dtype=dtype), "ffn")
        add(f"block{i}.ffn.w2",
            rng.normal(0.0, INIT_STD, size=(r * d, d)).astype(dtype), "ffn")
        add(f"block{i}.ffn.b2", np.zeros(d, dtype=dtype), "ffn")
        _mod_entries(f"block{i}.ffn", "ffn", d, rng, zero_init_heads,
                     values, groups, dtype)

    if cfg.cond_scheme == "adaln":
        add("cond.mlp.w1", rng.normal(0.0, INIT_STD, size=(d, d)).astype(dtype), "cond")
        add("cond.mlp.b1", np.zeros(d, dtype=dtype), "cond")
        if zero_init_heads:
            add("cond.mlp.w2", np.zeros((d, d), dtype=dtype), "cond")
        else:
            add("cond.mlp.w2", rng.normal(0.0, INIT_STD, size=(d, d)).astype(dtype), "cond")
        add("cond.mlp.b2", np.zeros(d, dtype=dtype), "cond")

    if zero_init_heads:
        add("head.w", np.zeros((d, pd), dtype=dtype), "head")
    else:
        add("head.w", rng.normal(0.0, INIT_STD, size=(d, pd)).astype(dtype), "head")
    add("head.b", np.zeros(pd, dtype=dtype), "head")

    return ParamStore(values, groups)


def reinit_temporal(params: ParamStore, cfg: ModelConfig,
                    rng: np.random.Generator) -> None:
    """Fresh temporal-attention parameters with zero output projections.

    Applied at the start of a temporal-only stage so the residual branch
    starts as the identity and the model initially equals the
    spatial-stage model applied per frame.
    """
    dtype = params["embed.w"].dtype
    d = cfg.hidden
    for i in range(cfg.layers):
        pre = f"block{i}.tattn"
        for nm in ("wq", "wk", "wv"):
            params[f"{pre}.{nm}"] = rng.normal(0.0, INIT_STD, size=(d, d)).astype(dtype)
        params[f"{pre}.wo"] = np.zeros((d, d), dtype=dtype)
        for nm in ("bq", "bk", "bv", "bo"):
            params[f"{pre}.{nm}"] = np.zeros(d, dtype=dtype)
        params[f"{pre}.mod.w"] = np.zeros((d, 2 * d), dtype=dtype)
        params[f"{pre}.mod.b"] = np.zeros(2 * d, dtype=dtype)
