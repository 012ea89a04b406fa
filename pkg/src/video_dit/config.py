"""Model architecture configuration and closed-form parameter accounting."""

from dataclasses import dataclass, asdict, replace

COND_SCHEMES = ("none", "adaln", "cross_attention", "token_concat")

# named sizes: (layers, hidden, heads, mlp_ratio)
PRESETS = {
    "small": (12, 384, 6, 4),
    "large": (28, 1152, 16, 4),
}


@dataclass(frozen=True)
class ModelConfig:
    layers: int
    hidden: int
    heads: int
    mlp_ratio: int
    patch: int
    frames: int
    latent_h: int
    latent_w: int
    latent_c: int
    cond_scheme: str = "none"
    cond_frames: int = 0

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("need at least one layer")
        if self.hidden % self.heads:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.hidden % 4:
            raise ValueError(f"hidden must be divisible by 4 for the sin-cos "
                             f"spatial table, got {self.hidden}")
        if self.latent_h % self.patch or self.latent_w % self.patch:
            raise ValueError(
                f"latent dims ({self.latent_h},{self.latent_w}) not divisible "
                f"by patch {self.patch}")
        if self.cond_scheme not in COND_SCHEMES:
            raise ValueError(f"cond_scheme must be one of {COND_SCHEMES}, "
                             f"got {self.cond_scheme!r}")
        if self.cond_scheme != "none" and self.cond_frames < 1:
            raise ValueError("conditional schemes need cond_frames >= 1")

    @property
    def grid_h(self) -> int:
        return self.latent_h // self.patch

    @property
    def grid_w(self) -> int:
        return self.latent_w // self.patch

    @property
    def tokens_per_frame(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * self.latent_c

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def with_scheme(self, scheme: str, cond_frames: int = 0) -> "ModelConfig":
        return replace(self, cond_scheme=scheme, cond_frames=cond_frames)


def preset(name: str, **dims) -> ModelConfig:
    """Named architecture size plus caller-supplied data dimensions."""
    layers, hidden, heads, mlp_ratio = PRESETS[name]
    return ModelConfig(layers=layers, hidden=hidden, heads=heads,
                       mlp_ratio=mlp_ratio, **dims)


def param_count(cfg: ModelConfig) -> int:
    """Exact scalar-parameter count by per-group accounting.

    Must agree with the shapes produced by params.init_params; the
    dedicated test enumerates them.
    """
    d = cfg.hidden
    pd = cfg.patch_dim
    attn = 4 * (d * d + d)           # q, k, v, out projections
    mod = d * 2 * d + 2 * d          # scale/shift head
    ffn = d * (cfg.mlp_ratio * d) + cfg.mlp_ratio * d \
        + (cfg.mlp_ratio * d) * d + d
    block = (attn + mod) + (attn + mod) + (ffn + mod)
    if cfg.cond_scheme == "cross_attention":
        block += attn
    total = cfg.layers * block
    total += pd * d + d              # patch embedding
    total += 2 * (d * d + d)         # time-embedding MLP
    total += d * pd + pd             # output head
    if cfg.cond_scheme == "adaln":
        total += 2 * (d * d + d)     # condition-code MLP
    return total
