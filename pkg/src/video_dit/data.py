"""Synthetic video datasets, the pluggable pixel<->latent tokenizer, and
portable on-disk clip formats.

Clips are float arrays (F, H, W, 3) with values in [0, 1].  Every clip
is reproducible from (seed, index) alone: each index gets its own
Generator, so datasets are order- and global-state-independent.

The `.vclip` container (write_vclip/read_vclip) is little-endian:

    offset  size  field
    0       4     magic "VCLP"
    4       1     version, currently 1
    5       1     dtype code: 0 = uint8 pixels, 1 = float32 latents
    6       16    u32 F, H, W, C
    22      -     frame-major raw data (F*H*W*C elements)

Round trips are bit-exact because the stored dtype is the array's own.
"""

import os
import struct
from dataclasses import dataclass, asdict

import numpy as np

# ---------------------------------------------------------------------------
# model-space normalization (applied at the tokenizer boundary)

def normalize(x):
    """Pixel/latent range [0,1] -> model range [-1,1]."""
    return 2.0 * x - 1.0


def denormalize(y):
    """Model range back to [0,1], clipped."""
    return np.clip((y + 1.0) / 2.0, 0.0, 1.0)


# ---------------------------------------------------------------------------
# tokenizer

@dataclass(frozen=True)
class Tokenizer:
    """Pixels to per-frame latents.  identity: exact pass-through.
    pool: blockwise spatial average by `factor` (decode repeats blocks,
    so decode(encode(x)) is the blockwise-average upsampling of x)."""

    mode: str = "identity"
    factor: int = 1

    def __post_init__(self):
        if self.mode not in ("identity", "pool"):
            raise ValueError(f"unknown tokenizer mode {self.mode!r}")
        if self.mode == "pool" and self.factor < 2:
            raise ValueError("pool tokenizer needs factor >= 2")

    def encode(self, clip: np.ndarray) -> np.ndarray:
        if self.mode == "identity":
            return clip
        f = self.factor
        fr, h, w, c = clip.shape
        if h % f or w % f:
            raise ValueError(f"frame dims ({h},{w}) not divisible by factor {f}")
        return clip.reshape(fr, h // f, f, w // f, f, c).mean(axis=(2, 4))

    def decode(self, latent: np.ndarray) -> np.ndarray:
        if self.mode == "identity":
            return latent
        return latent.repeat(self.factor, axis=1).repeat(self.factor, axis=2)

    def latent_hw(self, height: int, width: int):
        if self.mode == "identity":
            return height, width
        return height // self.factor, width // self.factor


def make_tokenizer(name: str, factor: int = 2) -> Tokenizer:
    if name == "identity":
        return Tokenizer("identity")
    if name == "pool":
        return Tokenizer("pool", factor)
    raise ValueError(f"unknown tokenizer {name!r}")


# ---------------------------------------------------------------------------
# ball physics

def simulate_balls(pos0, vel, radius, frames, height, width):
    """Constant-velocity balls with elastic wall reflection.

    pos0, vel: (n_balls, 2) as (x, y); returns positions (frames, n_balls, 2).
    Positions stay within [radius, dim-1-radius] on both axes.
    """
    lo = np.array([radius, radius], dtype=np.float64)
    hi = np.array([width - 1.0 - radius, height - 1.0 - radius], dtype=np.float64)
    if np.any(hi <= lo):
        raise ValueError(f"ball radius {radius} does not fit in {height}x{width}")
    pos = np.array(pos0, dtype=np.float64)
    v = np.array(vel, dtype=np.float64)
    out = np.empty((frames, pos.shape[0], 2))
    for f in range(frames):
        out[f] = pos
        pos = pos + v
        for ax in range(2):
            under = pos[:, ax] < lo[ax]
            pos[under, ax] = 2 * lo[ax] - pos[under, ax]
            v[under, ax] = -v[under, ax]
            over = pos[:, ax] > hi[ax]
            pos[over, ax] = 2 * hi[ax] - pos[over, ax]
            v[over, ax] = -v[over, ax]
    return out


_BALL_COLORS = np.array([[1.0, 0.3, 0.2], [0.25, 1.0, 0.3]])


def render_balls(positions, radius, height, width, colors=None):
    """Anti-aliased discs on black, (frames, H, W, 3) in [0, 1]."""
    frames, n_balls, _ = positions.shape
    if colors is None:
        colors = np.ones((n_balls, 3)) if n_balls == 1 else _BALL_COLORS[:n_balls]
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    out = np.zeros((frames, height, width, 3))
    for f in range(frames):
        for b in range(n_balls):
            cx, cy = positions[f, b]
            dist = np.sqrt((xs - cx) ** 2 + (ys - cy) ** 2)
            mask = np.clip(radius + 0.5 - dist, 0.0, 1.0)
            out[f] += mask[..., None] * colors[b]
    return np.clip(out, 0.0, 1.0)


def contact_frames(positions, radius):
    """Frame indices where any two ball centers are within 2*radius."""
    frames, n_balls, _ = positions.shape
    if n_balls < 2:
        return np.array([], dtype=int)
    d = positions[:, 0] - positions[:, 1]
    dist = np.sqrt((d * d).sum(axis=1))
    return np.flatnonzero(dist <= 2.0 * radius)


@dataclass
class BallConfig:
    n_clips: int = 64
    frames: int = 6
    height: int = 16
    width: int = 16
    n_balls: int = 1
    radius: float = 2.5
    speed_min: float = 0.6
    speed_max: float = 1.6
    # pair mode: balance labels by index parity and require first contact
    # inside [contact_lo, contact_hi) for positive clips
    balanced_pairs: bool = True
    contact_lo: int = 0
    contact_hi: int = 10 ** 9

    def to_json(self):
        return asdict(self)


@dataclass
class BouncingBallDataset:
    config: BallConfig
    seed: int
    clips: np.ndarray        # (N, F, H, W, 3) in [0, 1]
    positions: np.ndarray    # (N, F, n_balls, 2)
    labels: np.ndarray | None  # (N,) bool for pair mode, else None

    def __len__(self):
        return self.config.n_clips


def _draw_trajectory(rng, cfg: BallConfig):
    lo = cfg.radius
    hix = cfg.width - 1.0 - cfg.radius
    hiy = cfg.height - 1.0 - cfg.radius
    pos0 = np.stack([rng.uniform(lo, hix, size=cfg.n_balls),
                     rng.uniform(lo, hiy, size=cfg.n_balls)], axis=1)
    speed = rng.uniform(cfg.speed_min, cfg.speed_max, size=cfg.n_balls)
    ang = rng.uniform(0.0, 2 * np.pi, size=cfg.n_balls)
    vel = np.stack([speed * np.cos(ang), speed * np.sin(ang)], axis=1)
    return simulate_balls(pos0, vel, cfg.radius, cfg.frames, cfg.height, cfg.width)


def _clip_for_index(cfg: BallConfig, seed: int, index: int):
    rng = np.random.default_rng([seed, index])
    if cfg.n_balls == 1 or not cfg.balanced_pairs:
        positions = _draw_trajectory(rng, cfg)
        label = None
        if cfg.n_balls >= 2:
            label = contact_frames(positions, cfg.radius).size > 0
        return positions, label
    target = bool(index % 2)
    for _ in range(10000):
        positions = _draw_trajectory(rng, cfg)
        touched = contact_frames(positions, cfg.radius)
        if target and touched.size and cfg.contact_lo <= touched[0] < cfg.contact_hi:
            return positions, True
        if not target and touched.size == 0:
            return positions, False
    raise RuntimeError(f"could not satisfy label {target} for clip {index}; "
                       f"geometry too constrained")


def gen_bouncing_balls(cfg: BallConfig, seed: int) -> BouncingBallDataset:
    if cfg.height < 8 or cfg.width < 8:
        raise ValueError("frames must be at least 8x8")
    if 2 * cfg.radius + 2 >= min(cfg.height, cfg.width):
        raise ValueError(f"ball radius {cfg.radius} too large for "
                         f"{cfg.height}x{cfg.width}")
    all_pos = np.empty((cfg.n_clips, cfg.frames, cfg.n_balls, 2))
    clips = np.empty((cfg.n_clips, cfg.frames, cfg.height, cfg.width, 3))
    labels = np.empty(cfg.n_clips, dtype=bool) if cfg.n_balls >= 2 else None
    for i in range(cfg.n_clips):
        positions, label = _clip_for_index(cfg, seed, i)
        all_pos[i] = positions
        clips[i] = render_balls(positions, cfg.radius, cfg.height, cfg.width)
        if labels is not None:
            labels[i] = label
    return BouncingBallDataset(cfg, seed, clips, all_pos, labels)


# ---------------------------------------------------------------------------
# moving shapes (unconditional-generation corpus)

@dataclass
class ShapesConfig:
    n_clips: int = 64
    frames: int = 4
    height: int = 16
    width: int = 16
    size: float = 2.5
    speed_min: float = 0.5
    speed_max: float = 1.5

    def to_json(self):
        return asdict(self)


_SHAPE_KINDS = ("square", "disc")


def _render_shape(kind, positions, size, height, width, color):
    frames = positions.shape[0]
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    out = np.zeros((frames, height, width, 3))
    for f in range(frames):
        cx, cy = positions[f, 0]
        if kind == "disc":
            dist = np.sqrt((xs - cx) ** 2 + (ys - cy) ** 2)
            mask = np.clip(size + 0.5 - dist, 0.0, 1.0)
        else:
            dx = np.clip(size + 0.5 - np.abs(xs - cx), 0.0, 1.0)
            dy = np.clip(size + 0.5 - np.abs(ys - cy), 0.0, 1.0)
            mask = dx * dy
        out[f] = mask[..., None] * color
    return out


@dataclass
class MovingShapesDataset:
    config: ShapesConfig
    seed: int
    clips: np.ndarray
    kinds: list

    def __len__(self):
        return self.config.n_clips


def gen_moving_shapes(cfg: ShapesConfig, seed: int) -> MovingShapesDataset:
    """Bouncing squares and discs with per-clip constant color; shape kinds
    alternate by index so counts are balanced."""
    clips = np.empty((cfg.n_clips, cfg.frames, cfg.height, cfg.width, 3))
    kinds = []
    for i in range(cfg.n_clips):
        rng = np.random.default_rng([seed, i])
        kind = _SHAPE_KINDS[i % len(_SHAPE_KINDS)]
        ball_cfg = BallConfig(n_clips=1, frames=cfg.frames, height=cfg.height,
                              width=cfg.width, n_balls=1, radius=cfg.size,
                              speed_min=cfg.speed_min, speed_max=cfg.speed_max)
        positions = _draw_trajectory(rng, ball_cfg)
        color = rng.uniform(0.5, 1.0, size=3)
        clips[i] = _render_shape(kind, positions, cfg.size, cfg.height,
                                 cfg.width, color)
        kinds.append(kind)
    return MovingShapesDataset(cfg, seed, clips, kinds)


# ---------------------------------------------------------------------------
# on-disk formats

_VCLIP_MAGIC = b"VCLP"
_VCLIP_VERSION = 1
_DTYPE_CODES = {0: np.uint8, 1: np.float32}


def to_uint8(clip: np.ndarray) -> np.ndarray:
    """[0,1] float frames to uint8 pixels."""
    return np.clip(np.rint(clip * 255.0), 0, 255).astype(np.uint8)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float64) / 255.0


def write_vclip(path, arr: np.ndarray):
    """Store a (F, H, W, C) uint8 or float32 array; see module docstring."""
    if arr.ndim != 4:
        raise ValueError(f"clip must be 4-d (F,H,W,C), got shape {arr.shape}")
    if arr.dtype == np.uint8:
        code = 0
    elif arr.dtype == np.float32:
        code = 1
    else:
        raise ValueError(f"vclip stores uint8 or float32, got {arr.dtype}")
    f, h, w, c = arr.shape
    header = _VCLIP_MAGIC + struct.pack("<BBIIII", _VCLIP_VERSION, code, f, h, w, c)
    payload = np.ascontiguousarray(arr)
    if code == 1:
        payload = payload.astype("<f4", copy=False)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def read_vclip(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 22:
        raise ValueError(f"{path}: truncated header ({len(blob)} bytes)")
    if blob[:4] != _VCLIP_MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}")
    version, code, f, h, w, c = struct.unpack("<BBIIII", blob[4:22])
    if version != _VCLIP_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    if code not in _DTYPE_CODES:
        raise ValueError(f"{path}: unknown dtype code {code}")
    dt = np.dtype(_DTYPE_CODES[code]).newbyteorder("<")
    expect = f * h * w * c * dt.itemsize
    data = blob[22:]
    if len(data) != expect:
        raise ValueError(f"{path}: payload is {len(data)} bytes, expected {expect}")
    arr = np.frombuffer(data, dtype=dt).reshape(f, h, w, c)
    return arr.astype(_DTYPE_CODES[code])


def export_frames(clip: np.ndarray, out_dir, prefix="frame"):
    """One binary PPM (P6) per frame of a [0,1] pixel clip."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    pixels = to_uint8(clip)
    width = len(str(max(clip.shape[0] - 1, 1)))
    for i, frame in enumerate(pixels):
        h, w, _ = frame.shape
        path = os.path.join(out_dir, f"{prefix}_{i:0{max(width, 3)}d}.ppm")
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode())
            fh.write(frame.tobytes())
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# dataset construction from run configs

def dataset_from_config(dcfg: dict, seed=None):
    """Build a dataset from the `data` section of a run config."""
    d = dict(dcfg)
    kind = d.pop("kind")
    if seed is None:
        seed = d.pop("seed", 0)
    else:
        d.pop("seed", None)
    d.pop("tokenizer", None)
    d.pop("pool_factor", None)
    d.pop("holdout", None)
    if kind == "bouncing_balls":
        return gen_bouncing_balls(BallConfig(**d), seed)
    if kind == "moving_shapes":
        return gen_moving_shapes(ShapesConfig(**d), seed)
    raise ValueError(f"unknown dataset kind {kind!r}")


def clips_to_model_space(clips: np.ndarray, tokenizer: Tokenizer) -> np.ndarray:
    """Pixel clips (N, F, H, W, 3) -> normalized latents for diffusion."""
    lat = np.stack([tokenizer.encode(c) for c in clips])
    return normalize(lat)


def model_space_to_clips(latents: np.ndarray, tokenizer: Tokenizer) -> np.ndarray:
    single = latents.ndim == 4
    lat = denormalize(latents[None] if single else latents)
    out = np.stack([tokenizer.decode(l) for l in lat])
    return out[0] if single else out
