"""Patch tokenization and the fixed sin-cos embedding tables.

Patchify is a pure reshape: each non-overlapping patch of side `patch`
becomes one token holding the flattened patch values.  The linear
projection to model width lives in the network, so
unpatchify(patchify(x)) == x holds exactly.
"""

from dataclasses import dataclass

import numpy as np


def patchify(x: np.ndarray, patch: int) -> np.ndarray:
    """(..., H, W, C) -> (..., P, patch*patch*C) with P = (H/patch)*(W/patch)."""
    *lead, h, w, c = x.shape
    if h % patch or w % patch:
        raise ValueError(f"spatial dims ({h},{w}) not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    x = x.reshape(*lead, gh, patch, gw, patch, c)
    x = np.moveaxis(x, -4, -3)  # (..., gh, gw, patch, patch, c)
    return x.reshape(*lead, gh * gw, patch * patch * c)


def unpatchify(tokens: np.ndarray, grid_h: int, grid_w: int, patch: int,
               channels: int) -> np.ndarray:
    """Inverse of patchify: (..., P, patch*patch*C) -> (..., H, W, C)."""
    *lead, p, pd = tokens.shape
    if p != grid_h * grid_w or pd != patch * patch * channels:
        raise ValueError(f"token shape {tokens.shape} inconsistent with grid "
                         f"({grid_h},{grid_w}), patch {patch}, C {channels}")
    x = tokens.reshape(*lead, grid_h, grid_w, patch, patch, channels)
    x = np.moveaxis(x, -3, -4)  # (..., gh, patch, gw, patch, c)
    return x.reshape(*lead, grid_h * patch, grid_w * patch, channels)


@dataclass(frozen=True)
class TokenGrid:
    """Patch tokens of one clip, (F, P, width), plus grid metadata."""

    tokens: np.ndarray
    grid_h: int
    grid_w: int

    @classmethod
    def from_latent(cls, x: np.ndarray, patch: int) -> "TokenGrid":
        f, h, w, c = x.shape
        return cls(patchify(x, patch), h // patch, w // patch)

    @property
    def frames(self) -> int:
        return self.tokens.shape[0]

    def spatial_index(self) -> np.ndarray:
        """(P, 2) array of (row, col) grid coordinates per spatial token slot."""
        rows, cols = np.divmod(np.arange(self.grid_h * self.grid_w), self.grid_w)
        return np.stack([rows, cols], axis=1)

    def temporal_index(self) -> np.ndarray:
        """(F, P) frame index of every token."""
        f, p = self.tokens.shape[:2]
        return np.repeat(np.arange(f)[:, None], p, axis=1)


def sincos_table(positions, dim: int) -> np.ndarray:
    """Interleaved sinusoidal table: out[..., 2i] = sin(p*w_i), 2i+1 = cos.

    Frequencies w_i = 10000^(-i / (dim/2)); position 0 maps to
    (0, 1, 0, 1, ...).
    """
    if dim % 2:
        raise ValueError(f"embedding width must be even, got {dim}")
    pos = np.asarray(positions, dtype=np.float64)
    half = dim // 2
    freqs = np.power(10000.0, -np.arange(half) / half)
    ang = pos[..., None] * freqs
    out = np.empty(pos.shape + (dim,))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


def positional_embeddings(n_frames: int, grid_h: int, grid_w: int, dim: int):
    """Non-learned sin-cos tables: (spatial (P, dim), temporal (F, dim)).

    The spatial table encodes (row, col) in two interleaved halves and is
    identical for every frame; the temporal table encodes the frame index
    only.  Requires dim divisible by 4 so each spatial half splits into
    sin/cos pairs.
    """
    if dim % 2:
        raise ValueError(f"embedding width must be even, got {dim}")
    if dim % 4:
        raise ValueError(f"spatial embedding needs width divisible by 4, got {dim}")
    rows, cols = np.divmod(np.arange(grid_h * grid_w), grid_w)
    spatial = np.concatenate(
        [sincos_table(rows, dim // 2), sincos_table(cols, dim // 2)], axis=-1
    )
    temporal = sincos_table(np.arange(n_frames), dim)
    return spatial, temporal


def time_basis(t, dim: int) -> np.ndarray:
    """Sinusoidal basis for the diffusion step; t scalar or (B,) ints."""
    return sincos_table(t, dim)
