"""
2D axial rotary position embedding.

The first D_H/2 dims of a query/key are rotated by angles driven by the
token's y coordinate, the last D_H/2 by its x coordinate. Pairs are adjacent
(even, odd) dims; pair t of an axis half rotates at base^(-4t/D_H).
Coordinates are 0-based and CLS (token 0) is never rotated.
"""

from dataclasses import dataclass, replace

import torch

from lookhere.exceptions import InvalidArgumentError
from lookhere.grid import PatchGrid

DEFAULT_BASE_FREQ = 100.0


@dataclass(frozen=True)
class RotaryConfig:
    head_dim: int
    grid: PatchGrid
    base_freq: float = DEFAULT_BASE_FREQ

    def __post_init__(self):
        if self.head_dim < 4 or self.head_dim % 4:
            raise InvalidArgumentError(f"2D rotary needs head_dim divisible by 4, got {self.head_dim}")
        if not self.base_freq > 0:
            raise InvalidArgumentError(f"base_freq must be positive, got {self.base_freq}")


def rotary_frequencies(cfg: RotaryConfig, dtype: torch.dtype = torch.float64) -> torch.Tensor:
    quarter = cfg.head_dim // 4
    exponents = -4.0 * torch.arange(quarter, dtype=dtype) / cfg.head_dim
    return torch.pow(torch.tensor(cfg.base_freq, dtype=dtype), exponents)


def rotary_angles(cfg: RotaryConfig, dtype: torch.dtype = torch.float64) -> torch.Tensor:
    """
    (n + 1, D_H / 2) angle table; row 0 (CLS) is all zeros.
    """
    freqs = rotary_frequencies(cfg, dtype)
    coords = (cfg.grid.coordinate_tensor() - 1).to(dtype)
    angles = torch.cat([coords[:, :1] * freqs, coords[:, 1:] * freqs], dim=1)
    return torch.cat([torch.zeros(1, angles.shape[1], dtype=dtype), angles], dim=0)


def rotate(x: torch.Tensor, angles: torch.Tensor) -> torch.Tensor:
    """
    Rotate adjacent pairs of the last dim of x (..., T, D_H) by angles (T, D_H/2).
    """
    cos, sin = torch.cos(angles), torch.sin(angles)
    x_even, x_odd = x[..., 0::2], x[..., 1::2]
    rotated = torch.stack([x_even * cos - x_odd * sin, x_even * sin + x_odd * cos], dim=-1)
    return rotated.flatten(-2)


def rotate_tokens(x: torch.Tensor, cfg: RotaryConfig) -> torch.Tensor:
    """
    Rotate every token of x (..., n + 1, D_H); token 0 passes through untouched.
    """
    if x.shape[-1] != cfg.head_dim or x.shape[-2] != cfg.grid.tokens:
        raise InvalidArgumentError(
            f"expected (..., {cfg.grid.tokens}, {cfg.head_dim}), got {tuple(x.shape)}"
        )
    rotated = rotate(x[..., 1:, :], rotary_angles(cfg, x.dtype)[1:])
    return torch.cat([x[..., :1, :], rotated], dim=-2)


def apply_rotary(vec: torch.Tensor, token: int, cfg: RotaryConfig) -> torch.Tensor:
    """
    Rotate a single D_H vector as token `token` of the grid.
    """
    if vec.shape != (cfg.head_dim,):
        raise InvalidArgumentError(f"expected a vector of length {cfg.head_dim}, got {tuple(vec.shape)}")
    if token == cfg.grid.cls_index:
        return vec
    i_y, i_x = cfg.grid.coords(token)
    freqs = rotary_frequencies(cfg, vec.dtype)
    angles = torch.cat([(i_y - 1) * freqs, (i_x - 1) * freqs])
    return rotate(vec, angles)


def retune_base(cfg: RotaryConfig, new_base: float) -> RotaryConfig:
    return replace(cfg, base_freq=float(new_base))
