"""
Input-embedding position encodings (added to patch embeddings before the
first layer) and their resolution-change interpolation.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange

from lookhere.config import settings
from lookhere.enums import EmbeddingFamily
from lookhere.exceptions import InvalidArgumentError
from lookhere.grid import PatchGrid, make_grid

logger = logging.getLogger(__name__)

SINCOS_BASE = 10000.0
INIT_STD = 0.02


@dataclass(frozen=True)
class EmbeddingTable:
    """
    n x D position embeddings for one grid. Factorized tables keep their
    axis tables; Fourier tables keep the embedder that produced them.
    """
    grid: PatchGrid
    values: torch.Tensor
    family: EmbeddingFamily
    axes: Optional[Tuple[torch.Tensor, torch.Tensor]] = None
    embedder: Optional["FourierEmbedder"] = None

    @property
    def width(self) -> int:
        return self.values.shape[1]


# ============================================================================
# Fixed sinusoids
# ============================================================================

def _sincos_1d(positions: torch.Tensor, dim: int, base: float = SINCOS_BASE) -> torch.Tensor:
    half = dim // 2
    omega = 1.0 / base ** (torch.arange(half, dtype=positions.dtype) / half)
    angles = positions[:, None] * omega[None, :]
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=1)


def sincos_2d(grid: PatchGrid, D: int, base: float = SINCOS_BASE, dtype: Optional[torch.dtype] = None) -> EmbeddingTable:
    """
    First D/2 dims encode i_y, last D/2 encode i_x; positions are 0-based.
    """
    if D < 4 or D % 4:
        raise InvalidArgumentError(f"sincos_2d needs D divisible by 4, got {D}")
    dtype = dtype or settings.torch_dtype
    coords = (grid.coordinate_tensor() - 1).to(dtype)
    values = torch.cat(
        [_sincos_1d(coords[:, 0], D // 2, base), _sincos_1d(coords[:, 1], D // 2, base)],
        dim=1,
    )
    return EmbeddingTable(grid=grid, values=values, family=EmbeddingFamily.SINCOS_2D)


# ============================================================================
# Learnable tables
# ============================================================================

def _gaussian(shape, seed: int, dtype: torch.dtype, std: float = INIT_STD) -> torch.Tensor:
    generator = torch.Generator().manual_seed(seed)
    return torch.randn(shape, generator=generator, dtype=dtype) * std


def learned_1d_init(
    n: int,
    D: int,
    seed: int = 0,
    grid: Optional[PatchGrid] = None,
    dtype: Optional[torch.dtype] = None,
) -> EmbeddingTable:
    """
    Seeded Gaussian(0, 0.02) n x D table. Without a grid the rows are laid
    out as a 1 x n lattice.
    """
    dtype = dtype or settings.torch_dtype
    grid = grid or make_grid(1, n)
    if grid.n != n:
        raise InvalidArgumentError(f"grid {grid} has {grid.n} patches, table has {n} rows")
    return EmbeddingTable(grid=grid, values=_gaussian((n, D), seed, dtype), family=EmbeddingFamily.LEARNED_1D)


def factorized_from_axes(grid: PatchGrid, y_table: torch.Tensor, x_table: torch.Tensor) -> EmbeddingTable:
    """
    values[i] = Y[i_y] + X[i_x].
    """
    if y_table.shape[0] != grid.n_y or x_table.shape[0] != grid.n_x:
        raise InvalidArgumentError(
            f"axis tables ({y_table.shape[0]}, {x_table.shape[0]}) do not match grid {grid}"
        )
    coords = grid.coordinate_tensor() - 1
    values = y_table[coords[:, 0]] + x_table[coords[:, 1]]
    return EmbeddingTable(grid=grid, values=values, family=EmbeddingFamily.FACTORIZED, axes=(y_table, x_table))


def factorized_init(grid: PatchGrid, D: int, seed: int = 0, dtype: Optional[torch.dtype] = None) -> EmbeddingTable:
    if D < 1:
        raise InvalidArgumentError(f"D must be positive, got {D}")
    dtype = dtype or settings.torch_dtype
    generator = torch.Generator().manual_seed(seed)
    y_table = torch.randn((grid.n_y, D), generator=generator, dtype=dtype) * INIT_STD
    x_table = torch.randn((grid.n_x, D), generator=generator, dtype=dtype) * INIT_STD
    return factorized_from_axes(grid, y_table, x_table)


# ============================================================================
# Fourier features
# ============================================================================

class FourierEmbedder(nn.Module):
    """
    Fractional (y, x) -> [sin(2 pi W c), cos(2 pi W c)] -> Linear -> GELU -> Linear.
    """

    def __init__(self, D: int, hidden: int, features: Optional[int] = None, sigma: float = 1.0, seed: int = 0):
        super().__init__()
        if D < 1 or hidden < 1:
            raise InvalidArgumentError(f"Fourier embedder needs D, hidden >= 1, got {D}, {hidden}")
        features = features or max(D // 2, 1)
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.register_buffer("frequencies", torch.randn(features, 2) * sigma)
            self.mlp = nn.Sequential(
                nn.Linear(2 * features, hidden),
                nn.GELU(),
                nn.Linear(hidden, D),
            )

    def forward(self, coords: torch.Tensor) -> torch.Tensor:
        projected = 2 * math.pi * coords @ self.frequencies.T
        return self.mlp(torch.cat([torch.sin(projected), torch.cos(projected)], dim=-1))


def fractional_coords(grid: PatchGrid, dtype: torch.dtype) -> torch.Tensor:
    """
    (i_y / n_y, i_x / n_x) for every patch.
    """
    scale = torch.tensor([grid.n_y, grid.n_x], dtype=dtype)
    return grid.coordinate_tensor().to(dtype) / scale


def fourier_from_embedder(grid: PatchGrid, embedder: FourierEmbedder) -> EmbeddingTable:
    dtype = embedder.frequencies.dtype
    values = embedder(fractional_coords(grid, dtype))
    return EmbeddingTable(grid=grid, values=values, family=EmbeddingFamily.FOURIER, embedder=embedder)


def fourier_embed(
    grid: PatchGrid,
    D: int,
    hidden: Optional[int] = None,
    seed: int = 0,
    sigma: float = 1.0,
    dtype: Optional[torch.dtype] = None,
) -> EmbeddingTable:
    hidden = D if hidden is None else hidden
    embedder = FourierEmbedder(D, hidden, sigma=sigma, seed=seed).to(dtype or settings.torch_dtype)
    return fourier_from_embedder(grid, embedder)


# ============================================================================
# Resolution changes
# ============================================================================

def resize_bilinear(table: EmbeddingTable, new_grid: PatchGrid) -> EmbeddingTable:
    """
    Per-channel bilinear resampling (align_corners=True) of a learned_1d or
    sincos_2d table to a new grid.
    """
    if table.family not in (EmbeddingFamily.LEARNED_1D, EmbeddingFamily.SINCOS_2D):
        raise InvalidArgumentError(f"bilinear resize does not apply to {table.family.value} tables")
    if new_grid.shape == table.grid.shape:
        return EmbeddingTable(grid=new_grid, values=table.values, family=table.family)

    logger.info("Resized position embedding grid from %s to %s", table.grid, new_grid)
    image = rearrange(table.values, "(h w) d -> 1 d h w", h=table.grid.n_y, w=table.grid.n_x)
    resized = F.interpolate(image, size=new_grid.shape, mode="bilinear", align_corners=True)
    values = rearrange(resized, "1 d h w -> (h w) d")
    return EmbeddingTable(grid=new_grid, values=values, family=table.family)


def _resize_axis(axis_table: torch.Tensor, size: int) -> torch.Tensor:
    if axis_table.shape[0] == size:
        return axis_table
    signal = rearrange(axis_table, "n d -> 1 d n")
    resized = F.interpolate(signal, size=size, mode="linear", align_corners=True)
    return rearrange(resized, "1 d n -> n d")


def resize_factorized(table: EmbeddingTable, new_grid: PatchGrid) -> EmbeddingTable:
    """
    Linear interpolation of each axis table, then re-add.
    """
    if table.family != EmbeddingFamily.FACTORIZED or table.axes is None:
        raise InvalidArgumentError("resize_factorized needs a factorized table with its axis tables")
    y_table, x_table = table.axes
    logger.info("Resized factorized axes from %s to %s", table.grid, new_grid)
    return factorized_from_axes(new_grid, _resize_axis(y_table, new_grid.n_y), _resize_axis(x_table, new_grid.n_x))
