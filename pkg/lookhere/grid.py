"""
Patch-lattice geometry: coordinates, flattening, displacements, Euclidean
distance and patchification of raw pixel arrays.

Token 0 is the CLS token; patches occupy tokens 1..n in row-major order
(y outer, x inner). Coordinates are 1-based and y grows downward.
"""

import math
from dataclasses import dataclass
from typing import Tuple

import torch
from einops import rearrange

from lookhere.exceptions import InvalidArgumentError
from lookhere.schemas import ModelDims, format_grid

__all__ = [
    "CLS_INDEX",
    "ModelDims",
    "PatchGrid",
    "make_grid",
    "distance",
    "patchify",
    "unpatchify",
]

CLS_INDEX = 0


@dataclass(frozen=True)
class PatchGrid:
    """
    The n_y x n_x patch lattice plus the CLS slot.
    """
    n_y: int
    n_x: int

    @property
    def cls_index(self) -> int:
        return CLS_INDEX

    @property
    def n(self) -> int:
        return self.n_y * self.n_x

    @property
    def tokens(self) -> int:
        return self.n + 1

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n_y, self.n_x)

    @property
    def diameter(self) -> float:
        return math.hypot(self.n_y - 1, self.n_x - 1)

    @property
    def center_index(self) -> int:
        return self.index((self.n_y + 1) // 2, (self.n_x + 1) // 2)

    def __str__(self) -> str:
        return format_grid(self.n_y, self.n_x)

    def index(self, i_y: int, i_x: int) -> int:
        if not (1 <= i_y <= self.n_y and 1 <= i_x <= self.n_x):
            raise InvalidArgumentError(f"({i_y}, {i_x}) is outside the {self} grid")
        return (i_y - 1) * self.n_x + i_x

    def coords(self, i: int) -> Tuple[int, int]:
        if i == CLS_INDEX:
            raise InvalidArgumentError("The CLS token has no lattice position")
        if not 1 <= i <= self.n:
            raise InvalidArgumentError(f"Token {i} is outside the {self} grid")
        row, col = divmod(i - 1, self.n_x)
        return (row + 1, col + 1)

    def coordinate_tensor(self) -> torch.Tensor:
        """
        (n, 2) int64 tensor of 1-based (i_y, i_x) for tokens 1..n.
        """
        ys = torch.arange(1, self.n_y + 1).repeat_interleave(self.n_x)
        xs = torch.arange(1, self.n_x + 1).repeat(self.n_y)
        return torch.stack([ys, xs], dim=-1)

    def displacements(self) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Key-minus-query displacements for every patch pair, as two (n, n)
        int64 tensors (dy[i, j] = j_y - i_y, dx[i, j] = j_x - i_x).
        """
        coords = self.coordinate_tensor()
        dy = coords[None, :, 0] - coords[:, None, 0]
        dx = coords[None, :, 1] - coords[:, None, 1]
        return dy, dx

    def distance_matrix(self, dtype: torch.dtype = torch.float64) -> torch.Tensor:
        """
        (n, n) Euclidean distances in patch units.
        """
        dy, dx = self.displacements()
        return torch.sqrt((dy * dy + dx * dx).to(dtype))


def make_grid(n_y: int, n_x: int) -> PatchGrid:
    """
    Build a patch grid; both dimensions must be positive.
    """
    if n_y < 1 or n_x < 1:
        raise InvalidArgumentError(f"Grid dimensions must be positive, got {n_y}x{n_x}")
    return PatchGrid(n_y=int(n_y), n_x=int(n_x))


def distance(grid: PatchGrid, i: int, j: int) -> float:
    """
    Euclidean distance between patch tokens i and j, in patch units.
    """
    i_y, i_x = grid.coords(i)
    j_y, j_x = grid.coords(j)
    return math.sqrt((i_y - j_y) ** 2 + (i_x - j_x) ** 2)


def patchify(image: torch.Tensor, patch_size: int) -> Tuple[torch.Tensor, PatchGrid]:
    """
    Split a Y x X x C image (or a B x Y x X x C batch) into non-overlapping
    patches. Each patch is flattened row-major with channels innermost.

    Returns:
        (n, P*P*C) patches (with a leading batch dim if given) and the grid.
    """
    if image.ndim not in (3, 4):
        raise InvalidArgumentError(f"Expected Y x X x C or B x Y x X x C, got shape {tuple(image.shape)}")
    size_y, size_x = image.shape[-3], image.shape[-2]
    if patch_size < 1 or size_y % patch_size or size_x % patch_size:
        raise InvalidArgumentError(f"Image {size_y}x{size_x} is not divisible by patch size {patch_size}")

    grid = make_grid(size_y // patch_size, size_x // patch_size)
    pattern = "(ny p1) (nx p2) c -> (ny nx) (p1 p2 c)"
    if image.ndim == 4:
        pattern = "b " + pattern.replace("-> ", "-> b ")
    patches = rearrange(image, pattern, p1=patch_size, p2=patch_size)
    return patches, grid


def unpatchify(patches: torch.Tensor, grid: PatchGrid, patch_size: int, channels: int) -> torch.Tensor:
    """
    Inverse of patchify.
    """
    pattern = "(ny nx) (p1 p2 c) -> (ny p1) (nx p2) c"
    if patches.ndim == 3:
        pattern = "b " + pattern.replace("-> ", "-> b ")
    return rearrange(patches, pattern, ny=grid.n_y, nx=grid.n_x, p1=patch_size, p2=patch_size, c=channels)
