"""
Additive attention bias / mask fields.

A BiasField holds L x H x (n+1) x (n+1) values that are SUBTRACTED from the
attention logits. Masked entries carry +inf; token 0 (CLS) row and column are
always 0. Three constructions live here: LookHere (directional masks plus
distance penalties), 2D-ALiBi (distance penalties only) and the RPE-learn
relative bias table.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F

from lookhere.config import settings
from lookhere.enums import (
    CARDINAL_DIRECTIONS,
    DIRECTION_ORDER,
    DIRECTION_VECTORS,
    Direction,
    MaskMode,
    WedgeHalf,
)
from lookhere.exceptions import InvalidArgumentError
from lookhere.grid import ModelDims, PatchGrid
from lookhere.schemas import HeadSpec, PenaltyConfig, SlopeConfig

logger = logging.getLogger(__name__)

MASKED = math.inf

# Octant that starts at each cardinal axis; octant k spans [k*45, (k+1)*45)
# degrees of atan2(-dy, dx).
_AXIS_OCTANT = {
    Direction.RIGHT: 0,
    Direction.UP: 2,
    Direction.LEFT: 4,
    Direction.DOWN: 6,
}


# ============================================================================
# Visibility
# ============================================================================

def _octant(k: int, dy, dx):
    """
    Half-open octant membership using only sign tests. Works elementwise on
    ints or integer tensors.
    """
    ex, ey = dx, -dy
    for _ in range(k // 2):
        ex, ey = ey, -ex  # rotate by -90 degrees
    if k % 2 == 0:
        return (ey >= 0) & (ex > ey)
    return (ex > 0) & (ey >= ex)


def _wedge(spec: HeadSpec, dy, dx):
    uy, ux = DIRECTION_VECTORS[spec.direction]
    along = dy * uy + dx * ux
    perp = dy * ux - dx * uy
    if spec.fov == 180:
        return along >= 0
    if spec.fov == 90:
        return along >= abs(perp)
    axis = _AXIS_OCTANT[spec.direction]
    octant = axis if spec.half == WedgeHalf.FIRST else (axis - 1) % 8
    return _octant(octant, dy, dx)


def visible(spec: HeadSpec, delta: Tuple[int, int]) -> bool:
    """
    Whether a key at displacement delta = (key_y - query_y, key_x - query_x)
    lies inside the head's field of view. Self is always visible; undirected
    heads see everything.
    """
    dy, dx = int(delta[0]), int(delta[1])
    if (dy, dx) == (0, 0) or not spec.is_directed:
        return True
    return bool(_wedge(spec, dy, dx))


def visibility_mask(spec: HeadSpec, dy: torch.Tensor, dx: torch.Tensor) -> torch.Tensor:
    """
    Elementwise visible() over integer displacement tensors.
    """
    if not spec.is_directed:
        return torch.ones_like(dy, dtype=torch.bool)
    return _wedge(spec, dy, dx) | ((dy == 0) & (dx == 0))


def wedge_mask(spec: HeadSpec, grid: PatchGrid, query: int) -> torch.Tensor:
    """
    (n_y, n_x) visibility of every key for a single query patch. Used where a
    full field would not fit in memory.
    """
    q_y, q_x = grid.coords(query)
    coords = grid.coordinate_tensor()
    mask = visibility_mask(spec, coords[:, 0] - q_y, coords[:, 1] - q_x)
    return mask.reshape(grid.n_y, grid.n_x)


def visible_fraction(spec: HeadSpec, grid: PatchGrid, query: Optional[int] = None) -> float:
    query = grid.center_index if query is None else query
    return wedge_mask(spec, grid, query).double().mean().item()


# ============================================================================
# Head layouts and slopes
# ============================================================================

def default_head_specs(fov: int, heads: int = 12, undirected_fov: Optional[int] = None) -> List[HeadSpec]:
    """
    LH-180 / LH-90 / LH-45 head layout.

    Directed heads take the eight directions round-robin and the remainder is
    undirected, placed last: min(heads // 3, heads - 8) undirected heads, so
    12 heads give 8 + 4 and fewer than 9 heads are all directed. For fov=45
    the directed pool is the eight half-wedges of the four cardinal wedges,
    axis-starting halves first. undirected_fov replaces the undirected heads
    by directed heads of that FOV.
    """
    if fov not in (45, 90, 180):
        raise InvalidArgumentError(f"fov must be 45, 90 or 180, got {fov}")
    if heads < 1:
        raise InvalidArgumentError(f"heads must be positive, got {heads}")

    if fov == 45:
        pool = [
            HeadSpec.directed(direction, 45, half)
            for half in (WedgeHalf.FIRST, WedgeHalf.SECOND)
            for direction in CARDINAL_DIRECTIONS
        ]
    else:
        pool = [HeadSpec.directed(direction, fov) for direction in DIRECTION_ORDER]

    n_undirected = min(heads // 3, max(0, heads - len(pool)))
    n_directed = heads - n_undirected
    specs = [pool[k % len(pool)] for k in range(n_directed)]
    for k in range(n_directed, heads):
        if undirected_fov is not None:
            specs.append(HeadSpec.directed(DIRECTION_ORDER[k % len(DIRECTION_ORDER)], undirected_fov))
        else:
            specs.append(HeadSpec.undirected())
    return specs


def fit_slopes(cfg: SlopeConfig, specs: Sequence[HeadSpec]) -> SlopeConfig:
    """
    Extend s_h_undirected (each extra entry a quarter of the previous) so
    every undirected head in specs has a slope.
    """
    needed = sum(1 for spec in specs if not spec.is_directed and spec.slope_scale is None)
    values = list(cfg.s_h_undirected) or [0.5]
    while len(values) < needed:
        values.append(values[-1] / 4)
    if tuple(values) == cfg.s_h_undirected:
        return cfg
    return cfg.model_copy(update={"s_h_undirected": tuple(values)})


def layer_slope(l: int, depth: int, cfg: SlopeConfig) -> float:
    start, end = cfg.s_l_start, cfg.s_l_end
    if cfg.invert_s_l:
        start, end = end, start
    if depth < 2:
        return (start + end) / 2
    return start + (l - 1) * (end - start) / (depth - 1)


def slope(l: int, h: int, dims: ModelDims, cfg: SlopeConfig, specs: Sequence[HeadSpec]) -> float:
    """
    m(l, h) = s_l(l) * s_h(h) * s_g, with 1-based l and h.
    """
    if not 1 <= l <= dims.depth:
        raise InvalidArgumentError(f"layer {l} outside 1..{dims.depth}")
    if not 1 <= h <= dims.heads or h > len(specs):
        raise InvalidArgumentError(f"head {h} outside 1..{dims.heads}")

    spec = specs[h - 1]
    if spec.is_directed:
        s_h = cfg.s_h_directed
    elif spec.slope_scale is not None:
        s_h = spec.slope_scale
    else:
        rank = sum(1 for other in specs[: h - 1] if not other.is_directed and other.slope_scale is None)
        if rank >= len(cfg.s_h_undirected):
            raise InvalidArgumentError(
                f"undirected head {h} needs slope #{rank + 1} but only "
                f"{len(cfg.s_h_undirected)} are configured"
            )
        s_h = cfg.s_h_undirected[rank]
    return layer_slope(l, dims.depth, cfg) * s_h * cfg.s_g


# ============================================================================
# Bias fields
# ============================================================================

@dataclass(frozen=True)
class BiasField:
    """
    Precomputed L x H x T x T bias, T = n + 1. Values are subtracted from
    logits; +inf marks excluded entries. nonnegative is False only for
    RPE-learn, whose learned values may be negative.
    """
    values: torch.Tensor
    grid: PatchGrid
    kind: str
    nonnegative: bool = True

    @property
    def depth(self) -> int:
        return self.values.shape[0]

    @property
    def heads(self) -> int:
        return self.values.shape[1]

    @property
    def tokens(self) -> int:
        return self.values.shape[2]

    def layer(self, l: int) -> torch.Tensor:
        """
        (H, T, T) slice for 1-based layer l.
        """
        return self.values[l - 1]

    def masked(self) -> torch.Tensor:
        return torch.isposinf(self.values)


def _pad_cls(block: torch.Tensor) -> torch.Tensor:
    """
    Prepend a zero CLS row and column to (..., n, n) blocks.
    """
    return F.pad(block, (1, 0, 1, 0), value=0.0)


def _penalty_form(sq_dist: torch.Tensor, penalty: PenaltyConfig) -> torch.Tensor:
    if penalty.no_distance:
        return torch.zeros_like(sq_dist)
    if penalty.exponent == 2.0:
        return sq_dist
    if penalty.exponent == 0.5:
        return torch.sqrt(torch.sqrt(sq_dist))
    return torch.sqrt(sq_dist)


def build_lookhere(
    grid: PatchGrid,
    dims: ModelDims,
    specs: Sequence[HeadSpec],
    slopes: Optional[SlopeConfig] = None,
    penalty: Optional[PenaltyConfig] = None,
    dtype: Optional[torch.dtype] = None,
) -> BiasField:
    """
    LookHere field: +inf outside a directed head's FOV, m(l, h) * dist^e inside.
    """
    slopes = slopes or SlopeConfig()
    penalty = penalty or PenaltyConfig()
    dtype = dtype or settings.torch_dtype
    if len(specs) != dims.heads:
        raise InvalidArgumentError(f"{len(specs)} head specs for {dims.heads} heads")

    dy, dx = grid.displacements()
    base = _penalty_form((dy * dy + dx * dx).to(dtype), penalty)
    fill = MASKED if penalty.mask_mode == MaskMode.HARD else 0.0

    blocks = []
    for h, spec in enumerate(specs, start=1):
        m = torch.tensor([slope(l, h, dims, slopes, specs) for l in range(1, dims.depth + 1)], dtype=dtype)
        head_base = base
        if not spec.is_directed and penalty.undirected_no_distance:
            head_base = torch.zeros_like(base)
        block = m[:, None, None] * head_base
        if spec.is_directed:
            block = block.masked_fill(~visibility_mask(spec, dy, dx), fill)
        blocks.append(block)

    values = _pad_cls(torch.stack(blocks, dim=1))
    field = BiasField(values=values, grid=grid, kind="lookhere")
    logger.debug("Built LookHere field %s on grid %s", tuple(values.shape), grid)
    return field


def default_alibi_slopes(heads: int) -> List[float]:
    """
    Geometric head slopes 2^(-8h/H), h = 1..H.
    """
    return [2.0 ** (-8.0 * h / heads) for h in range(1, heads + 1)]


def build_alibi_2d(
    grid: PatchGrid,
    dims: ModelDims,
    head_slopes: Sequence[float],
    s_g: float = 1.0,
    dtype: Optional[torch.dtype] = None,
) -> BiasField:
    """
    2D-ALiBi: s_g * slope_h * Euclidean distance, identical in every layer.
    """
    dtype = dtype or settings.torch_dtype
    if len(head_slopes) != dims.heads:
        raise InvalidArgumentError(f"{len(head_slopes)} slopes for {dims.heads} heads")
    if any(not s > 0 for s in head_slopes) or not s_g > 0:
        raise InvalidArgumentError("ALiBi slopes and s_g must be positive")

    dist = grid.distance_matrix(dtype)
    scale = torch.tensor([s_g * s for s in head_slopes], dtype=dtype)
    block = scale[:, None, None] * dist
    values = _pad_cls(block).unsqueeze(0).expand(dims.depth, -1, -1, -1).contiguous()
    return BiasField(values=values, grid=grid, kind="alibi_2d")


# ============================================================================
# RPE-learn
# ============================================================================

@dataclass(frozen=True)
class RelativeBiasTable:
    """
    Per-head learnable bias indexed by displacement, extent (2 n_y - 1) x (2 n_x - 1).
    Index (n_y - 1, n_x - 1) is the zero displacement.
    """
    values: torch.Tensor
    n_y: int
    n_x: int

    @property
    def heads(self) -> int:
        return self.values.shape[0]

    @property
    def extent(self) -> Tuple[int, int]:
        return (2 * self.n_y - 1, 2 * self.n_x - 1)

    def lookup(self, h: int, d_y: int, d_x: int) -> torch.Tensor:
        """
        Bias of 1-based head h for displacement (query - key).
        """
        if abs(d_y) >= self.n_y or abs(d_x) >= self.n_x:
            raise InvalidArgumentError(f"displacement ({d_y}, {d_x}) outside table extent {self.extent}")
        return self.values[h - 1, d_y + self.n_y - 1, d_x + self.n_x - 1]


def init_rpe_table(
    grid: PatchGrid,
    heads: int,
    rng_seed: int = 0,
    std: float = 0.02,
    dtype: Optional[torch.dtype] = None,
) -> RelativeBiasTable:
    """
    Seeded Gaussian(0, std) table; std=0 gives the zero table.
    """
    dtype = dtype or settings.torch_dtype
    generator = torch.Generator().manual_seed(rng_seed)
    shape = (heads, 2 * grid.n_y - 1, 2 * grid.n_x - 1)
    values = torch.randn(shape, generator=generator, dtype=dtype) * std
    return RelativeBiasTable(values=values, n_y=grid.n_y, n_x=grid.n_x)


def rpe_to_field(table: RelativeBiasTable, grid: PatchGrid, dims: ModelDims) -> BiasField:
    """
    Expand the table into a field: entry (l, h, i, j) = table[h][i_y - j_y][i_x - j_x].
    Differentiable with respect to table.values.
    """
    if grid.n_y > table.n_y or grid.n_x > table.n_x:
        raise InvalidArgumentError(f"grid {grid} has displacements outside table extent {table.extent}")
    if table.heads != dims.heads:
        raise InvalidArgumentError(f"table has {table.heads} heads, model has {dims.heads}")

    dy, dx = grid.displacements()
    rows = table.n_y - 1 - dy
    cols = table.n_x - 1 - dx
    block = table.values[:, rows, cols]
    values = _pad_cls(block).unsqueeze(0).expand(dims.depth, -1, -1, -1)
    return BiasField(values=values, grid=grid, kind="rpe_learn", nonnegative=False)


# ============================================================================
# Sparsity
# ============================================================================

def masked_fraction(field: BiasField, l: int, h: int) -> float:
    """
    Fraction of patch-pair entries (CLS excluded) of slice (l, h) carrying the mask sentinel.
    """
    if not (1 <= l <= field.depth and 1 <= h <= field.heads):
        raise InvalidArgumentError(f"slice ({l}, {h}) outside {field.depth} x {field.heads}")
    block = field.values[l - 1, h - 1, 1:, 1:]
    return torch.isposinf(block).double().mean().item()


def head_mask_fractions(grid: PatchGrid, specs: Sequence[HeadSpec], mask_mode: MaskMode = MaskMode.HARD) -> List[float]:
    """
    Per-head masked fraction of the patch block, computed from the masks alone.
    Matches masked_fraction(field, l, h) of a LookHere field at every layer l.
    """
    if mask_mode == MaskMode.ZERO:
        return [0.0] * len(specs)
    dy, dx = grid.displacements()
    return [
        1.0 - visibility_mask(spec, dy, dx).double().mean().item() if spec.is_directed else 0.0
        for spec in specs
    ]
