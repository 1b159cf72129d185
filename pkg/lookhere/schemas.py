"""
Pydantic schemas for the configuration objects of the LookHere toolkit.
These schemas define the knobs coming in from config files and flags and the
records going out to JSON files.
"""

import math
import re
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from lookhere.enums import CARDINAL_DIRECTIONS, Direction, HeadKind, MaskMode, Method, Variant, WedgeHalf

GRID_PATTERN = re.compile(r"^\s*(\d+)\s*[xX]\s*(\d+)\s*$")

DEFAULT_UNDIRECTED_SLOPES = (1 / 2, 1 / 8, 1 / 32, 1 / 128)


def parse_grid(text: str) -> Tuple[int, int]:
    """
    Parse an "NyxNx" grid string into (n_y, n_x).
    """
    match = GRID_PATTERN.match(text)
    if not match:
        raise ValueError(f"Grid must look like '14x14', got '{text}'")
    n_y, n_x = int(match.group(1)), int(match.group(2))
    if n_y < 1 or n_x < 1:
        raise ValueError(f"Grid dimensions must be positive, got '{text}'")
    return n_y, n_x


def format_grid(n_y: int, n_x: int) -> str:
    return f"{n_y}x{n_x}"


# ============================================================================
# Model Geometry Schemas
# ============================================================================

class ModelDims(BaseModel):
    """
    Transformer dimensions: depth L, heads H, width D, head width D_H, patch size P.
    """
    model_config = ConfigDict(frozen=True)

    depth: int = Field(..., ge=1, description="Number of transformer layers (L)")
    heads: int = Field(..., ge=1, description="Attention heads per layer (H)")
    width: int = Field(..., ge=1, description="Embedding dimension (D)")
    head_dim: int = Field(..., ge=1, description="Per-head dimension (D_H)")
    patch_size: int = Field(16, ge=1, description="Patch side length in pixels (P)")

    @model_validator(mode="after")
    def check_width(self) -> "ModelDims":
        if self.width != self.heads * self.head_dim:
            raise ValueError(
                f"width ({self.width}) must equal heads * head_dim ({self.heads} * {self.head_dim})"
            )
        return self

    @classmethod
    def from_width(cls, depth: int, heads: int, width: int, patch_size: int = 16) -> "ModelDims":
        if width % heads != 0:
            raise ValueError(f"width ({width}) is not divisible by heads ({heads})")
        return cls(depth=depth, heads=heads, width=width, head_dim=width // heads, patch_size=patch_size)


# ============================================================================
# LookHere Head / Slope / Penalty Schemas
# ============================================================================

class HeadSpec(BaseModel):
    """
    A single attention head: directed (direction + field of view) or undirected.
    """
    model_config = ConfigDict(frozen=True)

    kind: HeadKind
    direction: Optional[Direction] = None
    fov: Optional[int] = Field(None, description="Field of view in degrees: 180, 90 or 45")
    half: Optional[WedgeHalf] = Field(None, description="Which half of the cardinal wedge a 45 degree head keeps")
    slope_scale: Optional[float] = Field(None, ge=0, description="Explicit s_h for an undirected head")

    @model_validator(mode="after")
    def check_kind(self) -> "HeadSpec":
        if self.kind == HeadKind.UNDIRECTED:
            if self.direction is not None or self.fov is not None or self.half is not None:
                raise ValueError("Undirected heads carry no direction, fov or half")
            return self

        if self.direction is None or self.fov not in (45, 90, 180):
            raise ValueError(f"Directed heads need a direction and fov in (45, 90, 180), got {self.fov}")
        if self.fov == 45:
            if self.half is None:
                raise ValueError("45 degree heads must name the half of their cardinal wedge")
            if self.direction not in CARDINAL_DIRECTIONS:
                raise ValueError("45 degree heads split a cardinal (up/down/left/right) wedge")
        elif self.half is not None:
            raise ValueError("Only 45 degree heads take a half")
        return self

    @property
    def is_directed(self) -> bool:
        return self.kind == HeadKind.DIRECTED

    @classmethod
    def directed(cls, direction: Direction, fov: int, half: Optional[WedgeHalf] = None) -> "HeadSpec":
        return cls(kind=HeadKind.DIRECTED, direction=direction, fov=fov, half=half)

    @classmethod
    def undirected(cls, slope_scale: Optional[float] = None) -> "HeadSpec":
        return cls(kind=HeadKind.UNDIRECTED, slope_scale=slope_scale)


class SlopeConfig(BaseModel):
    """
    Slope schedule m(l, h) = s_l(l) * s_h(h) * s_g.
    """
    model_config = ConfigDict(frozen=True)

    s_g: float = Field(1.0, gt=0, description="Global slope")
    s_l_start: float = Field(1.5, description="Layer slope at the first layer")
    s_l_end: float = Field(0.5, description="Layer slope at the last layer")
    s_h_directed: float = Field(1.0, ge=0, description="Head slope shared by directed heads")
    s_h_undirected: Tuple[float, ...] = Field(DEFAULT_UNDIRECTED_SLOPES, description="Head slopes of undirected heads, in order")
    invert_s_l: bool = Field(False, description="Ablation: swap the layer schedule endpoints")

    @field_validator("s_g", "s_l_start", "s_l_end", "s_h_directed")
    @classmethod
    def check_finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("slope parameters must be finite")
        return value

    @field_validator("s_h_undirected")
    @classmethod
    def check_undirected(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if any(not math.isfinite(v) or v < 0 for v in value):
            raise ValueError("undirected head slopes must be finite and nonnegative")
        return value


class PenaltyConfig(BaseModel):
    """
    Distance penalty form and the masking ablations.
    """
    model_config = ConfigDict(frozen=True)

    exponent: float = Field(1.0, description="Distance exponent: 1, 2 or 0.5")
    no_distance: bool = Field(False, description="Ablation: drop all distance penalties")
    undirected_no_distance: bool = Field(False, description="Ablation: drop penalties on undirected heads")
    mask_mode: MaskMode = Field(MaskMode.HARD, description="hard = +inf sentinel, zero = ablation mask:inf->0")

    @field_validator("exponent")
    @classmethod
    def check_exponent(cls, value: float) -> float:
        if value not in (1.0, 2.0, 0.5):
            raise ValueError(f"exponent must be one of 1, 2, 0.5; got {value}")
        return float(value)


# ============================================================================
# Run / Adapt Schemas
# ============================================================================

class RunConfig(BaseModel):
    """
    Everything a CLI command needs. Loaded from a JSON file, then flags override.
    """
    variant: Variant = Field(Variant.LH90, description="Position encoding variant")
    grid: str = Field("14x14", description="Source patch grid, NyxNx")
    target: Optional[str] = Field(None, description="Target patch grid for extrapolation, NyxNx")
    layers: int = Field(12, ge=1)
    heads: int = Field(12, ge=1)
    dim: int = Field(768, ge=1)
    patch_size: int = Field(16, ge=1)
    fov: Optional[int] = Field(None, description="Overrides the FOV of an lh* variant")
    s_g: Optional[float] = Field(None, gt=0, description="Global slope (LookHere, 2D-ALiBi)")
    base_freq: Optional[float] = Field(None, gt=0, description="2D-RoPE base frequency")
    penalty_exp: float = Field(1.0, description="1, 2, 0.5, or 0 for no distance penalty")
    mask_mode: MaskMode = MaskMode.HARD
    invert_sl: bool = False
    undirected_no_dist: bool = False
    undirected_fov: Optional[int] = Field(None, description="Ablation: replace undirected heads with this FOV")
    seed: int = 0
    out: str = "out"
    csv: bool = False
    pgm: bool = False
    steps: Optional[int] = Field(None, ge=1, description="Demo training steps")
    tune: bool = Field(False, description="demo: tune the target scalar on a held-out synthetic minival")
    preset: bool = Field(False, description="adapt: use the tuned preset scalar for the target resolution")

    @field_validator("grid", "target")
    @classmethod
    def check_grid(cls, value: Optional[str]) -> Optional[str]:
        if value is not None:
            parse_grid(value)
        return value

    @field_validator("penalty_exp")
    @classmethod
    def check_penalty_exp(cls, value: float) -> float:
        if value not in (0.0, 0.5, 1.0, 2.0):
            raise ValueError(f"penalty_exp must be one of 1, 2, 0.5, 0; got {value}")
        return value

    @field_validator("fov")
    @classmethod
    def check_fov(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and value not in (45, 90, 180):
            raise ValueError(f"fov must be 45, 90 or 180; got {value}")
        return value

    @field_validator("undirected_fov")
    @classmethod
    def check_undirected_fov(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and value not in (90, 180):
            raise ValueError(f"undirected_fov must be 90 or 180; got {value}")
        return value

    @property
    def grid_shape(self) -> Tuple[int, int]:
        return parse_grid(self.grid)

    @property
    def target_shape(self) -> Optional[Tuple[int, int]]:
        return parse_grid(self.target) if self.target else None

    @property
    def dims(self) -> ModelDims:
        return ModelDims.from_width(self.layers, self.heads, self.dim, self.patch_size)

    def slope_config(self) -> SlopeConfig:
        return SlopeConfig(s_g=self.s_g if self.s_g is not None else 1.0, invert_s_l=self.invert_sl)

    def penalty_config(self) -> PenaltyConfig:
        return PenaltyConfig(
            exponent=self.penalty_exp if self.penalty_exp != 0 else 1.0,
            no_distance=self.penalty_exp == 0,
            undirected_no_distance=self.undirected_no_dist,
            mask_mode=self.mask_mode,
        )


class AdaptPlan(BaseModel):
    """
    Move one encoding method from a source grid to a target grid.
    """
    model_config = ConfigDict(frozen=True)

    method: Method
    source: Tuple[int, int]
    target: Tuple[int, int]
    tuned_scalar: Optional[float] = Field(None, gt=0, description="s_g (LookHere, 2D-ALiBi) or base frequency (2D-RoPE)")

    @field_validator("source", "target")
    @classmethod
    def check_shape(cls, value: Tuple[int, int]) -> Tuple[int, int]:
        if value[0] < 1 or value[1] < 1:
            raise ValueError(f"grid dimensions must be positive, got {value}")
        return value

    @property
    def is_identity(self) -> bool:
        return self.source == self.target and self.tuned_scalar is None

    @property
    def is_shrinking(self) -> bool:
        return self.target[0] < self.source[0] or self.target[1] < self.source[1]


# ============================================================================
# Output Record Schemas
# ============================================================================

class TuningRecord(BaseModel):
    """
    Result of adapting or tuning one method across resolutions.
    """
    method: Method
    source: str
    target: str
    scalar: Optional[float]
    score: Optional[float] = None


class MetricRecord(BaseModel):
    """
    One line of a metric report.
    """
    metric: str
    layer: Optional[int] = None
    head: Optional[int] = None
    value: float
    grid: str


class DemoReport(BaseModel):
    """
    Outcome of the synthetic extrapolation demo for one variant.
    """
    variant: Variant
    seed: int
    source: str
    target: str
    steps: int
    final_loss: float
    accuracy_source: float
    accuracy_target: float
    ece_source: float
    ece_target: float
    jsd_source: List[float] = Field(default_factory=list, description="Head JSD per layer at the source grid")
    jsd_target: List[float] = Field(default_factory=list, description="Head JSD per layer at the target grid")
    attention_distance_target: List[float] = Field(default_factory=list)
    patch_similarity_target: List[float] = Field(default_factory=list)
    tuned_scalar: Optional[float] = Field(None, description="Target scalar chosen on the minival, when tuned")
    tuning_score: Optional[float] = Field(None, description="Minival accuracy of the chosen scalar")
