"""
Shared fixtures for the LookHere test suite.
"""

import math

import pytest
import torch

from lookhere.bias_field import default_head_specs
from lookhere.enums import DIRECTION_VECTORS, WedgeHalf
from lookhere.grid import ModelDims, make_grid

# Relative tolerance of a couple of float64 ulps; sqrt may round differently
# between torch kernels and math.sqrt.
ULP_REL = 2.0 ** -51

# Standard-angle direction of each compass vector, degrees of atan2(-dy, dx)
DIRECTION_ANGLES = {
    direction: math.degrees(math.atan2(-dy, dx)) % 360 for direction, (dy, dx) in DIRECTION_VECTORS.items()
}


def oracle_angle(dy: int, dx: int) -> float:
    return round(math.degrees(math.atan2(-dy, dx)) % 360, 9) % 360


def oracle_visible(spec, dy: int, dx: int) -> bool:
    """
    Float atan2 reading of a head's field of view. Closed wedges for 180 and
    90 degrees; for 45 degrees the half-open octant next to the axis.
    """
    if (dy, dx) == (0, 0) or not spec.is_directed:
        return True
    angle = oracle_angle(dy, dx)
    axis = DIRECTION_ANGLES[spec.direction]
    if spec.fov in (180, 90):
        diff = abs((angle - axis + 180) % 360 - 180)
        return diff <= spec.fov / 2 + 1e-9
    start = axis if spec.half == WedgeHalf.FIRST else (axis - 45) % 360
    return (angle - start) % 360 < 45 - 1e-9


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


@pytest.fixture
def base_dims():
    """ViT-B/16 geometry: L=12, H=12, D=768."""
    return ModelDims(depth=12, heads=12, width=768, head_dim=64)


@pytest.fixture
def small_dims():
    return ModelDims(depth=3, heads=12, width=48, head_dim=4)


@pytest.fixture
def lh90_specs():
    return default_head_specs(90, 12)


@pytest.fixture
def grid5():
    return make_grid(5, 5)
