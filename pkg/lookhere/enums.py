"""
Enumerations shared across the toolkit: compass directions, fields of view,
position-encoding methods and the ablation switches.
"""

from enum import Enum


class Direction(str, Enum):
    """
    Compass directions a LookHere head can point. The grid's y axis grows
    downward, so UP means decreasing y.
    """
    UP = "up"
    DOWN = "down"
    LEFT = "left"
    RIGHT = "right"
    UP_RIGHT = "up_right"
    DOWN_RIGHT = "down_right"
    DOWN_LEFT = "down_left"
    UP_LEFT = "up_left"


# (dy, dx) unit steps in grid coordinates
DIRECTION_VECTORS = {
    Direction.UP: (-1, 0),
    Direction.DOWN: (1, 0),
    Direction.LEFT: (0, -1),
    Direction.RIGHT: (0, 1),
    Direction.UP_RIGHT: (-1, 1),
    Direction.DOWN_RIGHT: (1, 1),
    Direction.DOWN_LEFT: (1, -1),
    Direction.UP_LEFT: (-1, -1),
}

# Head assignment order for directed heads
DIRECTION_ORDER = [
    Direction.UP,
    Direction.DOWN,
    Direction.LEFT,
    Direction.RIGHT,
    Direction.UP_RIGHT,
    Direction.DOWN_RIGHT,
    Direction.DOWN_LEFT,
    Direction.UP_LEFT,
]

CARDINAL_DIRECTIONS = DIRECTION_ORDER[:4]


class HeadKind(str, Enum):
    DIRECTED = "directed"
    UNDIRECTED = "undirected"


class WedgeHalf(str, Enum):
    """
    Which half of a 90 degree cardinal wedge a 45 degree head keeps.
    FIRST starts at the direction axis (counter-clockwise side),
    SECOND ends at it.
    """
    FIRST = "first"
    SECOND = "second"


class MaskMode(str, Enum):
    HARD = "hard"   # masked entries carry +inf
    ZERO = "zero"   # ablation: masked entries carry 0


class Method(str, Enum):
    """
    Position-encoding methods. NONE is the bag-of-patches baseline.
    """
    NONE = "none"
    LEARNED_1D = "learned_1d"
    SINCOS_2D = "sincos_2d"
    FACTORIZED = "factorized"
    FOURIER = "fourier"
    RPE_LEARN = "rpe_learn"
    ALIBI_2D = "alibi_2d"
    ROPE_2D = "rope_2d"
    LOOKHERE = "lookhere"


class Variant(str, Enum):
    """
    Variants selectable from the command line.
    """
    NONE = "none"
    LH180 = "lh180"
    LH90 = "lh90"
    LH45 = "lh45"
    ALIBI_2D = "alibi_2d"
    ROPE_2D = "rope_2d"
    RPE_LEARN = "rpe_learn"
    LEARNED_1D = "learned_1d"
    SINCOS_2D = "sincos_2d"
    FACTORIZED = "factorized"
    FOURIER = "fourier"


class EmbeddingFamily(str, Enum):
    LEARNED_1D = "learned_1d"
    SINCOS_2D = "sincos_2d"
    FACTORIZED = "factorized"
    FOURIER = "fourier"
