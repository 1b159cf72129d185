"""
File operations for the LookHere toolkit.
Reads and writes LHBF containers (bias fields and embedding tables), CSV
slices, PGM renders and JSON / JSON-lines records.

LHBF layout, little-endian:
    magic   b"LHBF"
    u16     version (1; 0x8001 marks an embedding-table payload)
    u32     L, H, T, n_y, n_x
    f32     payload, row-major
Bias fields carry L*H*T*T values with +inf for masked entries. Embedding
tables store the width D in the L slot, H = 1, T = n, and T*D values.
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Union

import numpy as np
import torch
from pydantic import BaseModel

from lookhere.bias_field import BiasField
from lookhere.exceptions import InvalidArgumentError
from lookhere.grid import make_grid
from lookhere.pos_embed import EmbeddingTable

logger = logging.getLogger(__name__)

MAGIC = b"LHBF"
VERSION = 1
EMBEDDING_FLAG = 0x8000
HEADER = struct.Struct("<4sH5I")

PathLike = Union[str, Path]


@dataclass
class LhbfPayload:
    """
    Raw contents of an LHBF file.
    """
    values: np.ndarray
    depth: int
    heads: int
    tokens: int
    n_y: int
    n_x: int
    is_embedding: bool = False


def _as_f32(values: torch.Tensor) -> np.ndarray:
    return np.ascontiguousarray(values.detach().cpu().numpy().astype("<f4"))


# ============================================================================
# LHBF containers
# ============================================================================

def write_lhbf(path: PathLike, field: BiasField) -> Path:
    """
    Write a bias field to an LHBF file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = HEADER.pack(MAGIC, VERSION, field.depth, field.heads, field.tokens, field.grid.n_y, field.grid.n_x)
    with open(path, "wb") as handle:
        handle.write(header)
        handle.write(_as_f32(field.values).tobytes())
    logger.info("Wrote %s field %s to %s", field.kind, tuple(field.values.shape), path)
    return path


def write_embedding_lhbf(path: PathLike, table: EmbeddingTable) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid = table.grid
    header = HEADER.pack(MAGIC, VERSION | EMBEDDING_FLAG, table.width, 1, grid.n, grid.n_y, grid.n_x)
    with open(path, "wb") as handle:
        handle.write(header)
        handle.write(_as_f32(table.values).tobytes())
    logger.info("Wrote %s table %s to %s", table.family.value, tuple(table.values.shape), path)
    return path


def read_lhbf(path: PathLike) -> LhbfPayload:
    """
    Read an LHBF file of either payload kind.
    """
    data = Path(path).read_bytes()
    if len(data) < HEADER.size:
        raise InvalidArgumentError(f"{path} is too short for an LHBF header")
    magic, version, depth, heads, tokens, n_y, n_x = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise InvalidArgumentError(f"{path} is not an LHBF file (magic {magic!r})")
    if version & ~EMBEDDING_FLAG != VERSION:
        raise InvalidArgumentError(f"{path} has unsupported LHBF version {version & ~EMBEDDING_FLAG}")

    is_embedding = bool(version & EMBEDDING_FLAG)
    shape = (tokens, depth) if is_embedding else (depth, heads, tokens, tokens)
    expected = int(np.prod(shape))
    values = np.frombuffer(data, dtype="<f4", offset=HEADER.size)
    if values.size != expected:
        raise InvalidArgumentError(f"{path} holds {values.size} values, header promises {expected}")
    return LhbfPayload(values.reshape(shape), depth, heads, tokens, n_y, n_x, is_embedding)


def load_field(path: PathLike, kind: str = "lookhere") -> BiasField:
    payload = read_lhbf(path)
    if payload.is_embedding:
        raise InvalidArgumentError(f"{path} holds an embedding table, not a bias field")
    values = torch.from_numpy(payload.values.copy())
    nonnegative = not bool((values[torch.isfinite(values)] < 0).any())
    return BiasField(values=values, grid=make_grid(payload.n_y, payload.n_x), kind=kind, nonnegative=nonnegative)


# ============================================================================
# CSV / PGM renders
# ============================================================================

def write_field_csv(directory: PathLike, field: BiasField) -> List[Path]:
    """
    One CSV per (layer, head): T rows of T comma separated values, `inf` for masked.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    values = field.values.detach().cpu().numpy()
    written = []
    for l in range(field.depth):
        for h in range(field.heads):
            path = directory / f"bias_l{l + 1:02d}_h{h + 1:02d}.csv"
            np.savetxt(path, values[l, h], fmt="%.9g", delimiter=",")
            written.append(path)
    logger.info("Wrote %d CSV slices to %s", len(written), directory)
    return written


def to_gray(panel: np.ndarray) -> np.ndarray:
    """
    Min-max normalize the finite entries of a 2D panel to 0..255; masked
    (+inf) entries render black.
    """
    panel = np.asarray(panel, dtype=np.float64)
    finite = np.isfinite(panel)
    gray = np.zeros(panel.shape, dtype=np.uint8)
    if finite.any():
        lo, hi = panel[finite].min(), panel[finite].max()
        span = hi - lo
        scaled = (panel[finite] - lo) / span if span > 0 else np.ones(int(finite.sum()))
        gray[finite] = np.round(scaled * 255).astype(np.uint8)
    return gray


def write_pgm(path: PathLike, panel: np.ndarray) -> Path:
    """
    Binary (P5) 8-bit PGM.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    gray = to_gray(panel)
    height, width = gray.shape
    with open(path, "wb") as handle:
        handle.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        handle.write(gray.tobytes())
    return path


def read_pgm(path: PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise InvalidArgumentError(f"{path} is not a binary PGM")
    width, height = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(height, width)


# ============================================================================
# JSON records
# ============================================================================

def write_json(path: PathLike, record: BaseModel) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(record.model_dump_json(indent=2) + "\n")
    logger.info("Wrote %s", path)
    return path


def write_jsonl(path: PathLike, records: Iterable[BaseModel], exclude_none: bool = False) -> Path:
    """
    One JSON object per line. exclude_none drops unset optional keys, e.g.
    the head index of a per-layer metric.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as handle:
        for record in records:
            handle.write(record.model_dump_json(exclude_none=exclude_none) + "\n")
    logger.info("Wrote %s", path)
    return path
