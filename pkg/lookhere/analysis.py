"""
Diagnostics over attention matrices, patch representations and predictions:
head diversity (generalized JSD, pairwise L1/L2), attention distance, patch
similarity and expected calibration error.
"""

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import torch

from lookhere.exceptions import InvalidArgumentError
from lookhere.grid import PatchGrid
from lookhere.schemas import MetricRecord

ROW_TOLERANCE = 1e-6
ECE_BINS = 15


@dataclass
class MetricReport:
    """
    One value per layer for a named metric.
    """
    metric: str
    values: List[float]
    grid: PatchGrid

    def records(self) -> List[MetricRecord]:
        return [
            MetricRecord(metric=self.metric, layer=l, value=value, grid=str(self.grid))
            for l, value in enumerate(self.values, start=1)
        ]


def layer_report(metric: str, values: Sequence[float], grid: PatchGrid) -> MetricReport:
    values = [float(v) for v in values]
    if any(not math.isfinite(v) for v in values):
        raise InvalidArgumentError(f"{metric} report has non-finite values")
    return MetricReport(metric=metric, values=values, grid=grid)


def _check_rows(weights: torch.Tensor) -> None:
    if weights.ndim != 3 or weights.shape[-1] != weights.shape[-2]:
        raise InvalidArgumentError(f"expected H x T x T weights, got {tuple(weights.shape)}")
    if (weights < 0).any() or (weights.sum(dim=-1) - 1).abs().max() > ROW_TOLERANCE:
        raise InvalidArgumentError("attention rows must be probability distributions")


def _entropy(p: torch.Tensor) -> torch.Tensor:
    return -torch.special.xlogy(p, p).sum(dim=-1)


# ============================================================================
# Head diversity
# ============================================================================

def head_jsd(weights: torch.Tensor) -> float:
    """
    Generalized Jensen-Shannon divergence between heads, averaged over rows:
    H(mean_h p_h) - mean_h H(p_h), natural log. Bounded by ln H.
    """
    _check_rows(weights)
    mixture = _entropy(weights.mean(dim=0))
    individual = _entropy(weights).mean(dim=0)
    return (mixture - individual).mean().item()


def _pairwise_head_distance(weights: torch.Tensor, p: float) -> float:
    _check_rows(weights)
    heads = weights.shape[0]
    if heads < 2:
        return 0.0
    total, pairs = 0.0, 0
    for a in range(heads):
        for b in range(a + 1, heads):
            total += torch.linalg.vector_norm(weights[a] - weights[b], ord=p, dim=-1).mean().item()
            pairs += 1
    return total / pairs


def head_l1_distance(weights: torch.Tensor) -> float:
    """
    Mean L1 distance between attention rows of every head pair.
    """
    return _pairwise_head_distance(weights, 1)


def head_l2_distance(weights: torch.Tensor) -> float:
    return _pairwise_head_distance(weights, 2)


# ============================================================================
# Spatial measurements
# ============================================================================

def attention_distance(weights: torch.Tensor, grid: PatchGrid) -> float:
    """
    Mean over heads and patch queries of sum_j weight(i, j) * dist(i, j); CLS excluded.
    """
    _check_rows(weights)
    if weights.shape[-1] != grid.tokens:
        raise InvalidArgumentError(f"weights cover {weights.shape[-1]} tokens, grid has {grid.tokens}")
    dist = grid.distance_matrix(weights.dtype)
    return (weights[:, 1:, 1:] * dist).sum(dim=-1).mean().item()


def patch_similarity(reps: torch.Tensor) -> float:
    """
    Mean cosine similarity over unordered pairs of patch representations (n x D).
    """
    if reps.ndim != 2 or reps.shape[0] < 2:
        raise InvalidArgumentError(f"need at least two n x D patch representations, got {tuple(reps.shape)}")
    norms = torch.linalg.vector_norm(reps, dim=-1)
    if (norms == 0).any():
        raise InvalidArgumentError("patch representation with zero norm")
    unit = reps / norms[:, None]
    sims = unit @ unit.T
    rows, cols = torch.triu_indices(reps.shape[0], reps.shape[0], offset=1)
    return sims[rows, cols].mean().item()


def center_query_maps(weights: torch.Tensor, grid: PatchGrid) -> torch.Tensor:
    """
    (H, n_y, n_x) attention of the central query patch over the patches.
    """
    row = weights[:, grid.center_index, 1:]
    return row.reshape(weights.shape[0], grid.n_y, grid.n_x)


# ============================================================================
# Calibration
# ============================================================================

def _bin_index(confidences: torch.Tensor, bins: int) -> torch.Tensor:
    # [lo, hi) bins, the last one closed at 1.0
    return torch.clamp((confidences * bins).floor().long(), 0, bins - 1)


def reliability_bins(confidences, correct, bins: int = ECE_BINS) -> List[Tuple[float, float, int]]:
    """
    Per bin (mean confidence, accuracy, count); empty bins report (nan, nan, 0).
    """
    conf = torch.as_tensor(confidences, dtype=torch.float64)
    hits = torch.as_tensor(correct, dtype=torch.float64)
    if conf.numel() == 0:
        raise InvalidArgumentError("calibration needs at least one sample")
    if conf.shape != hits.shape:
        raise InvalidArgumentError("confidences and correctness differ in length")
    if (conf < 0).any() or (conf > 1).any():
        raise InvalidArgumentError("confidences must lie in [0, 1]")

    index = _bin_index(conf, bins)
    result = []
    for b in range(bins):
        members = index == b
        count = int(members.sum())
        if count == 0:
            result.append((math.nan, math.nan, 0))
        else:
            result.append((conf[members].mean().item(), hits[members].mean().item(), count))
    return result


def ece(confidences, correct, bins: int = ECE_BINS) -> float:
    """
    Expected calibration error over equal-width bins.
    """
    table = reliability_bins(confidences, correct, bins)
    total = sum(count for _, _, count in table)
    return sum(count / total * abs(acc - conf) for conf, acc, count in table if count)
