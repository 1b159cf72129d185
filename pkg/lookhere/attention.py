"""
Desk-scale multi-head self-attention and a minimal ViT that consume bias
fields, rotary configs or input embedding tables, plus a finite-difference
gradient checker.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import torch
import torch.nn as nn
from einops import rearrange

from lookhere.bias_field import BiasField
from lookhere.exceptions import InternalError, InvalidArgumentError
from lookhere.grid import ModelDims, PatchGrid, patchify
from lookhere.pos_embed import EmbeddingTable
from lookhere.rope import RotaryConfig, rotate_tokens

logger = logging.getLogger(__name__)

MLP_RATIO = 4


# ============================================================================
# Attention
# ============================================================================

@dataclass
class AttentionResult:
    """
    weights: (..., H, T, T) post-softmax; outputs: (..., T, H * D_H) merged heads.
    """
    weights: torch.Tensor
    outputs: torch.Tensor
    logits: Optional[torch.Tensor] = None


def masked_softmax(logits: torch.Tensor, bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    softmax(logits - bias) over the last dim with +inf bias entries excluded.
    Excluded entries get weight exactly 0 and gradient exactly 0.
    """
    if bias is None:
        return torch.softmax(logits, dim=-1)
    bias = bias.to(logits.dtype)
    mask = torch.isposinf(bias)
    if bool(mask.all(dim=-1).any()):
        raise InternalError("attention row has no visible key")
    shifted = (logits - bias.masked_fill(mask, 0.0)).masked_fill(mask, -math.inf)
    return torch.softmax(shifted, dim=-1)


def attend(
    Q: torch.Tensor,
    K: torch.Tensor,
    V: torch.Tensor,
    bias: Optional[torch.Tensor] = None,
    rotary: Optional[RotaryConfig] = None,
    keep_logits: bool = False,
) -> AttentionResult:
    """
    Scaled dot-product attention for (..., H, T, D_H) inputs.

    Args:
        bias: (H, T, T) slice of a BiasField for this layer, subtracted from logits
        rotary: rotates queries and keys before the dot product
    """
    if Q.shape != K.shape or Q.shape[:-1] != V.shape[:-1]:
        raise InvalidArgumentError(f"inconsistent Q/K/V shapes {tuple(Q.shape)}, {tuple(K.shape)}, {tuple(V.shape)}")
    if bias is not None and bias.shape[-2:] != Q.shape[-2:-1] * 2:
        raise InvalidArgumentError(f"bias shape {tuple(bias.shape)} does not match {Q.shape[-2]} tokens")

    if rotary is not None:
        Q, K = rotate_tokens(Q, rotary), rotate_tokens(K, rotary)
    logits = Q @ K.transpose(-2, -1) / math.sqrt(Q.shape[-1])
    weights = masked_softmax(logits, bias)
    outputs = rearrange(weights @ V, "... h t d -> ... t (h d)")
    return AttentionResult(weights=weights, outputs=outputs, logits=logits if keep_logits else None)


# ============================================================================
# Tiny ViT
# ============================================================================

@dataclass
class PositionEncoding:
    """
    What a forward pass consumes: an input table, a bias field and/or a rotary config.
    """
    table: Optional[EmbeddingTable] = None
    bias: Optional[BiasField] = None
    rotary: Optional[RotaryConfig] = None


@dataclass
class ForwardResult:
    logits: torch.Tensor
    attentions: List[AttentionResult] = field(default_factory=list)
    patch_reps: List[torch.Tensor] = field(default_factory=list)


class MLP(nn.Module):
    def __init__(self, width: int, hidden: int, out: Optional[int] = None):
        super().__init__()
        self.fc1 = nn.Linear(width, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, out or width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(x)))


class Block(nn.Module):
    """
    Pre-norm transformer block.
    """

    def __init__(self, dims: ModelDims):
        super().__init__()
        self.heads = dims.heads
        self.norm1 = nn.LayerNorm(dims.width)
        self.qkv = nn.Linear(dims.width, 3 * dims.width)
        self.proj = nn.Linear(dims.width, dims.width)
        self.norm2 = nn.LayerNorm(dims.width)
        self.mlp = MLP(dims.width, MLP_RATIO * dims.width)

    def forward(self, x, bias=None, rotary=None):
        q, k, v = rearrange(self.qkv(self.norm1(x)), "b t (three h d) -> three b h t d", three=3, h=self.heads)
        result = attend(q, k, v, bias=bias, rotary=rotary)
        x = x + self.proj(result.outputs)
        x = x + self.mlp(self.norm2(x))
        return x, result


class TinyViT(nn.Module):
    """
    Patch projection, CLS token, L pre-norm blocks and a one-hidden-layer
    MLP classifier on the CLS token. Initialization is seeded.
    """

    def __init__(self, dims: ModelDims, in_channels: int = 3, num_classes: int = 4, seed: int = 0):
        super().__init__()
        self.dims = dims
        self.in_channels = in_channels
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.patch_embed = nn.Linear(dims.patch_size * dims.patch_size * in_channels, dims.width)
            self.cls_token = nn.Parameter(torch.randn(1, 1, dims.width) * 0.02)
            self.blocks = nn.ModuleList([Block(dims) for _ in range(dims.depth)])
            self.norm = nn.LayerNorm(dims.width)
            self.head = MLP(dims.width, dims.width, num_classes)


def _check_encoding(encoding: PositionEncoding, grid: PatchGrid, dims: ModelDims) -> None:
    if encoding.table is not None and encoding.table.grid.shape != grid.shape:
        raise InvalidArgumentError(f"embedding table built for {encoding.table.grid}, input grid is {grid}")
    if encoding.bias is not None:
        bias = encoding.bias
        if bias.grid.shape != grid.shape:
            raise InvalidArgumentError(f"bias field built for {bias.grid}, input grid is {grid}")
        if bias.depth != dims.depth or bias.heads != dims.heads:
            raise InvalidArgumentError(f"bias field is {bias.depth}x{bias.heads}, model is {dims.depth}x{dims.heads}")
    if encoding.rotary is not None:
        if encoding.rotary.grid.shape != grid.shape:
            raise InvalidArgumentError(f"rotary config built for {encoding.rotary.grid}, input grid is {grid}")
        if encoding.rotary.head_dim != dims.head_dim:
            raise InvalidArgumentError(f"rotary head_dim {encoding.rotary.head_dim} != model head_dim {dims.head_dim}")


def vit_forward(
    inputs: torch.Tensor,
    params: TinyViT,
    encoding: Optional[PositionEncoding],
    grid: PatchGrid,
) -> ForwardResult:
    """
    Run the tiny ViT on images (B, Y, X, C) or patch tokens (B, n, P*P*C).
    """
    encoding = encoding or PositionEncoding()
    dims = params.dims
    if inputs.ndim == 4:
        tokens, input_grid = patchify(inputs, dims.patch_size)
        if input_grid.shape != grid.shape:
            raise InvalidArgumentError(f"image patchifies to {input_grid}, expected {grid}")
    elif inputs.ndim == 3:
        tokens = inputs
        if tokens.shape[1] != grid.n:
            raise InvalidArgumentError(f"{tokens.shape[1]} tokens for a {grid} grid")
    else:
        raise InvalidArgumentError(f"expected images or tokens, got shape {tuple(inputs.shape)}")
    _check_encoding(encoding, grid, dims)

    x = params.patch_embed(tokens)
    if encoding.table is not None:
        x = x + encoding.table.values.to(x.dtype)
    x = torch.cat([params.cls_token.expand(x.shape[0], -1, -1), x], dim=1)

    result = ForwardResult(logits=x.new_empty(0))
    for l, block in enumerate(params.blocks, start=1):
        bias = encoding.bias.layer(l) if encoding.bias is not None else None
        x, attention = block(x, bias=bias, rotary=encoding.rotary)
        result.attentions.append(attention)
        result.patch_reps.append(x[:, 1:])
    result.logits = params.head(params.norm(x)[:, 0])
    return result


# ============================================================================
# Gradient check
# ============================================================================

def grad_check(
    loss_fn: Callable[[], torch.Tensor],
    params: Sequence[torch.Tensor],
    eps: float = 1e-5,
    samples: int = 16,
    seed: int = 0,
    floor: float = 1e-6,
) -> float:
    """
    Max relative error between autograd gradients and central finite
    differences on randomly chosen coordinates of params.
    """
    if any(p.dtype != torch.float64 for p in params):
        logger.warning("grad_check on non-double parameters; expect loose agreement")

    analytic = torch.autograd.grad(loss_fn(), list(params), allow_unused=True)
    generator = torch.Generator().manual_seed(seed)
    worst = 0.0
    with torch.no_grad():
        for _ in range(samples):
            k = int(torch.randint(len(params), (1,), generator=generator))
            flat = params[k].detach().view(-1)
            idx = int(torch.randint(flat.numel(), (1,), generator=generator))
            original = flat[idx].item()

            flat[idx] = original + eps
            plus = loss_fn().item()
            flat[idx] = original - eps
            minus = loss_fn().item()
            flat[idx] = original

            numeric = (plus - minus) / (2 * eps)
            grad = analytic[k]
            exact = grad.reshape(-1)[idx].item() if grad is not None else 0.0
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), floor)
            worst = max(worst, error)
    return worst
