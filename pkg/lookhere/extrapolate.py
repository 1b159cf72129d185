"""
Resolution-change orchestration: move each encoding method from a training
grid to a larger test grid, and tune the single scalar (global slope or
rotary base frequency) that some methods expose.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F

from lookhere.attention import PositionEncoding
from lookhere.bias_field import (
    BiasField,
    RelativeBiasTable,
    build_alibi_2d,
    build_lookhere,
    default_alibi_slopes,
    default_head_specs,
    fit_slopes,
    init_rpe_table,
    rpe_to_field,
)
from lookhere.config import settings
from lookhere.enums import Method
from lookhere.exceptions import InvalidArgumentError
from lookhere.grid import ModelDims, PatchGrid, make_grid
from lookhere.pos_embed import (
    EmbeddingTable,
    factorized_from_axes,
    factorized_init,
    fourier_embed,
    fourier_from_embedder,
    learned_1d_init,
    resize_bilinear,
    resize_factorized,
    sincos_2d,
)
from lookhere.rope import RotaryConfig, retune_base
from lookhere.schemas import AdaptPlan, HeadSpec, PenaltyConfig, RunConfig, SlopeConfig, TuningRecord, format_grid
from lookhere.validation import VARIANT_METHOD, validate_adapt_plan, variant_fov

logger = logging.getLogger(__name__)

# Tuned scalars per test resolution (px) for a 224 px, patch-16 training run.
TUNED_PARAMETERS: Dict[Method, Dict[int, float]] = {
    Method.ALIBI_2D: {224: 1.0, 320: 1.4, 384: 1.4, 448: 1.4, 512: 1.4, 768: 1.5, 1024: 1.6},
    Method.ROPE_2D: {224: 100, 320: 160, 384: 190, 448: 250, 512: 700, 768: 1250, 1024: 1250},
    Method.LOOKHERE: {224: 1.0, 320: 1.00, 384: 0.95, 448: 0.95, 512: 0.95, 768: 0.75, 1024: 0.6},
}


def tuned_preset(method: Method, resolution_px: int) -> float:
    try:
        return TUNED_PARAMETERS[method][resolution_px]
    except KeyError:
        raise InvalidArgumentError(f"no tuned preset for {method.value} at {resolution_px} px")


def slope_candidates() -> List[float]:
    """
    s_g candidates 0.5, 0.55, ..., 1.6.
    """
    return [round(0.5 + 0.05 * k, 2) for k in range(23)]


def base_freq_candidates(count: int = 12, low: float = 100.0, high: float = 1500.0) -> List[float]:
    return torch.logspace(torch.log10(torch.tensor(low)), torch.log10(torch.tensor(high)), count, dtype=torch.float64).tolist()


# ============================================================================
# Encoding state
# ============================================================================

@dataclass
class EncodingState:
    """
    Everything needed to rebuild one method's encoding on some grid.
    Only the fields relevant to `method` are set.
    """
    method: Method
    grid: PatchGrid
    dims: ModelDims
    table: Optional[EmbeddingTable] = None
    rpe: Optional[RelativeBiasTable] = None
    field: Optional[BiasField] = None
    head_specs: Optional[List[HeadSpec]] = None
    slopes: Optional[SlopeConfig] = None
    penalty: Optional[PenaltyConfig] = None
    alibi_slopes: Optional[List[float]] = None
    alibi_scale: float = 1.0
    rotary: Optional[RotaryConfig] = None

    def encoding(self) -> PositionEncoding:
        """
        Materialize the forward-pass inputs. Learned tables are re-derived
        from their parameters so gradients reach them.
        """
        if self.method == Method.FACTORIZED:
            return PositionEncoding(table=factorized_from_axes(self.grid, *self.table.axes))
        if self.method == Method.FOURIER:
            return PositionEncoding(table=fourier_from_embedder(self.grid, self.table.embedder))
        if self.method == Method.RPE_LEARN:
            return PositionEncoding(bias=rpe_to_field(self.rpe, self.grid, self.dims))
        return PositionEncoding(table=self.table, bias=self.field, rotary=self.rotary)

    def parameters(self) -> List[torch.Tensor]:
        """
        Trainable position parameters (empty for fixed encodings).
        """
        if self.method == Method.LEARNED_1D:
            return [self.table.values]
        if self.method == Method.FACTORIZED:
            return list(self.table.axes)
        if self.method == Method.FOURIER:
            return list(self.table.embedder.parameters())
        if self.method == Method.RPE_LEARN:
            return [self.rpe.values]
        return []


def init_state(
    method: Method,
    grid: PatchGrid,
    dims: ModelDims,
    seed: int = 0,
    fov: int = 90,
    head_specs: Optional[Sequence[HeadSpec]] = None,
    slopes: Optional[SlopeConfig] = None,
    penalty: Optional[PenaltyConfig] = None,
    base_freq: Optional[float] = None,
    trainable: bool = False,
    dtype: Optional[torch.dtype] = None,
) -> EncodingState:
    """
    Fresh encoding artifacts for `method` on `grid`.
    """
    dtype = dtype or settings.torch_dtype
    state = EncodingState(method=method, grid=grid, dims=dims)

    if method == Method.LEARNED_1D:
        state.table = learned_1d_init(grid.n, dims.width, seed, grid=grid, dtype=dtype)
    elif method == Method.SINCOS_2D:
        state.table = sincos_2d(grid, dims.width, dtype=dtype)
    elif method == Method.FACTORIZED:
        state.table = factorized_init(grid, dims.width, seed, dtype=dtype)
    elif method == Method.FOURIER:
        state.table = fourier_embed(grid, dims.width, seed=seed, dtype=dtype)
    elif method == Method.RPE_LEARN:
        state.rpe = init_rpe_table(grid, dims.heads, seed, dtype=dtype)
    elif method == Method.ALIBI_2D:
        state.alibi_slopes = default_alibi_slopes(dims.heads)
        state.alibi_scale = slopes.s_g if slopes is not None else 1.0
        state.field = build_alibi_2d(grid, dims, state.alibi_slopes, state.alibi_scale, dtype=dtype)
    elif method == Method.ROPE_2D:
        state.rotary = RotaryConfig(head_dim=dims.head_dim, grid=grid, base_freq=base_freq or 100.0)
    elif method == Method.LOOKHERE:
        state.head_specs = list(head_specs or default_head_specs(fov, dims.heads))
        state.slopes = fit_slopes(slopes or SlopeConfig(), state.head_specs)
        state.penalty = penalty or PenaltyConfig()
        state.field = build_lookhere(grid, dims, state.head_specs, state.slopes, state.penalty, dtype=dtype)

    if trainable:
        for tensor in state.parameters():
            if tensor.is_leaf:
                tensor.requires_grad_(True)
    return state


def state_from_config(config: RunConfig, trainable: bool = False, dtype: Optional[torch.dtype] = None) -> EncodingState:
    """
    init_state for the variant, grid, dims and ablation knobs of a RunConfig.
    """
    method = VARIANT_METHOD[config.variant]
    fov = variant_fov(config) or 90
    head_specs = None
    if method == Method.LOOKHERE:
        head_specs = default_head_specs(fov, config.heads, config.undirected_fov)
    return init_state(
        method,
        make_grid(*config.grid_shape),
        config.dims,
        seed=config.seed,
        fov=fov,
        head_specs=head_specs,
        slopes=config.slope_config(),
        penalty=config.penalty_config(),
        base_freq=config.base_freq,
        trainable=trainable,
        dtype=dtype,
    )


# ============================================================================
# Adaptation
# ============================================================================

def interpolate_rpe_table(table: RelativeBiasTable, new_grid: PatchGrid) -> RelativeBiasTable:
    """
    Bilinear (align_corners=True) resampling of the relative bias table from
    extent (2n_y-1, 2n_x-1) to (2n_y'-1, 2n_x'-1).
    """
    size = (2 * new_grid.n_y - 1, 2 * new_grid.n_x - 1)
    resized = F.interpolate(table.values.unsqueeze(0), size=size, mode="bilinear", align_corners=True)
    return RelativeBiasTable(values=resized.squeeze(0), n_y=new_grid.n_y, n_x=new_grid.n_x)


def adapt(plan: AdaptPlan, state: EncodingState) -> EncodingState:
    """
    Move `state` to plan.target using the method's adjustment procedure.
    """
    error = validate_adapt_plan(plan)
    if error:
        raise InvalidArgumentError(error)
    if state.method != plan.method:
        raise InvalidArgumentError(f"plan is for {plan.method.value}, state holds {state.method.value}")
    if state.grid.shape != plan.source:
        raise InvalidArgumentError(f"plan source {format_grid(*plan.source)} != state grid {state.grid}")
    if plan.is_identity:
        return state
    if plan.is_shrinking:
        logger.warning("Adapting %s to a smaller grid %s", plan.method.value, format_grid(*plan.target))

    target = make_grid(*plan.target)
    dtype = _state_dtype(state)
    adapted = replace(state, grid=target)
    method = plan.method
    logger.info("Adapting %s from %s to %s", method.value, state.grid, target)

    if method in (Method.LEARNED_1D, Method.SINCOS_2D):
        adapted.table = resize_bilinear(state.table, target)
    elif method == Method.FACTORIZED:
        adapted.table = resize_factorized(state.table, target)
    elif method == Method.FOURIER:
        adapted.table = fourier_from_embedder(target, state.table.embedder)
    elif method == Method.RPE_LEARN:
        adapted.rpe = interpolate_rpe_table(state.rpe, target)
    elif method == Method.ALIBI_2D:
        adapted.alibi_scale = plan.tuned_scalar if plan.tuned_scalar is not None else state.alibi_scale
        adapted.field = build_alibi_2d(target, state.dims, state.alibi_slopes, adapted.alibi_scale, dtype=dtype)
    elif method == Method.ROPE_2D:
        rotary = replace(state.rotary, grid=target)
        adapted.rotary = retune_base(rotary, plan.tuned_scalar) if plan.tuned_scalar is not None else rotary
    elif method == Method.LOOKHERE:
        if plan.tuned_scalar is not None:
            adapted.slopes = state.slopes.model_copy(update={"s_g": plan.tuned_scalar})
        adapted.field = build_lookhere(target, state.dims, state.head_specs, adapted.slopes, state.penalty, dtype=dtype)
    return adapted


def _state_dtype(state: EncodingState) -> torch.dtype:
    if state.field is not None:
        return state.field.values.dtype
    return settings.torch_dtype


def adapt_record(plan: AdaptPlan, state: EncodingState, score: Optional[float] = None) -> TuningRecord:
    """
    JSON record of the scalar an adapted state ended up with.
    """
    scalar = plan.tuned_scalar
    if scalar is None:
        if state.method == Method.LOOKHERE:
            scalar = state.slopes.s_g
        elif state.method == Method.ALIBI_2D:
            scalar = state.alibi_scale
        elif state.method == Method.ROPE_2D:
            scalar = state.rotary.base_freq
    return TuningRecord(
        method=plan.method,
        source=format_grid(*plan.source),
        target=format_grid(*plan.target),
        scalar=scalar,
        score=score,
    )


# ============================================================================
# Scalar tuning
# ============================================================================

def tune_scalar_with_score(
    candidates: Sequence[float],
    evaluate: Callable[[float], float],
    workers: Optional[int] = None,
) -> Tuple[float, float]:
    """
    Score every candidate and return (best candidate, its score); ties go to
    the smaller scalar.
    """
    if not candidates:
        raise InvalidArgumentError("tune_scalar needs at least one candidate")
    ordered = sorted(candidates)
    workers = workers or settings.TUNING_WORKERS
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(evaluate, ordered))
    else:
        scores = [evaluate(candidate) for candidate in ordered]

    best, best_score = ordered[0], scores[0]
    for candidate, score in zip(ordered, scores):
        logger.debug("candidate %s scored %s", candidate, score)
        if score > best_score:
            best, best_score = candidate, score
    return best, best_score


def tune_scalar(
    candidates: Sequence[float],
    evaluate: Callable[[float], float],
    workers: Optional[int] = None,
) -> float:
    """
    Return the candidate with the highest score; ties go to the smaller scalar.
    """
    return tune_scalar_with_score(candidates, evaluate, workers)[0]


def scalar_candidates(method: Method) -> List[float]:
    """
    Default search grid for a tunable method's scalar.
    """
    if method == Method.ROPE_2D:
        return base_freq_candidates()
    if method in (Method.LOOKHERE, Method.ALIBI_2D):
        return slope_candidates()
    raise InvalidArgumentError(f"method {method.value} has no tunable scalar")
