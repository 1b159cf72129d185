"""
Validation rules for the LookHere toolkit.
Contains the per-method adjustment table, variant rules, and the checks run
against run configs and adapt plans before any work starts.
"""

from typing import List, Optional

from lookhere.enums import Method, Variant
from lookhere.schemas import AdaptPlan, RunConfig, format_grid


# How each method is carried to a larger grid
METHOD_ADJUSTMENTS = {
    Method.NONE: "none",
    Method.LEARNED_1D: "bilinear interpolation of the embedding table",
    Method.SINCOS_2D: "bilinear interpolation of the embedding table",
    Method.FACTORIZED: "linear interpolation of each axis table",
    Method.FOURIER: "none (fractional coordinates)",
    Method.RPE_LEARN: "bilinear interpolation of the relative bias table",
    Method.ALIBI_2D: "rebuild with a tuned distance scale s_g",
    Method.ROPE_2D: "tuned base frequency",
    Method.LOOKHERE: "rebuild with a tuned global slope s_g",
}

# Methods whose adaptation takes a tuned scalar
TUNABLE_METHODS = [Method.ALIBI_2D, Method.ROPE_2D, Method.LOOKHERE]

VARIANT_FOV = {
    Variant.LH180: 180,
    Variant.LH90: 90,
    Variant.LH45: 45,
}

VARIANT_METHOD = {
    Variant.NONE: Method.NONE,
    Variant.LH180: Method.LOOKHERE,
    Variant.LH90: Method.LOOKHERE,
    Variant.LH45: Method.LOOKHERE,
    Variant.ALIBI_2D: Method.ALIBI_2D,
    Variant.ROPE_2D: Method.ROPE_2D,
    Variant.RPE_LEARN: Method.RPE_LEARN,
    Variant.LEARNED_1D: Method.LEARNED_1D,
    Variant.SINCOS_2D: Method.SINCOS_2D,
    Variant.FACTORIZED: Method.FACTORIZED,
    Variant.FOURIER: Method.FOURIER,
}

# Variants that produce a BiasField
BIAS_VARIANTS = [Variant.LH180, Variant.LH90, Variant.LH45, Variant.ALIBI_2D, Variant.RPE_LEARN]


def is_tunable(method: Method) -> bool:
    """
    Check whether a method's adaptation takes a tuned scalar.
    """
    return method in TUNABLE_METHODS


def get_adjustment(method: Method) -> str:
    return METHOD_ADJUSTMENTS.get(method, "none")


def variant_fov(config: RunConfig) -> Optional[int]:
    """
    Effective FOV of an lh* variant; --fov wins over the variant's own FOV.
    """
    if config.variant not in VARIANT_FOV:
        return None
    return config.fov or VARIANT_FOV[config.variant]


def validate_adapt_plan(plan: AdaptPlan) -> Optional[str]:
    """
    Validate an adapt plan and return an error message if invalid.

    Returns:
        None if valid, error message string if invalid
    """
    if plan.tuned_scalar is not None and not is_tunable(plan.method):
        tunable = ", ".join(m.value for m in TUNABLE_METHODS)
        return f"Method '{plan.method.value}' takes no tuned scalar. Tunable methods: {tunable}"
    return None


def validate_run_config(config: RunConfig, command: str) -> List[str]:
    """
    Cross-field checks a RunConfig must pass before `command` runs.

    Returns:
        List of error messages (empty if valid)
    """
    errors = []
    if config.dim % config.heads:
        errors.append(f"--dim {config.dim} is not divisible by --heads {config.heads}")
    else:
        head_dim = config.dim // config.heads
        if config.variant == Variant.ROPE_2D and head_dim % 4:
            errors.append(f"rope_2d needs head_dim divisible by 4, got {head_dim}")
    if config.variant == Variant.SINCOS_2D and config.dim % 4:
        errors.append(f"sincos_2d needs --dim divisible by 4, got {config.dim}")

    if config.fov is not None and config.variant not in VARIANT_FOV:
        errors.append(f"--fov only applies to lh180/lh90/lh45, not {config.variant.value}")
    if config.s_g is not None and config.variant not in (*VARIANT_FOV, Variant.ALIBI_2D):
        errors.append(f"--s-g only applies to LookHere and alibi_2d, not {config.variant.value}")
    if config.base_freq is not None and config.variant != Variant.ROPE_2D:
        errors.append("--base-freq only applies to rope_2d")

    if command == "gen-bias" and config.variant not in BIAS_VARIANTS:
        valid = ", ".join(v.value for v in BIAS_VARIANTS)
        errors.append(f"gen-bias needs a bias variant ({valid}), got {config.variant.value}")
    if command == "sparsity" and config.variant not in VARIANT_FOV:
        errors.append(f"sparsity needs a LookHere variant (lh180, lh90, lh45), got {config.variant.value}")
    if command in ("adapt", "demo") and config.target is None:
        errors.append(f"{command} needs --target")
    if command == "demo" and config.target is not None:
        source, target = config.grid_shape, config.target_shape
        if target[0] < source[0] or target[1] < source[1]:
            errors.append(f"demo extrapolates: --target {config.target} must not be smaller than --grid {config.grid}")
    if config.tune:
        if command != "demo":
            errors.append("--tune only applies to demo")
        if not is_tunable(VARIANT_METHOD[config.variant]):
            errors.append(f"--tune needs a tunable variant, {config.variant.value} has no scalar")
    if config.preset:
        if command != "adapt":
            errors.append("--preset only applies to adapt")
        if not is_tunable(VARIANT_METHOD[config.variant]):
            errors.append(f"--preset needs a tunable variant, {config.variant.value} has no scalar")
        if config.s_g is not None or config.base_freq is not None:
            errors.append("--preset replaces --s-g / --base-freq; give one or the other")
        if config.target is not None and config.target_shape[0] != config.target_shape[1]:
            errors.append(f"--preset needs a square target, got {config.target}")
    return errors


def describe_plan(plan: AdaptPlan) -> str:
    return (
        f"{plan.method.value}: {format_grid(*plan.source)} -> {format_grid(*plan.target)} "
        f"via {get_adjustment(plan.method)}"
    )
