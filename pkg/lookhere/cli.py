"""
Command-line entry point for the LookHere toolkit.

Commands:
    gen-bias   write a bias field (LHBF) plus optional CSV slices and PGM renders
    demo       train the tiny ViT on the bright-quadrant task and test extrapolation
    adapt      move an encoding to a target grid and write the adapted artifact
    analyze    per-layer attention metrics of an untrained seeded model
    sparsity   per-head masked fractions of a LookHere layout

Exit codes: 0 success, 2 validation, 3 runtime.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

import torch
from dotenv import load_dotenv
from pydantic import ValidationError

from lookhere import __version__
from lookhere.analysis import layer_report
from lookhere.attention import TinyViT, vit_forward
from lookhere.bias_field import BiasField, default_head_specs, head_mask_fractions, masked_fraction
from lookhere.config import settings
from lookhere.enums import Method
from lookhere.exceptions import CommandError, InvalidArgumentError, LookHereError
from lookhere.extrapolate import adapt, adapt_record, state_from_config, tuned_preset
from lookhere.grid import PatchGrid, make_grid
from lookhere.schemas import AdaptPlan, MetricRecord, RunConfig
from lookhere.storage import write_embedding_lhbf, write_field_csv, write_json, write_jsonl, write_lhbf, write_pgm
from lookhere.synthetic import LAYER_METRICS, layer_metrics, run_demo, sample_batch
from lookhere.validation import VARIANT_METHOD, describe_plan, validate_run_config, variant_fov

# Load environment variables
load_dotenv()

logger = logging.getLogger("lookhere")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

ANALYZE_SAMPLES = 4

# RunConfig fields that can be set from flags
OVERRIDABLE_FIELDS = [
    "variant", "grid", "target", "layers", "heads", "dim", "patch_size", "fov", "s_g",
    "base_freq", "penalty_exp", "mask_mode", "invert_sl", "undirected_no_dist",
    "undirected_fov", "seed", "out", "csv", "pgm", "steps", "tune", "preset",
]


def configure_logging() -> None:
    level = logging.DEBUG if settings.DEBUG else getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


# ============================================================================
# Argument parsing
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=settings.APP_NAME, description="LookHere position-encoding toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file with RunConfig fields; flags win")
    common.add_argument("--variant", help="lh180, lh90, lh45, alibi_2d, rope_2d, rpe_learn, learned_1d, sincos_2d, factorized, fourier, none")
    common.add_argument("--grid", help="Source patch grid, NyxNx")
    common.add_argument("--target", help="Target patch grid, NyxNx")
    common.add_argument("--layers", type=int)
    common.add_argument("--heads", type=int)
    common.add_argument("--dim", type=int)
    common.add_argument("--patch-size", dest="patch_size", type=int)
    common.add_argument("--fov", type=int, choices=[45, 90, 180])
    common.add_argument("--s-g", dest="s_g", type=float, help="Global slope (LookHere, 2D-ALiBi)")
    common.add_argument("--base-freq", dest="base_freq", type=float, help="2D-RoPE base frequency")
    common.add_argument("--penalty-exp", dest="penalty_exp", type=float, choices=[1.0, 2.0, 0.5, 0.0])
    common.add_argument("--mask-mode", dest="mask_mode", choices=["hard", "zero"])
    common.add_argument("--invert-sl", dest="invert_sl", action="store_true", default=None)
    common.add_argument("--undirected-no-dist", dest="undirected_no_dist", action="store_true", default=None)
    common.add_argument("--undirected-fov", dest="undirected_fov", type=int, choices=[90, 180])
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="Output directory")
    common.add_argument("--csv", action="store_true", default=None, help="Also write CSV slices")
    common.add_argument("--pgm", action="store_true", default=None, help="Also write PGM renders")
    common.add_argument("--steps", type=int, help="Demo training steps")
    common.add_argument("--tune", action="store_true", default=None, help="demo: tune the target scalar on a held-out minival split")
    common.add_argument("--preset", action="store_true", default=None, help="adapt: use the tuned scalar for the target resolution")

    commands = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("gen-bias", "Write a bias field"),
        ("demo", "Synthetic extrapolation demo"),
        ("adapt", "Adapt an encoding to a target grid"),
        ("analyze", "Attention metric report"),
        ("sparsity", "Per-head masked fractions"),
    ]:
        commands.add_parser(name, parents=[common], help=help_text)
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    """
    Read the JSON config (if any), then apply the flags that were given.

    Raises:
        CommandError: unreadable file or invalid values (exit 2)
    """
    data: Dict = {"seed": settings.DEFAULT_SEED, "out": settings.OUTPUT_DIR}
    if args.config is not None:
        try:
            data.update(json.loads(args.config.read_text()))
        except (OSError, json.JSONDecodeError) as e:
            raise CommandError(EXIT_VALIDATION, f"Cannot read config {args.config}: {e}")

    for name in OVERRIDABLE_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value

    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise CommandError(EXIT_VALIDATION, f"Invalid configuration: {e}")


def check_config(config: RunConfig, command: str) -> None:
    errors = validate_run_config(config, command)
    if errors:
        raise CommandError(EXIT_VALIDATION, "; ".join(errors))


# ============================================================================
# Renders
# ============================================================================

def render_field(directory: Path, field: BiasField) -> List[Path]:
    """
    Per head of layer 1: the full T x T panel and the central query's
    n_y x n_x map (masked cells black).
    """
    grid = field.grid
    written = []
    for h in range(field.heads):
        panel = field.values[0, h].detach().cpu().numpy()
        written.append(write_pgm(directory / f"bias_l01_h{h + 1:02d}.pgm", panel))
        center = panel[grid.center_index, 1:].reshape(grid.n_y, grid.n_x)
        written.append(write_pgm(directory / f"center_h{h + 1:02d}.pgm", center))
    logger.info("Wrote %d PGM renders to %s", len(written), directory)
    return written


def render_attention(directory: Path, grid: PatchGrid, center_maps: torch.Tensor) -> List[Path]:
    """
    One PGM per (layer, head) of the averaged central-query attention.
    """
    written = []
    depth, heads = center_maps.shape[:2]
    for l in range(depth):
        for h in range(heads):
            path = directory / f"attn_{grid}_l{l + 1:02d}_h{h + 1:02d}.pgm"
            written.append(write_pgm(path, center_maps[l, h].cpu().numpy()))
    return written


# ============================================================================
# Commands
# ============================================================================

def cmd_gen_bias(config: RunConfig) -> None:
    """
    Build the variant's bias field at --grid and write it as LHBF.
    """
    field = state_from_config(config).encoding().bias
    out = Path(config.out)
    write_lhbf(out / f"{config.variant.value}_{config.grid}.lhbf", field)

    for h in range(1, field.heads + 1):
        logger.info("head %d masked fraction %.4f", h, masked_fraction(field, 1, h))
    if config.csv:
        write_field_csv(out / "csv", field)
    if config.pgm:
        render_field(out / "pgm", field)


def cmd_sparsity(config: RunConfig) -> None:
    """
    Masked fraction per head, one JSON line each, plus the layer-wide mean.
    """
    grid = make_grid(*config.grid_shape)
    specs = default_head_specs(variant_fov(config), config.heads, config.undirected_fov)
    fractions = head_mask_fractions(grid, specs, config.mask_mode)
    records = [
        MetricRecord(metric="masked_fraction", head=h, value=value, grid=str(grid))
        for h, value in enumerate(fractions, start=1)
    ]
    records.append(MetricRecord(metric="masked_fraction_mean", value=sum(fractions) / len(fractions), grid=str(grid)))
    for record in records:
        logger.info("%s head=%s %.4f", record.metric, record.head, record.value)
    write_jsonl(Path(config.out) / f"sparsity_{config.variant.value}_{grid}.jsonl", records, exclude_none=True)


def cmd_adapt(config: RunConfig) -> None:
    """
    Build the encoding at --grid, adapt it to --target and write the result.
    --s-g (LookHere, 2D-ALiBi) and --base-freq (2D-RoPE) are the target's tuned scalar;
    --preset looks it up by the target's pixel width instead.
    """
    method = VARIANT_METHOD[config.variant]
    if config.preset:
        tuned_scalar = tuned_preset(method, config.target_shape[1] * config.patch_size)
    else:
        tuned_scalar = config.base_freq if method == Method.ROPE_2D else config.s_g
    state = state_from_config(config.model_copy(update={"s_g": None, "base_freq": None}))
    plan = AdaptPlan(
        method=method,
        source=config.grid_shape,
        target=config.target_shape,
        tuned_scalar=tuned_scalar,
    )
    logger.info(describe_plan(plan))
    try:
        adapted = adapt(plan, state)
    except InvalidArgumentError as e:
        raise CommandError(EXIT_VALIDATION, str(e))

    out = Path(config.out)
    encoding = adapted.encoding()
    stem = f"{config.variant.value}_{config.target}"
    if encoding.bias is not None:
        write_lhbf(out / f"{stem}.lhbf", encoding.bias)
    elif encoding.table is not None:
        write_embedding_lhbf(out / f"{stem}.lhbf", encoding.table)
    write_json(out / f"{stem}_tuning.json", adapt_record(plan, adapted))


@torch.no_grad()
def cmd_analyze(config: RunConfig) -> None:
    """
    Attention metrics of an untrained seeded model on bright-quadrant images,
    at --grid and, when given, at --target.
    """
    dtype = settings.torch_dtype
    dims = config.dims
    model = TinyViT(dims, in_channels=1, seed=config.seed).to(dtype)
    state = state_from_config(config, dtype=dtype)
    states = [state]
    if config.target is not None:
        plan = AdaptPlan(method=state.method, source=config.grid_shape, target=config.target_shape)
        states.append(adapt(plan, state))

    records: List[MetricRecord] = []
    for current in states:
        generator = torch.Generator().manual_seed(config.seed)
        images, _ = sample_batch(current.grid, dims.patch_size, ANALYZE_SAMPLES, generator, dtype=dtype)
        result = vit_forward(images, model, current.encoding(), current.grid)
        metrics, maps = layer_metrics(result, current.grid, ANALYZE_SAMPLES)
        for name in LAYER_METRICS:
            records.extend(layer_report(name, metrics[name], current.grid).records())
        if config.pgm:
            render_attention(Path(config.out) / "pgm", current.grid, maps)
    write_jsonl(Path(config.out) / f"analyze_{config.variant.value}.jsonl", records, exclude_none=True)


def cmd_demo(config: RunConfig) -> None:
    outcome = run_demo(config)
    out = Path(config.out)
    stem = f"demo_{config.variant.value}_seed{config.seed}"
    write_json(out / f"{stem}.json", outcome.report)
    if outcome.tuning is not None:
        write_json(out / f"{stem}_tuning.json", outcome.tuning)
    for evaluation in (outcome.source, outcome.target):
        render_attention(out / "pgm", evaluation.grid, evaluation.center_maps)


COMMANDS: Dict[str, Callable[[RunConfig], None]] = {
    "gen-bias": cmd_gen_bias,
    "demo": cmd_demo,
    "adapt": cmd_adapt,
    "analyze": cmd_analyze,
    "sparsity": cmd_sparsity,
}


# ============================================================================
# Entry point
# ============================================================================

def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging()
    try:
        config = load_config(args)
        check_config(config, args.command)
        COMMANDS[args.command](config)
    except CommandError as e:
        logger.error(e.detail)
        return e.exit_code
    except (ValidationError, InvalidArgumentError) as e:
        logger.error(str(e))
        return EXIT_VALIDATION
    except (LookHereError, OSError, RuntimeError) as e:
        logger.error("%s failed: %s", args.command, e)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
