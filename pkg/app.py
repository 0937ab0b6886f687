"""
Pyramid Vision Transformer v2 toolkit
Main entry point of the system.
Describes model grids, computes parameter/MAC reports and input-size sweeps,
runs forward passes and the gradient and naive-loop verification suites.

    python app.py describe --variant B0
    python app.py cost --variant B2 --size 224 --csv b2.csv --equations
    python app.py sweep --variant B2,B2-Li --sizes 224,448,672,896
    python app.py gradcheck --micro --seed 7 --tol 1e-4
    python app.py infer --variant B0 --input-size 224 --seed 3
    python app.py oracle

Exit codes: 0 success, 1 operational failure, 2 usage error.
"""

import argparse
import logging
import sys

import numpy as np

from analytics.complexity import equation_report, format_equation_report
from analytics.cost import cost_report, count_params, growth_factors, sweep_macs
from attention.attention import SRA
from backbone.config import all_variants, config_for, micro_config
from backbone.model import PyramidVisionTransformerV2
from modelio.config_file import load_config
from modelio.weights import load_weights
from utils.config import (
    DEFAULT_INPUT_SIZE,
    DEFAULT_SEED,
    MODEL_GRAD_TOL,
    ORACLE_CASES,
    ORACLE_TOL,
)
from utils.errors import PvtError
from utils.image_utils import load_raw_image, parse_size, random_image
from verify.gradcheck import GRADCHECK_INPUT_SIZE, run_gradcheck
from verify.oracles import run_oracle_suite

logger = logging.getLogger("pvt")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _size(text):
    try:
        return parse_size(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _size_list(text):
    return [_size(part) for part in text.split(",") if part.strip()]


def _variant_list(text):
    return [name.strip() for name in text.split(",") if name.strip()]


def _fmt_size(size):
    return f"{size[0]}x{size[1]}"


def _resolve_config(args, default=None):
    if getattr(args, "config", None):
        return load_config(args.config)
    if getattr(args, "variant", None):
        return config_for(args.variant)
    if default is not None:
        return default
    raise PvtError("give --variant or --config")


def _add_model_source(parser, required=True):
    group = parser.add_mutually_exclusive_group(required=required)
    group.add_argument("--variant", help=f"built-in variant ({', '.join(all_variants())})")
    group.add_argument("--config", metavar="FILE", help="model configuration file")


# Subcommands

def cmd_describe(args):
    config = _resolve_config(args)
    print(f"Model: {config.variant_name} | {len(config.stages)} stages | {config.num_classes} classes")
    print(f"Overlapping patch embedding: {'yes' if config.overlapping_patch_embed else 'no'} | "
          f"Convolutional FFN: {'yes' if config.conv_ffn else 'no'} | "
          f"Linear SRA refinement: {'yes' if config.linear_sra_refine else 'no'}")
    for i, (stage, stride) in enumerate(zip(config.stages, config.output_strides), start=1):
        print(f"\nStage {i} (output stride {stride})")
        print(f"  S_{i} = {stage.stride}")
        print(f"  C_{i} = {stage.channels}")
        print(f"  L_{i} = {stage.depth}")
        if isinstance(stage.attn, SRA):
            print(f"  R_{i} = {stage.attn.reduction_ratio}")
        else:
            print(f"  P_{i} = {stage.attn.pool_size} (linear SRA)")
        print(f"  N_{i} = {stage.heads}")
        print(f"  E_{i} = {stage.mlp_ratio}")
    total = count_params(config)
    print(f"\nTotal params: {total:,} ({total / 1e6:.1f} M)")
    return EXIT_OK


def cmd_cost(args):
    config = _resolve_config(args)
    height, width = args.size
    report = cost_report(config, height, width)
    print(report.to_text())
    if args.equations:
        print()
        print(format_equation_report(equation_report(config, height, width)))
    if args.csv:
        report.write_csv(args.csv)
        print(f"Wrote CSV to {args.csv}")
    return EXIT_OK


def cmd_sweep(args):
    if not args.sizes:
        raise PvtError("--sizes needs at least one size")
    for index, name in enumerate(args.variant):
        config = config_for(name)
        rows = sweep_macs(config, args.sizes)
        total_growth = ["-"] + [f"{g:.2f}x" for g in growth_factors([r.total_macs for r in rows])]
        core_growth = ["-"] + [f"{g:.2f}x" for g in growth_factors([r.attention_core_macs for r in rows])]
        if index:
            print()
        print(f"Sweep: {config.variant_name}")
        print(f"{'size':>11}  {'total MACs':>18}  {'GFLOPs':>8}  {'growth':>7}  "
              f"{'attn core MACs':>16}  {'growth':>7}")
        for row, tg, cg in zip(rows, total_growth, core_growth):
            print(f"{_fmt_size(row.size):>11}  {row.total_macs:>18,}  {row.total_macs / 1e9:>8.2f}  {tg:>7}  "
                  f"{row.attention_core_macs:>16,}  {cg:>7}")
    return EXIT_OK


def cmd_gradcheck(args):
    config = _resolve_config(args, default=micro_config())
    print(f"Gradient check: {config.variant_name} @ {args.size}x{args.size} float64 | seed {args.seed} | "
          f"tol {args.tol:g} | elements per tensor: {args.max_elements or 'all'}")
    report = run_gradcheck(config, seed=args.seed, tol=args.tol, max_elements=args.max_elements, size=args.size)
    print(report.to_text())
    if not report.ok:
        failures = report.failures()
        print(f"FAILED: {len(failures)} tensor(s) above tolerance", file=sys.stderr)
        return EXIT_FAILURE
    print("PASSED")
    return EXIT_OK


def cmd_infer(args):
    config = _resolve_config(args)
    height, width = args.input_size
    if args.weights:
        model = PyramidVisionTransformerV2(config, weights=load_weights(args.weights))
        source = args.weights
    else:
        model = PyramidVisionTransformerV2(config, seed=args.weight_seed)
        source = f"seeded init (seed {args.weight_seed})"
    if args.input:
        image = load_raw_image(args.input, height, width, dtype=model.dtype)
        input_source = args.input
    else:
        image = random_image(height, width, seed=args.seed, dtype=model.dtype)
        input_source = f"uniform(-1, 1) (seed {args.seed})"

    pyramid, logits = model.forward(image)
    values = logits.numpy().astype(np.float64)
    print(f"Model: {config.variant_name} | weights: {source}")
    print(f"Input: {list(image.shape)} from {input_source}")
    for i, (fmap, stride) in enumerate(zip(pyramid.maps, pyramid.strides), start=1):
        print(f"Stage {i}: {list(fmap.shape)} (stride {stride})")
    print(f"Logits: {list(logits.shape)}")
    print(f"Logit sum: {values.sum():.9g}")
    print(f"Logit L2 norm: {np.linalg.norm(values):.9g}")
    return EXIT_OK


def cmd_oracle(args):
    print(f"Oracle suite | seed {args.seed} | {args.cases} cases each | tol {args.tol:g}")
    results = run_oracle_suite(seed=args.seed, cases=args.cases, tol=args.tol)
    for result in results:
        print(result.summary())
    if not all(result.ok for result in results):
        print("FAILED: fast kernels disagree with naive references", file=sys.stderr)
        return EXIT_FAILURE
    print("PASSED")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="pvt", description="Pyramid Vision Transformer v2 toolkit")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug logs")
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    describe = commands.add_parser("describe", help="per-stage hyperparameters and parameter count")
    _add_model_source(describe)
    describe.set_defaults(handler=cmd_describe)

    cost = commands.add_parser("cost", help="per-layer parameter and MAC report")
    _add_model_source(cost)
    cost.add_argument("--size", type=_size, default=(DEFAULT_INPUT_SIZE, DEFAULT_INPUT_SIZE),
                      help="input size, N or HxW (default 224)")
    cost.add_argument("--csv", metavar="PATH", help="also write the report as CSV")
    cost.add_argument("--equations", action="store_true", help="compare closed-form attention cost per stage")
    cost.set_defaults(handler=cmd_cost)

    sweep = commands.add_parser("sweep", help="MAC totals across input sizes")
    sweep.add_argument("--variant", type=_variant_list, default=["B2", "B2-Li"],
                       help="comma-separated variants (default B2,B2-Li)")
    sweep.add_argument("--sizes", type=_size_list, default=_size_list("224,448,672,896"),
                       help="comma-separated sizes, N or HxW")
    sweep.set_defaults(handler=cmd_sweep)

    gradcheck = commands.add_parser("gradcheck", help="tape vs finite-difference gradients (float64)")
    source = gradcheck.add_mutually_exclusive_group()
    source.add_argument("--micro", action="store_true", help="two-stage micro model (default)")
    source.add_argument("--variant", help="built-in variant instead of the micro model")
    source.add_argument("--config", metavar="FILE", help="model configuration file")
    gradcheck.add_argument("--seed", type=int, default=DEFAULT_SEED)
    gradcheck.add_argument("--tol", type=float, default=MODEL_GRAD_TOL)
    gradcheck.add_argument("--size", type=int, default=GRADCHECK_INPUT_SIZE, help="square input side")
    gradcheck.add_argument("--max-elements", type=int, default=0, help="elements sampled per tensor, 0 = all")
    gradcheck.set_defaults(handler=cmd_gradcheck)

    infer = commands.add_parser("infer", help="forward pass, logit checksum and feature-map shapes")
    _add_model_source(infer)
    infer.add_argument("--weights", metavar="FILE", help="weight file (default: seeded init)")
    infer.add_argument("--input-size", type=_size, default=(DEFAULT_INPUT_SIZE, DEFAULT_INPUT_SIZE))
    infer.add_argument("--input", metavar="FILE", help="raw little-endian float32 [1,3,H,W] image")
    infer.add_argument("--seed", type=int, default=DEFAULT_SEED, help="seed of the random input image")
    infer.add_argument("--weight-seed", type=int, default=DEFAULT_SEED, help="seed of fresh weights")
    infer.set_defaults(handler=cmd_infer)

    oracle = commands.add_parser("oracle", help="fast kernels vs naive-loop references (float64)")
    oracle.add_argument("--seed", type=int, default=DEFAULT_SEED)
    oracle.add_argument("--cases", type=int, default=ORACLE_CASES)
    oracle.add_argument("--tol", type=float, default=ORACLE_TOL)
    oracle.set_defaults(handler=cmd_oracle)
    return parser


def run(argv=None):
    """
    Parse arguments and run one subcommand.

    Args:
        argv: Argument list without the program name (defaults to sys.argv[1:])

    Returns:
        int: Exit code
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE

    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logger.debug("Running %s", args.command)

    try:
        return args.handler(args)
    except (PvtError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


def main():
    """Main application entry point."""
    sys.exit(run())


if __name__ == "__main__":
    main()
