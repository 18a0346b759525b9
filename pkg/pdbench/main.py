"""Command-line interface for pdbench."""
import argparse
import json
import logging
import sys
from typing import Callable, Optional, Sequence

from .config import settings
from .errors import ConfigError, DecompositionError, DecouplingError
from .models import U64_MAX
from .services.dsp_service import DspDecomposition
from .services.experiment_service import experiment_service
from .services.preset_service import preset_service
from .services.report_service import report_service
from .services.run_service import run_service

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_MARGIN = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def u64(text: str) -> int:
    value = int(text)
    if not 0 <= value <= U64_MAX:
        raise argparse.ArgumentTypeError(f"{text} is not an unsigned 64-bit integer")
    return value


def positive_samples(text: str) -> int:
    value = int(text)
    if value < 2:
        raise argparse.ArgumentTypeError("at least two samples are needed")
    return value


# ============ Commands ============

def cmd_verify(args: argparse.Namespace) -> int:
    """Run one experiment config."""
    config = run_service.parse_config(args.config)
    manifest = run_service.run(config, out_dir=args.out, seed=args.seed, samples=args.samples)
    return manifest.exit_code


def cmd_sweep(args: argparse.Namespace) -> int:
    """Run a suite of experiments and random sweeps."""
    suite = run_service.parse_suite(args.suite)
    manifest = run_service.run(suite, out_dir=args.out, seed=args.seed, samples=args.samples)
    return manifest.exit_code


def cmd_plot_data(args: argparse.Namespace) -> int:
    """Write the CSV view of a manifest's reports."""
    report_service.emit_plot_data(args.manifest, args.out)
    return EXIT_OK


def cmd_presets(args: argparse.Namespace) -> int:
    """List built-in presets."""
    if args.kind == "state":
        presets = preset_service.get_state_presets()
    elif args.kind == "channel":
        presets = preset_service.get_channel_presets()
    else:
        presets = preset_service.get_all_presets()
    if args.json:
        print(json.dumps([p.model_dump() for p in presets], indent=2))
        return EXIT_OK
    for preset in presets:
        coherent = " [classically coherent]" if preset.classically_coherent else ""
        params = f" {preset.parameters}" if preset.parameters else ""
        print(f"{preset.kind:8} {preset.id:24} {preset.description}{coherent}{params}")
    return EXIT_OK


def cmd_twirl(args: argparse.Namespace) -> int:
    """Check the twisted-twirl closed forms against Monte Carlo."""
    decomp = DspDecomposition.from_literal(args.blocks)
    report = experiment_service.verify_twirl(decomp, args.samples, args.seed)
    print(json.dumps(report.model_dump(mode="json"), sort_keys=True, indent=2))
    return EXIT_OK if report.passed else EXIT_MARGIN


# ============ Parser ============

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pdbench", description="Numerical checks of one-shot partial decoupling bounds")
    parser.add_argument("--log-level", default=None, help=f"logging level (default {settings.log_level})")
    commands = parser.add_subparsers(dest="command", required=True)

    verify = commands.add_parser("verify", help="run one experiment config")
    verify.add_argument("--config", required=True)
    verify.set_defaults(handler=cmd_verify)

    sweep = commands.add_parser("sweep", help="run a suite file")
    sweep.add_argument("--suite", required=True)
    sweep.set_defaults(handler=cmd_sweep)

    for sub in (verify, sweep):
        sub.add_argument("--seed", type=u64, default=None)
        sub.add_argument("--samples", type=positive_samples, default=None)
        sub.add_argument("--out", default=None, help=f"output directory (default {settings.output_dir})")

    plot = commands.add_parser("plot-data", help="write the CSV view of a manifest")
    plot.add_argument("--manifest", required=True)
    plot.add_argument("--out", required=True)
    plot.set_defaults(handler=cmd_plot_data)

    presets = commands.add_parser("presets", help="list built-in state and channel presets")
    presets.add_argument("--kind", choices=("state", "channel"), default=None)
    presets.add_argument("--json", action="store_true")
    presets.set_defaults(handler=cmd_presets)

    twirl = commands.add_parser("twirl", help="check twisted-twirl closed forms")
    twirl.add_argument("--blocks", required=True, help="decomposition literal, e.g. 'J=[(1,2), (1,3)]'")
    twirl.add_argument("--samples", type=positive_samples, default=20000)
    twirl.add_argument("--seed", type=u64, default=0)
    twirl.set_defaults(handler=cmd_twirl)
    return parser


def _guarded(handler: Callable[[argparse.Namespace], int], args: argparse.Namespace) -> int:
    try:
        return handler(args)
    except (ConfigError, DecompositionError) as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        logger.error("I/O error on %s: %s", getattr(exc, "filename", None) or "?", exc)
        return EXIT_IO
    except DecouplingError as exc:
        logger.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=(args.log_level or settings.log_level).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    return _guarded(args.handler, args)


if __name__ == "__main__":
    sys.exit(main())
