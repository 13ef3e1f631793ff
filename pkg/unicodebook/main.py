"""Command-line entry point for unicodebook."""

from __future__ import annotations

import argparse
import asyncio
import logging
import sys
from pathlib import Path

from unicodebook.cli.commands import COMMANDS, CommandContext
from unicodebook.config import load_settings
from unicodebook.domain.errors import UnicodebookError
from unicodebook.domain.models import Paradigm

LOG_FORMAT = "%(asctime)s | %(levelname)-8s | %(name)s | %(message)s"

logger = logging.getLogger("unicodebook")


def _override(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got '{text}'")
    return key.strip().lower().replace("-", "_"), value.strip()


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat KEY=value settings file (UNICODEBOOK_ prefixed keys)")
    common.add_argument("--out", type=Path, help="output directory (default: <output_root>/<command>)")
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument(
        "--set",
        dest="overrides",
        type=_override,
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override any setting, highest precedence",
    )
    common.add_argument("--force", action="store_true", help="write into a non-empty output directory")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("--quiet", action="store_true", help="warnings only, no progress bars")

    parser = argparse.ArgumentParser(prog="unicodebook", description="Unified visual/language codebook experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", parents=[common], help="generate the synthetic corpus")
    gen.add_argument("--count", type=int, help="training images (default 256)")
    gen.add_argument("--resolution", type=int, help="image side in pixels (default 16)")

    train = sub.add_parser("train", parents=[common], help="stage I or stage II training")
    train.add_argument("--stage", type=int, choices=(1, 2), default=1)
    train.add_argument("--paradigm", choices=[p.value for p in Paradigm], help="stage-I paradigm (default iterative)")
    train.add_argument("--data", type=Path, help="dataset file from gen-data (default: regenerate from settings)")
    train.add_argument("--checkpoint", type=Path, help="stage-1 checkpoint (required for --stage 2)")

    for name, text in (
        ("eval", "held-out evaluation report"),
        ("reconstruct", "dump reconstructions"),
        ("decompress", "decompress one image through the language model"),
        ("resolution-sweep", "reconstruction error across test resolutions"),
    ):
        cmd = sub.add_parser(name, parents=[common], help=text)
        cmd.add_argument("--checkpoint", type=Path, required=True)
        if name != "resolution-sweep":
            cmd.add_argument("--data", type=Path)
    sub.choices["eval"].add_argument("--dump", action="store_true", help="also write image dumps")
    sub.choices["eval"].add_argument("--skip-decompression", action="store_true")
    sub.choices["reconstruct"].add_argument("--count", type=int, default=16)
    sub.choices["decompress"].add_argument("--index", type=int, default=0)
    sub.choices["resolution-sweep"].add_argument("--resolutions", type=int, nargs="+", default=[8, 16, 24, 32])
    sub.choices["resolution-sweep"].add_argument("--count", type=int, default=32)

    gen_img = sub.add_parser("generate", parents=[common], help="text-to-image generation")
    gen_img.add_argument("--checkpoint", type=Path, required=True)
    gen_img.add_argument("--caption", required=True, help='e.g. "large red disk on black"')
    gen_img.add_argument("--temperature", type=float, help="sample at this temperature instead of greedy decoding")
    gen_img.add_argument("--top-k", type=int)

    compare = sub.add_parser("compare-paradigms", parents=[common], help="table over three stage-I runs")
    compare.add_argument("runs", type=Path, nargs=3, help="run directories holding summary.json")

    tok = sub.add_parser("compare-tokenizers", parents=[common], help="VQ vs RQ vs HQ at equal budget")
    tok.add_argument("--data", type=Path)

    ablate = sub.add_parser("ablate-paradigms", parents=[common], help="all paradigms over several seeds")
    ablate.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    return parser


def configure_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def _settings_overrides(args: argparse.Namespace) -> dict:
    overrides: dict = {"seed": args.seed}
    if getattr(args, "paradigm", None):
        overrides["paradigm"] = args.paradigm
    if args.command == "gen-data":
        overrides["train_images"] = args.count
        overrides["resolution"] = args.resolution
    overrides.update(dict(args.overrides))
    return overrides


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        settings = load_settings(args.config, **_settings_overrides(args))
        logger.info("unicodebook %s starting", args.command)
        logger.info("Paradigm: %s", settings.paradigm.value)
        logger.info("Quantizer: %s (D=%d, K=%d)", settings.quantizer_mode.value, settings.depth, settings.codebook_size)
        logger.debug("Settings: %s", settings.model_dump(mode="json"))
        ctx = CommandContext(
            settings=settings,
            out=args.out or settings.output_root / args.command,
            force=args.force,
            progress=not args.quiet,
        )
        return asyncio.run(COMMANDS[args.command](ctx, args))
    except UnicodebookError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    except KeyboardInterrupt:
        logger.warning("Interrupted")
        return 130


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
