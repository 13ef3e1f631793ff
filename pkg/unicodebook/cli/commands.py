"""
Subcommand handlers. Each one resolves its inputs, writes the run manifest
into its output directory before doing any work, and returns an exit code.
"""

from __future__ import annotations

import argparse
import asyncio
import logging
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import BaseModel

from unicodebook import __version__
from unicodebook.adapters.storage.local import LocalStorageAdapter
from unicodebook.config import Settings, config_digest
from unicodebook.corpus.dataset import CorpusBundle, decode_dataset, encode_dataset, prepare_corpus
from unicodebook.corpus.samples import make_text_sequence, text_to_image_prompt
from unicodebook.domain.errors import MissingArtifactError, UsageError
from unicodebook.domain.models import RunManifest, RunSummary, Stage2Summary
from unicodebook.serialization.container import ContainerHeader
from unicodebook.serialization.images import encode_ppm, tile
from unicodebook.serialization.metrics import MetricsSink
from unicodebook.services.evaluation import Evaluator
from unicodebook.services.experiments import (
    ablate_paradigms,
    compare_paradigms,
    compare_tokenizers,
)
from unicodebook.services.language import LanguageModelService, SamplingConfig, SamplingMode
from unicodebook.services.pipeline import instruction_samples, stage2_data, train_stage1_run
from unicodebook.services.stage2 import run_stage2
from unicodebook.services.state import TrainingState
from unicodebook.services.tokenizer import TokenizerService

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
CHECKPOINT = "checkpoint.ucbk"
METRICS = "metrics.csv"
SUMMARY = "summary.json"
DATASET = "dataset.ucbk"
REPORT = "report.json"
DUMPS = "dumps"


@dataclass(frozen=True)
class CommandContext:
    settings: Settings
    out: Path
    force: bool
    progress: bool


def build_id() -> str:
    """``git describe`` of the working tree, or the package version outside a checkout."""
    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            capture_output=True,
            text=True,
            check=True,
            timeout=5,
            cwd=Path(__file__).resolve().parent,
        )
        return result.stdout.strip() or f"unicodebook-{__version__}"
    except (OSError, subprocess.SubprocessError):
        return f"unicodebook-{__version__}"


def _json(model: BaseModel) -> bytes:
    return (model.model_dump_json(indent=2) + "\n").encode("utf-8")


async def open_run(ctx: CommandContext, command: str, layout: dict[str, str]) -> LocalStorageAdapter:
    """
    Refuse a non-empty output directory unless forced, then write the manifest.

    With ``--force``, artifacts this command is about to write are removed
    first, so a failed rerun never leaves an old file beside a new manifest.
    Other files in the directory are left alone.
    """
    if ctx.out.exists() and any(ctx.out.iterdir()) and not ctx.force:
        raise UsageError(f"Output directory {ctx.out} is not empty; pass --force to overwrite")
    storage = LocalStorageAdapter(ctx.out)
    for entry in layout:
        if await storage.exists(entry):
            for stale in await storage.list(entry):
                await storage.delete(stale)
    manifest = RunManifest(
        command=command,
        config=ctx.settings.model_dump(mode="json"),
        config_digest=config_digest(ctx.settings),
        seed=ctx.settings.seed,
        build_id=build_id(),
        layout={MANIFEST: "run manifest", **layout},
    )
    await storage.save(MANIFEST, _json(manifest))
    logger.info("Run %s -> %s (config %s)", command, ctx.out, manifest.config_digest)
    return storage


async def read_file(path: Path) -> bytes:
    if not path.is_file():
        raise MissingArtifactError(f"Artifact not found: {path}")
    return await LocalStorageAdapter(path.parent).read(path.name)


async def load_bundle(ctx: CommandContext, data: Path | None) -> CorpusBundle:
    if data is None:
        return prepare_corpus(ctx.settings)
    return decode_dataset(await read_file(data))


async def load_state(ctx: CommandContext, checkpoint: Path | None) -> tuple[TrainingState, ContainerHeader]:
    if checkpoint is None:
        raise UsageError("This command needs --checkpoint")
    state, header = TrainingState.decode(await read_file(checkpoint), ctx.settings)
    logger.info("Loaded checkpoint %s (%s)", checkpoint, header.meta)
    return state, header


def _check_not_input(ctx: CommandContext, checkpoint: Path | None) -> None:
    if checkpoint is not None and (ctx.out / CHECKPOINT).resolve() == checkpoint.resolve():
        raise UsageError("Refusing to overwrite the input checkpoint; choose another --out")


# ── Data and training ─────────────────────────────────────────────


async def cmd_gen_data(ctx: CommandContext, args: argparse.Namespace) -> int:
    storage = await open_run(ctx, "gen-data", {DATASET: "synthetic corpus", DUMPS: "preview images"})
    bundle = prepare_corpus(ctx.settings)
    path = await storage.save(DATASET, encode_dataset(bundle, ctx.settings))
    if len(bundle.train):
        await storage.save(f"{DUMPS}/train_preview.ppm", encode_ppm(tile(bundle.train.images[:32])))
    print(
        f"dataset {path}: {len(bundle.train)} train / {len(bundle.heldout)} held-out images, "
        f"{len(bundle.texts)} / {len(bundle.heldout_texts)} sentences, digest {bundle.digest()}"
    )
    return 0


async def cmd_train(ctx: CommandContext, args: argparse.Namespace) -> int:
    if args.stage == 2:
        return await _train_stage2(ctx, args)
    storage = await open_run(
        ctx, "train", {CHECKPOINT: "stage-1 checkpoint", METRICS: "per-step metrics", SUMMARY: "final metrics"}
    )
    bundle = await load_bundle(ctx, args.data)
    async with MetricsSink(storage, METRICS) as sink:
        state, _, summary = await asyncio.to_thread(
            train_stage1_run, ctx.settings, bundle, on_row=sink, progress=ctx.progress
        )
    meta = {"stage": 1, "paradigm": ctx.settings.paradigm.value, "corpus_digest": bundle.digest()}
    await storage.save(CHECKPOINT, state.encode(meta))
    await storage.save(SUMMARY, _json(summary))
    logger.info("Checkpoint written to %s", storage.root / CHECKPOINT)
    print(summary.model_dump_json(indent=2))
    return 0


async def _train_stage2(ctx: CommandContext, args: argparse.Namespace) -> int:
    if args.checkpoint is None:
        raise UsageError("--stage 2 requires --checkpoint pointing at a stage-1 checkpoint")
    _check_not_input(ctx, args.checkpoint)
    state, header = await load_state(ctx, args.checkpoint)
    storage = await open_run(
        ctx, "train", {CHECKPOINT: "stage-2 checkpoint", METRICS: "per-step metrics", SUMMARY: "final metrics"}
    )
    bundle = await load_bundle(ctx, args.data)
    if header.meta.get("corpus_digest") not in (None, bundle.digest()):
        logger.warning(
            "Stage-1 corpus %s differs from the stage-2 corpus %s", header.meta.get("corpus_digest"), bundle.digest()
        )
    data = stage2_data(bundle, state)
    async with MetricsSink(storage, METRICS) as sink:
        metrics = await asyncio.to_thread(run_stage2, state, data, on_row=sink, progress=ctx.progress)
    meta = {**header.meta, "stage": 2, "corpus_digest": bundle.digest()}
    await storage.save(CHECKPOINT, state.encode(meta))
    summary = Stage2Summary(
        seed=ctx.settings.seed,
        corpus_digest=bundle.digest(),
        initial_heldout_loss=metrics.initial.lm_loss if metrics.initial else None,
        final_heldout_loss=metrics.final.lm_loss if metrics.final else None,
        steps=len(metrics.rows),
        tokenizer_checksum=state.tokenizer_checksum(),
    )
    await storage.save(SUMMARY, _json(summary))
    print(summary.model_dump_json(indent=2))
    return 0


# ── Inspection ────────────────────────────────────────────────────


async def cmd_eval(ctx: CommandContext, args: argparse.Namespace) -> int:
    state, _ = await load_state(ctx, args.checkpoint)
    storage = await open_run(ctx, "eval", {REPORT: "evaluation report", DUMPS: "reconstructions"})
    bundle = await load_bundle(ctx, args.data)
    heldout = bundle.heldout
    if len(heldout) == 0:
        raise UsageError("Evaluation needs held-out images (heldout_images > 0)")
    texts = [make_text_sequence(t, state.vocab) for t in bundle.heldout_texts]
    instructions = instruction_samples(state, heldout, (), ctx.settings.seed + 4)
    evaluator = Evaluator(state)
    report = evaluator.evaluate(heldout.images, texts, instructions, decompress=not args.skip_decompression)
    await storage.save(REPORT, _json(report))
    if args.dump:
        recon = evaluator.tokenizer.reconstruct(heldout.images)
        await storage.save(f"{DUMPS}/original.ppm", encode_ppm(tile(heldout.images)))
        await storage.save(f"{DUMPS}/reconstruction.ppm", encode_ppm(tile(recon)))
    print(report.model_dump_json(indent=2))
    return 0


async def cmd_reconstruct(ctx: CommandContext, args: argparse.Namespace) -> int:
    state, _ = await load_state(ctx, args.checkpoint)
    storage = await open_run(ctx, "reconstruct", {DUMPS: "original and reconstructed images"})
    bundle = await load_bundle(ctx, args.data)
    images = bundle.heldout.images[: args.count]
    if len(images) == 0:
        raise UsageError("No held-out images to reconstruct")
    recon = TokenizerService(state, update_codebook=False).reconstruct(images)
    await storage.save(f"{DUMPS}/original.ppm", encode_ppm(tile(images)))
    await storage.save(f"{DUMPS}/reconstruction.ppm", encode_ppm(tile(recon)))
    print(f"reconstructed {len(images)} images, mse {float(np.mean((recon - images) ** 2)):.6f}")
    return 0


async def cmd_generate(ctx: CommandContext, args: argparse.Namespace) -> int:
    state, _ = await load_state(ctx, args.checkpoint)
    storage = await open_run(ctx, "generate", {DUMPS: "generated image"})
    sampling = (
        SamplingConfig(SamplingMode.TEMPERATURE, args.temperature, args.top_k)
        if args.temperature
        else SamplingConfig()
    )
    generated = LanguageModelService(state).generate_image(
        text_to_image_prompt(args.caption, state.vocab), sampling, seed=ctx.settings.seed
    )
    tokenizer = TokenizerService(state, update_codebook=False)
    image = tokenizer.decode(tokenizer.aggregate(generated.code_map).values[None])[0]
    await storage.save(f"{DUMPS}/generated.ppm", encode_ppm(image))
    print(f"generated {generated.code_map.indices.size} codes for '{args.caption}' (complete={generated.complete})")
    return 0


async def cmd_decompress(ctx: CommandContext, args: argparse.Namespace) -> int:
    state, _ = await load_state(ctx, args.checkpoint)
    storage = await open_run(ctx, "decompress", {DUMPS: "source and decompressed image"})
    bundle = await load_bundle(ctx, args.data)
    if not 0 <= args.index < len(bundle.heldout):
        raise UsageError(f"--index {args.index} outside the {len(bundle.heldout)} held-out images")
    image = bundle.heldout.images[args.index]
    tokenizer = TokenizerService(state, update_codebook=False)
    code_map = tokenizer.encode_stacked(image)
    result = LanguageModelService(state).decompress_image(tokenizer.aggregate(code_map))
    decoded = tokenizer.decode(tokenizer.aggregate(result.code_map).values[None])[0]
    await storage.save(f"{DUMPS}/source.ppm", encode_ppm(image))
    await storage.save(f"{DUMPS}/decompressed.ppm", encode_ppm(decoded))
    match = float(np.mean(result.code_map.indices == code_map.indices))
    print(f"image {args.index}: exact-match {match:.4f}, violations {result.violations}")
    return 0


# ── Experiments ───────────────────────────────────────────────────


def _table(header: list[str], rows: list[list[object]]) -> str:
    cells = [header, *[[f"{v:.6g}" if isinstance(v, float) else str(v) for v in row] for row in rows]]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths, strict=True)) for r in cells)


async def cmd_compare_paradigms(ctx: CommandContext, args: argparse.Namespace) -> int:
    summaries = [RunSummary.model_validate_json(await read_file(run / SUMMARY)) for run in args.runs]
    table = compare_paradigms(summaries)
    storage = await open_run(
        ctx, "compare-paradigms", {"comparison.json": "paradigm table", "comparison.csv": "paradigm table"}
    )
    header = ["paradigm", "final_mse", "final_text_loss", "final_distance", "utilization", "cl_external_drift"]
    rows = [
        [r.paradigm.value, r.final_mse, r.final_text_loss, r.final_distance, r.utilization, r.cl_external_drift]
        for r in table.rows
    ]
    csv_text = ",".join(header) + "\n" + "".join(",".join([row[0], *map(repr, row[1:])]) + "\n" for row in rows)
    await storage.save("comparison.json", _json(table))
    await storage.save("comparison.csv", csv_text.encode("utf-8"))
    print(_table(header, rows))
    return 0


async def cmd_compare_tokenizers(ctx: CommandContext, args: argparse.Namespace) -> int:
    storage = await open_run(ctx, "compare-tokenizers", {"tokenizers.json": "tokenizer-family table"})
    bundle = await load_bundle(ctx, args.data)
    table = compare_tokenizers(ctx.settings, bundle, progress=ctx.progress)
    await storage.save("tokenizers.json", _json(table))
    print(
        _table(
            ["mode", "D", "tokens", "mse", "psnr", "utilization", "perplexity"],
            [
                [r.mode.value, r.depth, r.tokens_per_image, r.mse, r.psnr, r.utilization, r.perplexity]
                for r in table.rows
            ],
        )
    )
    return 0


async def cmd_ablate_paradigms(ctx: CommandContext, args: argparse.Namespace) -> int:
    storage = await open_run(ctx, "ablate-paradigms", {"ablation.json": "per-seed tables and verdict"})
    report = ablate_paradigms(ctx.settings, args.seeds, progress=ctx.progress)
    await storage.save("ablation.json", _json(report))
    for table in report.tables:
        print(f"seed {table.seed}")
        print(
            _table(
                ["paradigm", "final_mse", "final_text_loss", "final_distance", "cl_external_drift"],
                [
                    [r.paradigm.value, r.final_mse, r.final_text_loss, r.final_distance, r.cl_external_drift]
                    for r in table.rows
                ],
            )
        )
    verdict = "hold" if report.verdict else "do not hold"
    print(f"orderings hold on {report.holds_on} of {len(report.checks)} seeds: {verdict}")
    return 0


async def cmd_resolution_sweep(ctx: CommandContext, args: argparse.Namespace) -> int:
    state, _ = await load_state(ctx, args.checkpoint)
    storage = await open_run(ctx, "resolution-sweep", {"sweep.json": "resolution table"})
    table = Evaluator(state).resolution_sweep(args.resolutions, args.count, ctx.settings.seed + 10_000)
    await storage.save("sweep.json", _json(table))
    print(
        _table(
            ["resolution", "mse", "psnr", "trained"],
            [[r.resolution, r.mse, r.psnr, r.resolution == table.trained_resolution] for r in table.rows],
        )
    )
    print(f"trained resolution {table.trained_resolution} is the strict optimum: {table.trained_is_optimum}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "reconstruct": cmd_reconstruct,
    "generate": cmd_generate,
    "decompress": cmd_decompress,
    "compare-paradigms": cmd_compare_paradigms,
    "compare-tokenizers": cmd_compare_tokenizers,
    "ablate-paradigms": cmd_ablate_paradigms,
    "resolution-sweep": cmd_resolution_sweep,
}