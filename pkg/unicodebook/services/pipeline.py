"""Glue between a generated corpus and the two training stages."""

from __future__ import annotations

import logging

import numpy as np

from unicodebook.config import Settings
from unicodebook.corpus.dataset import CorpusBundle
from unicodebook.corpus.samples import build_instruction_corpus, make_text_sequence
from unicodebook.corpus.synthetic import ImageSet
from unicodebook.domain.errors import UsageError
from unicodebook.domain.models import LabeledSequence, RunSummary, StageMetrics
from unicodebook.services.stage1 import RowCallback, Stage1Data, run_stage1
from unicodebook.services.stage2 import Stage2Data
from unicodebook.services.state import TrainingState
from unicodebook.services.tokenizer import TokenizedBatch, TokenizerService

logger = logging.getLogger(__name__)


def stage1_data(bundle: CorpusBundle, state: TrainingState) -> Stage1Data:
    vocab = state.vocab
    return Stage1Data(
        images=bundle.train.images,
        texts=[make_text_sequence(t, vocab) for t in bundle.texts],
        probe_images=bundle.heldout.images,
        probe_texts=[make_text_sequence(t, vocab) for t in bundle.heldout_texts],
    )


def tokenize_set(state: TrainingState, images: np.ndarray, batch_size: int = 64) -> TokenizedBatch:
    tokenizer = TokenizerService(state, update_codebook=False)
    parts = [tokenizer.tokenize(images[i : i + batch_size]) for i in range(0, len(images), batch_size)]
    return TokenizedBatch(
        codes=np.concatenate([p.codes for p in parts]),
        zhat=np.concatenate([p.zhat for p in parts]),
    )


def instruction_samples(
    state: TrainingState, images: ImageSet, texts: tuple[str, ...], seed: int
) -> list[LabeledSequence]:
    cfg = state.settings
    tokens = tokenize_set(state, images.images)
    return build_instruction_corpus(
        images,
        tokens.codes,
        tokens.zhat,
        cfg.quantizer_mode,
        state.vocab,
        seed,
        segments=cfg.decompression_segments,
        include_decompression=cfg.include_decompression,
        context=cfg.lm_context,
        texts=list(texts),
    )


def stage2_data(bundle: CorpusBundle, state: TrainingState) -> Stage2Data:
    """Instruction corpora built with the frozen Stage-I tokenizer."""
    seed = state.settings.seed
    return Stage2Data(
        train=instruction_samples(state, bundle.train, bundle.texts, seed + 3),
        heldout=instruction_samples(state, bundle.heldout, (), seed + 4),
        probe_images=bundle.heldout.images,
    )


def summarize(settings: Settings, metrics: StageMetrics, bundle: CorpusBundle) -> RunSummary:
    initial, final = metrics.initial, metrics.final
    if initial is None or final is None:
        raise UsageError("Run summary needs the initial and final probe rows")
    return RunSummary(
        paradigm=settings.paradigm.value,
        seed=settings.seed,
        corpus_digest=bundle.digest(),
        final_mse=final.mse,
        final_text_loss=final.lm_loss,
        final_distance=final.codebook_distance,
        utilization=final.utilization,
        cl_external_drift=metrics.cl_external_drift,
        initial_mse=initial.mse,
        initial_distance=initial.codebook_distance,
        steps=len(metrics.rows),
    )


def train_stage1_run(
    settings: Settings,
    bundle: CorpusBundle,
    on_row: RowCallback | None = None,
    progress: bool = True,
) -> tuple[TrainingState, StageMetrics, RunSummary]:
    """Fresh state, Stage I under ``settings.paradigm``, and its summary."""
    state = TrainingState.initialize(settings)
    metrics = run_stage1(state, stage1_data(bundle, state), on_row=on_row, progress=progress)
    return state, metrics, summarize(settings, metrics, bundle)
