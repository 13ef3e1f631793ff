"""Stage II: instruction tuning of the language model with the tokenizer held fixed."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
from tqdm import tqdm

from unicodebook.domain.codebook import codebook_distance
from unicodebook.domain.errors import MissingSampleKindError, UsageError
from unicodebook.domain.models import LabeledSequence, MetricsRow, SampleKind, StageMetrics
from unicodebook.numerics.optim import Adam, AdamConfig
from unicodebook.services.language import LanguageModelService
from unicodebook.services.stage1 import RowCallback
from unicodebook.services.state import TrainingState
from unicodebook.services.tokenizer import TokenizerService

logger = logging.getLogger(__name__)


def required_kinds(include_decompression: bool) -> set[SampleKind]:
    kinds = {SampleKind.VQA, SampleKind.TEXT_TO_IMAGE}
    if include_decompression:
        kinds.add(SampleKind.DECOMPRESSION)
    return kinds


def check_corpus(samples: list[LabeledSequence], include_decompression: bool) -> None:
    present = {s.kind for s in samples}
    missing = required_kinds(include_decompression) - present
    if missing:
        names = ", ".join(sorted(k.value for k in missing))
        raise MissingSampleKindError(f"Instruction corpus lacks required sample kinds: {names}")


@dataclass(frozen=True)
class Stage2Data:
    train: list[LabeledSequence]
    heldout: list[LabeledSequence]
    probe_images: np.ndarray

    def __post_init__(self) -> None:
        if not self.heldout:
            raise UsageError("Stage II needs a non-empty held-out instruction set")


class Stage2Trainer:
    """Fine-tunes every LM parameter on the mixed instruction corpus; encoder, decoder and C stay put."""

    def __init__(
        self,
        state: TrainingState,
        data: Stage2Data,
        on_row: RowCallback | None = None,
        progress: bool = True,
    ) -> None:
        check_corpus(data.train, state.settings.include_decompression)
        self._state = state
        self._data = data
        self._on_row = on_row
        self._progress = progress
        self.language = LanguageModelService(state)
        self.tokenizer = TokenizerService(state, update_codebook=False)
        self._rng = np.random.default_rng(state.settings.seed + 2)

    def heldout_loss(self) -> float:
        return self.language.evaluate_loss([s.sequence for s in self._data.heldout])

    def _row(self, step: int, phase: str, mse: float, lm_loss: float) -> MetricsRow:
        state = self._state
        return MetricsRow(
            step=step,
            phase=phase,
            mse=mse,
            lm_loss=lm_loss,
            codebook_distance=codebook_distance(state.codebook, state.lm_codebook()),
            utilization=0.0,
        )

    def run(self) -> StageMetrics:
        state, cfg = self._state, self._state.settings
        metrics = StageMetrics()
        if cfg.stage2_steps == 0:
            logger.info("Stage II skipped: zero steps requested")
            return metrics

        started = time.perf_counter()
        recon = self.tokenizer.reconstruct_eval(self._data.probe_images)
        metrics.initial = self._row(0, "init", recon.mse, self.heldout_loss())
        kinds = {k.value: sum(1 for s in self._data.train if s.kind is k) for k in SampleKind}
        logger.info(
            "Stage II start: steps=%d lr=%g heldout_loss=%.4f corpus=%s",
            cfg.stage2_steps,
            cfg.stage2_lr,
            metrics.initial.lm_loss,
            kinds,
        )

        optimizer = Adam(state.lm.parameters(), AdamConfig(lr=cfg.stage2_lr, max_grad_norm=cfg.max_grad_norm))
        state.pin_null_row(optimizer)
        train = self._data.train
        for step in tqdm(range(1, cfg.stage2_steps + 1), desc="stage2", disable=not self._progress):
            picks = self._rng.choice(len(train), size=cfg.lm_batch, replace=cfg.lm_batch > len(train))
            loss = self.language.train_step([train[i].sequence for i in picks], step, optimizer=optimizer)
            state.counters.stage2_steps += 1
            row = self._row(step, "stage2", recon.mse, loss)
            metrics.rows.append(row)
            if self._on_row is not None:
                self._on_row(row)

        state.lm_optimizer = optimizer
        metrics.final = self._row(cfg.stage2_steps, "final", recon.mse, self.heldout_loss())
        metrics.wall_clock = time.perf_counter() - started
        logger.info(
            "Stage II done: heldout_loss %.4f -> %.4f",
            metrics.initial.lm_loss,
            metrics.final.lm_loss,
        )
        return metrics


def run_stage2(
    state: TrainingState,
    data: Stage2Data,
    on_row: RowCallback | None = None,
    progress: bool = True,
) -> StageMetrics:
    """Train the LM of ``state`` in place. Zero steps leaves ``state`` untouched."""
    return Stage2Trainer(state, data, on_row=on_row, progress=progress).run()
