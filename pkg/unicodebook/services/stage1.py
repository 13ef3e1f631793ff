"""
Stage I: unified codebook learning.

The tokenizer and the language model train in alternating rounds. The
paradigm decides how the tokenizer codebook C and the LM's visual rows C_L
influence each other between and during those rounds.
"""

from __future__ import annotations

import logging
import time
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from tqdm import tqdm

from unicodebook.config import DualReplacement
from unicodebook.domain.codebook import codebook_distance, sync_update
from unicodebook.domain.errors import UsageError
from unicodebook.domain.models import MetricsRow, Paradigm, StageMetrics, TokenSequence
from unicodebook.services.language import LanguageModelService
from unicodebook.services.state import TOKEN_TABLE, TrainingState
from unicodebook.services.tokenizer import TokenizerService

logger = logging.getLogger(__name__)

RowCallback = Callable[[MetricsRow], None]


@dataclass(frozen=True)
class Stage1Data:
    """Training images and text plus the fixed held-out probes used for the init and final rows."""

    images: np.ndarray
    texts: list[TokenSequence]
    probe_images: np.ndarray
    probe_texts: list[TokenSequence]

    def __post_init__(self) -> None:
        if len(self.images) == 0 or not self.texts:
            raise UsageError("Stage I needs at least one training image and one text sequence")
        if len(self.probe_images) == 0 or not self.probe_texts:
            raise UsageError("Stage I needs non-empty held-out probes")


def _draw(rng: np.random.Generator, population: int, count: int) -> np.ndarray:
    return rng.choice(population, size=count, replace=count > population)


class Stage1Trainer:
    """Runs the alternating tokenizer/LM schedule under one paradigm."""

    def __init__(
        self,
        state: TrainingState,
        data: Stage1Data,
        on_row: RowCallback | None = None,
        progress: bool = True,
    ) -> None:
        self._state = state
        self._data = data
        self._on_row = on_row
        self._progress = progress
        cfg = state.settings
        self.paradigm = Paradigm(cfg.paradigm)
        # A frozen codebook never moves, so neither EMA nor sync applies.
        self.tokenizer = TokenizerService(
            state, update_codebook=cfg.ema_enabled and self.paradigm is not Paradigm.FROZEN
        )
        self.language = LanguageModelService(state)
        self._rng = np.random.default_rng(cfg.seed + 1)
        self._metrics = StageMetrics()
        self._step = 0
        self._step_in_tokenizer = 0
        self._last_mse = 0.0
        self._last_lm_loss = 0.0

    # ── Codebook exchange ─────────────────────────

    def _adopt_lm_codebook(self) -> None:
        """C := C_L."""
        state = self._state
        state.codebook = state.codebook.replaced(state.lm_codebook().entries)
        if state.ema_state is not None:
            state.ema_state.rebase(state.codebook)

    def _overwrite_lm_codebook(self) -> None:
        """C_L := C, accumulating the non-gradient change of C_L."""
        state = self._state
        before = state.lm.visual_block(state.vocab.visual_slice)
        state.lm.set_visual_block(state.vocab.visual_slice, state.codebook.entries)
        self._metrics.cl_external_drift += float(np.linalg.norm(state.codebook.entries - before))

    def _sync(self) -> None:
        state, cfg = self._state, self._state.settings
        before = codebook_distance(state.codebook, state.lm_codebook())
        state.codebook = sync_update(state.codebook, state.lm_codebook(), cfg.sync_decay)
        if state.ema_state is not None:
            state.ema_state.rebase(state.codebook)
        state.counters.sync_events += 1
        logger.info(
            "Sync event %d: d(C, C_L) %.6f -> %.6f",
            state.counters.sync_events,
            before,
            codebook_distance(state.codebook, state.lm_codebook()),
        )

    # ── Rows ──────────────────────────────────────

    def _row(self, phase: str, mse: float, lm_loss: float) -> MetricsRow:
        stats = self.tokenizer.window.stats()
        return MetricsRow(
            step=self._step,
            phase=phase,
            mse=mse,
            lm_loss=lm_loss,
            codebook_distance=codebook_distance(self._state.codebook, self._state.lm_codebook()),
            utilization=stats.utilization if stats is not None else 0.0,
        )

    def _emit(self, row: MetricsRow) -> None:
        self._metrics.rows.append(row)
        if self._on_row is not None:
            self._on_row(row)

    def _probe(self, phase: str) -> MetricsRow:
        recon = self.tokenizer.reconstruct_eval(self._data.probe_images)
        lm_loss = self.language.evaluate_loss(self._data.probe_texts)
        return self._row(phase, recon.mse, lm_loss)

    # ── Phases ────────────────────────────────────

    def _tokenizer_step(self, first_in_round: bool) -> None:
        cfg = self._state.settings
        if self.paradigm is Paradigm.DUAL and (
            first_in_round or cfg.dual_replacement is DualReplacement.PER_STEP
        ):
            self._adopt_lm_codebook()

        self._step += 1
        batch = self._data.images[_draw(self._rng, len(self._data.images), cfg.tokenizer_batch)]
        result = self.tokenizer.train_step(batch, self._step)
        self._last_mse = result.mse

        if self.paradigm is Paradigm.ITERATIVE and self._step_in_tokenizer % cfg.sync_interval == 0:
            self._sync()
        self._emit(self._row("tokenizer", self._last_mse, self._last_lm_loss))

    def _lm_step(self, first_in_round: bool) -> None:
        state, cfg = self._state, self._state.settings
        if self.paradigm is Paradigm.DUAL and (
            first_in_round or cfg.dual_replacement is DualReplacement.PER_STEP
        ):
            self._overwrite_lm_codebook()

        self._step += 1
        if not cfg.freeze_lm:
            picks = _draw(self._rng, len(self._data.texts), cfg.lm_batch)
            self._last_lm_loss = self.language.train_step([self._data.texts[i] for i in picks], self._step)
            state.counters.lm_steps += 1
        self._emit(self._row("lm", self._last_mse, self._last_lm_loss))

    # ── Entry point ───────────────────────────────

    def run(self) -> StageMetrics:
        state, cfg = self._state, self._state.settings
        started = time.perf_counter()
        if self.paradigm is Paradigm.FROZEN:
            self._adopt_lm_codebook()
            state.lm_optimizer.freeze_rows(TOKEN_TABLE, state.vocab.visual_slice)

        initial = self._probe("init")
        self._metrics.initial = initial
        self._last_mse, self._last_lm_loss = initial.mse, initial.lm_loss
        logger.info(
            "Stage I start: paradigm=%s rounds=%d schedule=%d:%d mse=%.6f lm_loss=%.4f d=%.6f",
            self.paradigm.value,
            cfg.stage1_rounds,
            cfg.tokenizer_steps_per_round,
            cfg.lm_steps_per_round,
            initial.mse,
            initial.lm_loss,
            initial.codebook_distance,
        )

        total = cfg.stage1_rounds * (cfg.tokenizer_steps_per_round + cfg.lm_steps_per_round)
        with tqdm(total=total, desc=f"stage1/{self.paradigm.value}", disable=not self._progress) as bar:
            for _ in range(cfg.stage1_rounds):
                for i in range(cfg.tokenizer_steps_per_round):
                    self._step_in_tokenizer += 1
                    self._tokenizer_step(first_in_round=i == 0)
                    bar.update(1)
                for j in range(cfg.lm_steps_per_round):
                    self._lm_step(first_in_round=j == 0)
                    bar.update(1)
                bar.set_postfix(mse=f"{self._last_mse:.4f}", lm=f"{self._last_lm_loss:.3f}")

        final = self._probe("final")
        self._metrics.final = final
        self._metrics.wall_clock = time.perf_counter() - started
        logger.info(
            "Stage I done: %d steps, mse=%.6f lm_loss=%.4f d=%.6f utilization=%.3f drift=%.6f",
            self._step,
            final.mse,
            final.lm_loss,
            final.codebook_distance,
            final.utilization,
            self._metrics.cl_external_drift,
        )
        return self._metrics


def run_stage1(
    state: TrainingState,
    data: Stage1Data,
    on_row: RowCallback | None = None,
    progress: bool = True,
) -> StageMetrics:
    """Train ``state`` in place; the returned metrics hold one row per step."""
    return Stage1Trainer(state, data, on_row=on_row, progress=progress).run()
