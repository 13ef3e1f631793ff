"""Language-model training, evaluation, sampling and in-context image decompression."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from unicodebook.domain.errors import NumericalError, UsageError
from unicodebook.domain.models import CodeMap, QuantizedFeatureMap, TokenSequence
from unicodebook.domain.vocab import SpecialToken
from unicodebook.models.sequences import (
    collate,
    decompression_length,
    decompression_segment,
    empty_sequence,
    nll_loss,
)
from unicodebook.numerics.optim import Adam
from unicodebook.numerics.tensor import backward, no_grad
from unicodebook.services.state import TrainingState

logger = logging.getLogger(__name__)


class SamplingMode(str, Enum):
    GREEDY = "greedy"
    TEMPERATURE = "temperature"


@dataclass(frozen=True)
class SamplingConfig:
    mode: SamplingMode = SamplingMode.GREEDY
    temperature: float = 1.0
    top_k: int | None = None

    def __post_init__(self) -> None:
        if self.mode is SamplingMode.TEMPERATURE and self.temperature <= 0.0:
            raise UsageError("Temperature sampling needs temperature > 0")
        if self.top_k is not None and self.top_k < 1:
            raise UsageError("top_k must be >= 1")


@dataclass(frozen=True)
class DecompressionResult:
    code_map: CodeMap
    violations: int


@dataclass(frozen=True)
class GeneratedImage:
    code_map: CodeMap
    complete: bool
    sequence: TokenSequence


class LanguageModelService:
    def __init__(self, state: TrainingState) -> None:
        self._state = state
        self._vocab = state.vocab

    # ── Training ──────────────────────────────────

    def train_step(self, seqs: list[TokenSequence], step: int, optimizer: Adam | None = None) -> float:
        optimizer = optimizer or self._state.lm_optimizer
        batch = collate(seqs, self._vocab)
        optimizer.zero_grad()
        logits = self._state.lm(batch.ids, batch.prefix_index, batch.prefix_values)
        loss = nll_loss(logits, batch)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericalError("Language-model loss is not finite", step=step)
        backward(loss)
        optimizer.step()
        logger.debug("lm step %d: loss=%.6f", step, value)
        return value

    def evaluate_loss(self, seqs: list[TokenSequence], batch_size: int = 16) -> float:
        """Token-weighted mean NLL over all supervised positions of ``seqs``."""
        if not seqs:
            raise UsageError("evaluate_loss needs at least one sequence")
        total, count = 0.0, 0
        with no_grad():
            for start in range(0, len(seqs), batch_size):
                batch = collate(seqs[start : start + batch_size], self._vocab)
                logits = self._state.lm(batch.ids, batch.prefix_index, batch.prefix_values)
                total += nll_loss(logits, batch).item() * batch.supervised
                count += batch.supervised
        return total / count

    # ── Generation ────────────────────────────────

    def next_logits(self, seq: TokenSequence) -> np.ndarray:
        with no_grad():
            index = seq.prefix_positions
            logits = self._state.lm(seq.ids[None], index, seq.prefix_embeddings if index.size else None)
        return logits.data[0, -1]

    @staticmethod
    def _pick(logits: np.ndarray, sampling: SamplingConfig, rng: np.random.Generator) -> int:
        if sampling.mode is SamplingMode.GREEDY:
            return int(np.argmax(logits))
        scaled = logits / sampling.temperature
        if sampling.top_k is not None and sampling.top_k < scaled.size:
            cutoff = np.sort(scaled)[-sampling.top_k]
            scaled = np.where(scaled >= cutoff, scaled, -np.inf)
        probs = np.exp(scaled - scaled.max())
        probs /= probs.sum()
        return int(rng.choice(scaled.size, p=probs))

    def generate(
        self,
        prompt: TokenSequence,
        max_new: int,
        sampling: SamplingConfig | None = None,
        seed: int = 0,
    ) -> TokenSequence:
        """Extend ``prompt`` until EOS, IMG_END or ``max_new`` new tokens."""
        sampling = sampling or SamplingConfig()
        context = self._state.lm.config.context
        if len(prompt) > context:
            raise UsageError(f"Prompt length {len(prompt)} exceeds the context limit {context}")
        stops = {self._vocab.special(SpecialToken.EOS), self._vocab.special(SpecialToken.IMG_END)}
        rng = np.random.default_rng(seed)
        seq = prompt
        for _ in range(min(max_new, context - len(prompt))):
            token = self._pick(self.next_logits(seq), sampling, rng)
            seq = seq.extend([token], supervised=False)
            if token in stops:
                break
        return seq

    def decompress_image(
        self, zhat: QuantizedFeatureMap, segments: int | None = None
    ) -> DecompressionResult:
        """
        Greedily emit ĥ·ŵ·D visual ids conditioned on Ẑ. A non-visual argmax is
        replaced by the best visual id and counted as a violation.
        """
        vocab = self._vocab
        h, w = zhat.values.shape[:2]
        depth = zhat.depth
        segments = segments or self._state.settings.decompression_segments
        cells = h * w
        if cells % segments:
            raise UsageError(f"Segment count {segments} must divide the {cells} cells")
        per = cells // segments
        needed = decompression_length(cells, depth, segments)
        context = self._state.lm.config.context
        if needed > context:
            raise UsageError(
                f"Decompressing a {h}x{w}x{depth} code map needs a context of {needed} tokens; the model has {context}"
            )
        flat_z = zhat.flat()
        visual = vocab.visual_slice

        seq = empty_sequence(vocab, zhat.width)
        codes: list[int] = []
        violations = 0
        for t in range(segments):
            seq = decompression_segment(seq, flat_z[t * per : (t + 1) * per], vocab)
            for _ in range(per * depth):
                logits = self.next_logits(seq)
                token = int(np.argmax(logits))
                if not vocab.is_visual(token):
                    violations += 1
                    token = vocab.visual_offset + int(np.argmax(logits[visual]))
                codes.append(vocab.code_of(token))
                seq = seq.extend([token], supervised=False)
        if violations:
            logger.debug("Decompression emitted %d non-visual ids (clamped)", violations)
        code_map = CodeMap.from_flat(np.array(codes), h, w, depth, zhat.mode)
        return DecompressionResult(code_map, violations)

    def generate_image(
        self, prompt: TokenSequence, sampling: SamplingConfig | None = None, seed: int = 0
    ) -> GeneratedImage:
        """
        Continue a text-to-image prompt into a code map. Missing codes are
        filled with code 0 and non-visual ids are skipped.
        """
        cfg = self._state.settings
        depth = self._state.quantizer.depth
        needed = cfg.grid * cfg.grid * depth
        out = self.generate(prompt, needed + 1, sampling, seed)
        new = out.ids[len(prompt) :]
        codes = [self._vocab.code_of(int(t)) for t in new if self._vocab.is_visual(int(t))][:needed]
        complete = len(codes) == needed
        if not complete:
            logger.warning("Generated %d of %d codes; padding with code 0", len(codes), needed)
            codes += [0] * (needed - len(codes))
        code_map = CodeMap.from_flat(np.array(codes), cfg.grid, cfg.grid, depth, self._state.quantizer.mode)
        return GeneratedImage(code_map, complete, out)
