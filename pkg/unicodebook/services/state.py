"""
Everything a run trains: autoencoder, language model, tokenizer codebook,
EMA statistics and both optimizers, with a lossless segment encoding.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from unicodebook.adapters.quantizer import build_quantizer
from unicodebook.config import CodebookInit, Settings, config_digest
from unicodebook.domain.codebook import Codebook, EmaRule, EmaState
from unicodebook.domain.errors import CheckpointError
from unicodebook.domain.vocab import UnifiedVocabulary
from unicodebook.models.autoencoder import Autoencoder
from unicodebook.models.transformer import TinyTransformerLM, TransformerConfig
from unicodebook.numerics.optim import Adam, AdamConfig
from unicodebook.ports.quantizer import QuantizerPort
from unicodebook.serialization.container import (
    CHECKPOINT_MAGIC,
    ContainerHeader,
    decode_container,
    encode_container,
)

logger = logging.getLogger(__name__)

TOKEN_TABLE = "tok_emb.weight"


@dataclass
class Counters:
    tokenizer_steps: int = 0
    lm_steps: int = 0
    stage2_steps: int = 0
    sync_events: int = 0

    def as_array(self) -> np.ndarray:
        return np.array([self.tokenizer_steps, self.lm_steps, self.stage2_steps, self.sync_events], dtype=np.int64)

    @classmethod
    def from_array(cls, values: np.ndarray) -> Counters:
        return cls(*(int(v) for v in values))


@dataclass
class TrainingState:
    settings: Settings
    vocab: UnifiedVocabulary
    quantizer: QuantizerPort
    autoencoder: Autoencoder
    lm: TinyTransformerLM
    codebook: Codebook
    ema_state: EmaState | None
    tokenizer_optimizer: Adam
    lm_optimizer: Adam
    counters: Counters = field(default_factory=Counters)

    # ── Construction ──────────────────────────────

    @classmethod
    def initialize(cls, settings: Settings) -> TrainingState:
        rng = np.random.default_rng(settings.seed)
        n = settings.embedding_width
        vocab = UnifiedVocabulary(settings.codebook_size)
        quantizer = build_quantizer(settings.quantizer_mode, settings.depth)
        autoencoder = Autoencoder(
            patch=settings.patch_size,
            encoder_width=quantizer.encoder_width(n),
            decoder_width=quantizer.aggregate_width(n),
            hidden=settings.encoder_hidden,
            rng=rng,
            out_scale=settings.codebook_init_scale,
        )
        lm = TinyTransformerLM(
            TransformerConfig(
                vocab_size=vocab.size,
                width=settings.lm_width,
                layers=settings.lm_layers,
                heads=settings.lm_heads,
                context=settings.lm_context,
                mlp_ratio=settings.lm_mlp_ratio,
                prefix_width=quantizer.aggregate_width(n),
            ),
            rng,
        )
        # Visual rows start at code scale rather than the text-embedding scale.
        visual = rng.normal(0.0, settings.codebook_init_scale / np.sqrt(n), size=(settings.codebook_size, n))
        if settings.null_code:
            visual[0] = 0.0
        lm.set_visual_block(vocab.visual_slice, visual)

        if settings.codebook_init is CodebookInit.COPY_LM:
            codebook = Codebook(lm.visual_block(vocab.visual_slice), pinned_null=settings.null_code)
        else:
            codebook = Codebook.random(
                settings.codebook_size,
                n,
                rng,
                scale=settings.codebook_init_scale / np.sqrt(n),
                pinned_null=settings.null_code,
            )
        ema_state = EmaState.matching(codebook) if settings.ema_rule is EmaRule.NORMALIZED else None

        state = cls(
            settings=settings,
            vocab=vocab,
            quantizer=quantizer,
            autoencoder=autoencoder,
            lm=lm,
            codebook=codebook,
            ema_state=ema_state,
            tokenizer_optimizer=Adam(
                autoencoder.parameters(), AdamConfig(lr=settings.tokenizer_lr, max_grad_norm=settings.max_grad_norm)
            ),
            lm_optimizer=Adam(lm.parameters(), AdamConfig(lr=settings.lm_lr, max_grad_norm=settings.max_grad_norm)),
        )
        state.pin_null_row(state.lm_optimizer)
        logger.info(
            "Initialized state: mode=%s D=%d K=%d n=%d init=%s",
            settings.quantizer_mode.value,
            settings.depth,
            settings.codebook_size,
            n,
            settings.codebook_init.value,
        )
        return state

    def pin_null_row(self, optimizer: Adam) -> None:
        """Keep the LM row of visual id 0 at the origin, matching the tokenizer's null code."""
        if self.settings.null_code:
            row = self.vocab.visual_offset
            optimizer.freeze_rows(TOKEN_TABLE, slice(row, row + 1))

    # ── Views ─────────────────────────────────────

    def lm_codebook(self) -> Codebook:
        """C_L: the visual-id rows of the tied token table."""
        return Codebook(self.lm.visual_block(self.vocab.visual_slice), pinned_null=self.settings.null_code)

    def tokenizer_checksum(self) -> str:
        """Digest over the encoder, decoder and tokenizer codebook."""
        h = hashlib.sha256(self.codebook.checksum().encode("ascii"))
        for name, value in self.autoencoder.state_dict().items():
            h.update(name.encode("utf-8"))
            h.update(np.ascontiguousarray(value, dtype="<f8").tobytes())
        return h.hexdigest()

    # ── Segments ──────────────────────────────────

    def to_segments(self) -> dict[str, np.ndarray]:
        segments: dict[str, np.ndarray] = {
            "codebook": self.codebook.entries,
            "codebook.version": np.array([self.codebook.version], dtype=np.int64),
            "counters": self.counters.as_array(),
        }
        if self.ema_state is not None:
            segments["ema.cluster_size"] = self.ema_state.cluster_size
            segments["ema.embed_sum"] = self.ema_state.embed_sum
        for name, value in self.autoencoder.state_dict().items():
            segments[f"autoencoder.{name}"] = value
        for name, value in self.lm.state_dict().items():
            segments[f"lm.{name}"] = value
        for name, value in self.tokenizer_optimizer.state_dict().items():
            segments[f"opt.tokenizer.{name}"] = value
        for name, value in self.lm_optimizer.state_dict().items():
            segments[f"opt.lm.{name}"] = value
        return segments

    def load_segments(self, segments: dict[str, np.ndarray]) -> None:
        def group(prefix: str) -> dict[str, np.ndarray]:
            return {k[len(prefix) :]: v for k, v in segments.items() if k.startswith(prefix)}

        try:
            self.codebook = Codebook(
                segments["codebook"],
                version=int(segments["codebook.version"][0]),
                pinned_null=self.settings.null_code,
            )
            self.counters = Counters.from_array(segments["counters"])
            if self.ema_state is not None:
                if "ema.cluster_size" in segments:
                    self.ema_state = EmaState(segments["ema.cluster_size"].copy(), segments["ema.embed_sum"].copy())
                else:
                    self.ema_state = EmaState.matching(self.codebook)
            self.autoencoder.load_state_dict(group("autoencoder."))
            self.lm.load_state_dict(group("lm."))
            self.tokenizer_optimizer.load_state_dict(group("opt.tokenizer."))
            self.lm_optimizer.load_state_dict(group("opt.lm."))
        except KeyError as exc:
            raise CheckpointError(f"Checkpoint is missing segment {exc}") from exc

    # ── Checkpoint bytes ──────────────────────────

    def encode(self, meta: dict | None = None) -> bytes:
        header = ContainerHeader(
            kind="checkpoint",
            config_digest=config_digest(self.settings),
            seed=self.settings.seed,
            meta=meta or {},
        )
        return encode_container(CHECKPOINT_MAGIC, header, self.to_segments())

    @classmethod
    def decode(cls, data: bytes, settings: Settings) -> tuple[TrainingState, ContainerHeader]:
        """Rebuild a state from checkpoint bytes; the digest must match ``settings``."""
        header, segments = decode_container(data, CHECKPOINT_MAGIC, expected_digest=config_digest(settings))
        state = cls.initialize(settings)
        state.load_segments(segments)
        return state, header
