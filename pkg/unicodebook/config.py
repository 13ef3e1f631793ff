"""Application settings loaded from defaults, a flat KEY=value file, env vars and flags."""

from __future__ import annotations

import hashlib
import json
from enum import Enum
from pathlib import Path
from typing import Any

from pydantic import Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from unicodebook.domain.codebook import EmaRule
from unicodebook.domain.errors import MissingArtifactError, UsageError
from unicodebook.domain.models import Paradigm, QuantizerMode


class CodebookInit(str, Enum):
    COPY_LM = "copy-lm"
    RANDOM = "random"


class DualReplacement(str, Enum):
    PER_ROUND = "per-round"
    PER_STEP = "per-step"


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="UNICODEBOOK_",
        extra="ignore",
        use_enum_values=False,
    )

    # ── Run ────────────────────────────────────────
    seed: int = 0
    output_root: Path = Path("runs")
    workers: int = Field(default=1, ge=1)

    # ── Synthetic corpus ───────────────────────────
    resolution: int = 16
    patch_size: int = 4
    train_images: int = Field(default=256, ge=0)
    heldout_images: int = Field(default=32, ge=0)
    text_samples: int = Field(default=512, ge=0)
    heldout_text_samples: int = Field(default=64, ge=0)

    # ── Codebook / quantizer ───────────────────────
    codebook_size: int = Field(default=512, ge=2)
    quantizer_mode: QuantizerMode = QuantizerMode.RQ
    depth: int = Field(default=2, ge=1)
    ema_rule: EmaRule = EmaRule.NORMALIZED
    ema_decay: float = Field(default=0.99, ge=0.0, le=1.0)
    sync_decay: float = Field(default=0.99, ge=0.0, le=1.0)
    sync_interval: int = Field(default=50, ge=1)
    ema_enabled: bool = True
    codebook_init: CodebookInit = CodebookInit.COPY_LM
    codebook_init_scale: float = Field(default=1.0, gt=0.0)
    null_code: bool = True
    usage_window: int = Field(default=50, ge=1)

    # ── Visual tokenizer ───────────────────────────
    encoder_hidden: int = Field(default=256, ge=1)
    commitment_beta: float = Field(default=0.25, ge=0.0)
    tokenizer_lr: float = Field(default=2e-3, gt=0.0)
    tokenizer_batch: int = Field(default=32, ge=1)

    # ── Language model ─────────────────────────────
    lm_width: int = Field(default=128, ge=1)
    lm_layers: int = Field(default=4, ge=1)
    lm_heads: int = Field(default=4, ge=1)
    lm_context: int = Field(default=512, ge=8)
    lm_mlp_ratio: int = Field(default=4, ge=1)
    lm_lr: float = Field(default=1e-3, gt=0.0)
    lm_batch: int = Field(default=16, ge=1)
    max_grad_norm: float | None = 1.0

    # ── Stage I paradigm ───────────────────────────
    paradigm: Paradigm = Paradigm.ITERATIVE
    dual_replacement: DualReplacement = DualReplacement.PER_ROUND
    stage1_rounds: int = Field(default=10, ge=0)
    tokenizer_steps_per_round: int = Field(default=100, ge=0)
    lm_steps_per_round: int = Field(default=100, ge=0)
    freeze_lm: bool = False
    freeze_tokenizer: bool = False

    # ── Stage II instruction tuning ────────────────
    stage2_steps: int = Field(default=1000, ge=0)
    stage2_lr: float = Field(default=5e-4, gt=0.0)
    decompression_segments: int = Field(default=1, ge=1)
    include_decompression: bool = True

    @model_validator(mode="after")
    def _check_consistency(self) -> Settings:
        if self.resolution % self.patch_size:
            raise ValueError(
                f"resolution {self.resolution} is not a multiple of patch_size {self.patch_size}"
            )
        if self.quantizer_mode is QuantizerMode.VQ and self.depth != 1:
            raise ValueError("quantizer_mode=vq requires depth=1")
        if self.lm_width % self.lm_heads:
            raise ValueError("lm_width must be divisible by lm_heads")
        cells = (self.resolution // self.patch_size) ** 2
        if cells % self.decompression_segments:
            raise ValueError(
                f"decompression_segments {self.decompression_segments} must divide {cells} cells"
            )
        return self

    # ── Derived quantities ─────────────────────────

    @property
    def embedding_width(self) -> int:
        """n: shared by codebook rows and the language model's token embeddings."""
        return self.lm_width

    @property
    def grid(self) -> int:
        return self.resolution // self.patch_size

    @property
    def encoder_width(self) -> int:
        if self.quantizer_mode is QuantizerMode.HQ:
            return self.embedding_width * self.depth
        return self.embedding_width


# Fields that change parameter shapes or code semantics; checkpoints record their digest.
MODEL_FIELDS = (
    "resolution",
    "patch_size",
    "codebook_size",
    "quantizer_mode",
    "depth",
    "null_code",
    "encoder_hidden",
    "lm_width",
    "lm_layers",
    "lm_heads",
    "lm_context",
    "lm_mlp_ratio",
)


def config_digest(settings: Settings) -> str:
    payload = settings.model_dump(mode="json", include=set(MODEL_FIELDS))
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def load_settings(config_path: Path | None = None, **overrides: Any) -> Settings:
    """Defaults < config file < UNICODEBOOK_* env vars < explicit overrides."""
    if config_path is not None and not config_path.is_file():
        raise MissingArtifactError(f"Config file not found: {config_path}")
    overrides = {k: v for k, v in overrides.items() if v is not None}
    unknown = sorted(set(overrides) - set(Settings.model_fields))
    if unknown:
        raise UsageError(f"Unknown settings: {', '.join(unknown)}")
    try:
        return Settings(_env_file=config_path, **overrides)
    except ValidationError as exc:
        raise UsageError(f"Invalid configuration: {exc}") from exc


def with_overrides(settings: Settings, **update: Any) -> Settings:
    """A copy of ``settings`` with ``update`` applied and every validator re-run."""
    unknown = sorted(set(update) - set(Settings.model_fields))
    if unknown:
        raise UsageError(f"Unknown settings: {', '.join(unknown)}")
    try:
        return Settings.model_validate({**settings.model_dump(), **update})
    except ValidationError as exc:
        raise UsageError(f"Invalid configuration: {exc}") from exc
