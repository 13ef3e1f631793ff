"""Visual tokenizer: encode, stacked-quantize, decode, train and evaluate."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from unicodebook.domain.codebook import EmaRule, IndicatorMap, UsageWindow, ema_update, usage_stats
from unicodebook.domain.errors import NumericalError, UsageError
from unicodebook.domain.models import CodeMap, QuantizedFeatureMap, QuantizerMode, ReconstructionMetrics
from unicodebook.models.autoencoder import check_images, tokenizer_loss
from unicodebook.numerics.tensor import backward, no_grad, reset_tape
from unicodebook.services.state import TrainingState

logger = logging.getLogger(__name__)

PSNR_CAP = 99.0


def psnr(mse: float) -> float:
    """Peak signal-to-noise ratio for unit-range images, capped at 99 dB."""
    if mse <= 10 ** (-PSNR_CAP / 10):
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / mse)))


@dataclass(frozen=True)
class TokenizerStepResult:
    loss: float
    mse: float
    codes: np.ndarray


@dataclass(frozen=True)
class TokenizedBatch:
    codes: np.ndarray  # (B, h, w, D)
    zhat: np.ndarray  # (B, h, w, n_agg)

    def code_map(self, i: int, mode: QuantizerMode) -> CodeMap:
        return CodeMap(self.codes[i], mode)


class TokenizerService:
    """Trains the encoder/decoder by gradient and the codebook by EMA only."""

    def __init__(
        self,
        state: TrainingState,
        usage_window: UsageWindow | None = None,
        update_codebook: bool | None = None,
    ) -> None:
        self._state = state
        self._settings = state.settings
        self.update_codebook = state.settings.ema_enabled if update_codebook is None else update_codebook
        self.window = usage_window or UsageWindow(state.settings.codebook_size, state.settings.usage_window)

    # ── Inference ─────────────────────────────────

    def features(self, images: np.ndarray) -> np.ndarray:
        with no_grad():
            return self._state.autoencoder.encode(images).data

    def tokenize(self, images: np.ndarray) -> TokenizedBatch:
        state = self._state
        z0 = self.features(images)
        codes = state.quantizer.encode_codes(z0, state.codebook)
        return TokenizedBatch(codes, state.quantizer.aggregate_codes(codes, state.codebook))

    def encode_stacked(self, image: np.ndarray) -> CodeMap:
        z0 = self.features(image)[0]
        return self._state.quantizer.encode_stacked(z0, self._state.codebook)

    def aggregate(self, code_map: CodeMap) -> QuantizedFeatureMap:
        return self._state.quantizer.aggregate(code_map, self._state.codebook)

    def decode(self, zhat: np.ndarray) -> np.ndarray:
        with no_grad():
            return self._state.autoencoder.decode(zhat).data

    def reconstruct(self, images: np.ndarray) -> np.ndarray:
        return self.decode(self.tokenize(images).zhat)

    # ── Training ──────────────────────────────────

    def train_step(self, images: np.ndarray, step: int) -> TokenizerStepResult:
        """
        One straight-through step: gradients reach the encoder and decoder,
        then the codebook moves by EMA toward the features assigned to it.
        """
        state, cfg = self._state, self._settings
        images = check_images(images, cfg.patch_size)
        optimizer = state.tokenizer_optimizer

        optimizer.zero_grad()
        z0 = state.autoencoder.encode(images)
        codes = state.quantizer.encode_codes(z0.data, state.codebook)
        zhat = state.quantizer.aggregate_codes(codes, state.codebook)
        loss, recon_loss, _ = tokenizer_loss(state.autoencoder, images, z0, zhat, cfg.commitment_beta)
        if not np.isfinite(loss.item()):
            raise NumericalError("Tokenizer loss is not finite", step=step)

        if cfg.freeze_tokenizer:
            reset_tape()
        else:
            backward(loss)
            optimizer.step()
            state.counters.tokenizer_steps += 1

        if self.update_codebook:
            targets = state.quantizer.layer_targets(z0.data, codes, state.codebook)
            flat_targets = targets.reshape(-1, state.codebook.dim)
            indicator = IndicatorMap(codes.reshape(-1), state.codebook.size)
            state.codebook = ema_update(
                state.codebook,
                flat_targets,
                indicator,
                cfg.ema_decay,
                rule=cfg.ema_rule,
                state=state.ema_state if cfg.ema_rule is EmaRule.NORMALIZED else None,
            )
        self.window.push(codes)
        logger.debug("tokenizer step %d: loss=%.6f mse=%.6f", step, loss.item(), recon_loss.item())
        return TokenizerStepResult(loss.item(), recon_loss.item(), codes)

    # ── Evaluation ────────────────────────────────

    def reconstruct_eval(self, images: np.ndarray, batch_size: int = 64) -> ReconstructionMetrics:
        if len(images) == 0:
            raise UsageError("reconstruct_eval needs at least one image")
        images = check_images(images, self._settings.patch_size)
        errors, all_codes = [], []
        for start in range(0, len(images), batch_size):
            chunk = images[start : start + batch_size]
            tokens = self.tokenize(chunk)
            recon = self.decode(tokens.zhat)
            errors.append(np.mean((recon - chunk) ** 2, axis=(1, 2, 3)))
            all_codes.append(tokens.codes.reshape(-1))
        per_image = np.concatenate(errors)
        stats = usage_stats(np.concatenate(all_codes), self._settings.codebook_size)
        return ReconstructionMetrics(
            mse=float(per_image.mean()),
            psnr=float(np.mean([psnr(e) for e in per_image])),
            utilization=stats.utilization,
            entropy_bits=stats.entropy_bits,
            count=len(images),
        )
