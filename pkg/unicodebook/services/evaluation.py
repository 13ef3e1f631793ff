"""Held-out evaluation: reconstruction, language-model losses, decompression and resolution sweeps."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from pydantic import BaseModel

from unicodebook.corpus.synthetic import gen_images, resample
from unicodebook.domain.errors import UsageError
from unicodebook.domain.models import LabeledSequence, TokenSequence
from unicodebook.services.language import DecompressionResult, LanguageModelService
from unicodebook.services.state import TrainingState
from unicodebook.services.tokenizer import TokenizerService, psnr

logger = logging.getLogger(__name__)


class ReconstructionReport(BaseModel):
    mse: float
    psnr: float
    utilization: float
    entropy_bits: float
    perplexity: float
    images: int


class DecompressionReport(BaseModel):
    token_exact_match: float
    image_exact_match: float
    violations: int
    chance_level: float
    images: int


class EvaluationReport(BaseModel):
    reconstruction: ReconstructionReport
    text_loss: float | None = None
    instruction_loss: float | None = None
    decompression: DecompressionReport | None = None


class SweepRow(BaseModel):
    resolution: int
    code_map: int
    mse: float
    psnr: float
    resampled: bool = False


class SweepTable(BaseModel):
    trained_resolution: int
    rows: list[SweepRow]
    trained_is_optimum: bool


class Evaluator:
    """
    Read-only evaluation over a trained state.

    Decompression fans out across ``workers`` threads; every thread only
    reads the shared parameters and keeps its own autodiff tape.
    """

    def __init__(self, state: TrainingState, workers: int | None = None) -> None:
        self._state = state
        self._workers = workers or state.settings.workers
        self.tokenizer = TokenizerService(state, update_codebook=False)
        self.language = LanguageModelService(state)

    def reconstruction(self, images: np.ndarray) -> ReconstructionReport:
        metrics = self.tokenizer.reconstruct_eval(images)
        return ReconstructionReport(
            mse=metrics.mse,
            psnr=metrics.psnr,
            utilization=metrics.utilization,
            entropy_bits=metrics.entropy_bits,
            perplexity=float(2.0**metrics.entropy_bits),
            images=metrics.count,
        )

    def decompression(self, images: np.ndarray, segments: int | None = None) -> DecompressionReport:
        """Exact recovery of each image's code map from its own Ẑ, per token and per image."""
        if len(images) == 0:
            raise UsageError("Decompression evaluation needs at least one image")
        code_maps = [self.tokenizer.encode_stacked(image) for image in images]
        zhats = [self.tokenizer.aggregate(cm) for cm in code_maps]

        def run(index: int) -> DecompressionResult:
            return self.language.decompress_image(zhats[index], segments)

        with ThreadPoolExecutor(max_workers=self._workers) as pool:
            results = list(pool.map(run, range(len(images))))

        matches = [r.code_map.indices == cm.indices for r, cm in zip(results, code_maps, strict=True)]
        violations = sum(r.violations for r in results)
        if violations:
            logger.warning("Decompression produced %d non-visual ids over %d images", violations, len(images))
        return DecompressionReport(
            token_exact_match=float(np.mean(np.concatenate([m.reshape(-1) for m in matches]))),
            image_exact_match=float(np.mean([m.all() for m in matches])),
            violations=violations,
            chance_level=1.0 / self._state.settings.codebook_size,
            images=len(images),
        )

    def evaluate(
        self,
        images: np.ndarray,
        texts: list[TokenSequence] | None = None,
        instructions: list[LabeledSequence] | None = None,
        decompress: bool = True,
    ) -> EvaluationReport:
        report = EvaluationReport(
            reconstruction=self.reconstruction(images),
            text_loss=self.language.evaluate_loss(texts) if texts else None,
            instruction_loss=(
                self.language.evaluate_loss([s.sequence for s in instructions]) if instructions else None
            ),
            decompression=self.decompression(images) if decompress else None,
        )
        logger.info(
            "Evaluation: mse=%.6f psnr=%.2f text_loss=%s exact_match=%s",
            report.reconstruction.mse,
            report.reconstruction.psnr,
            report.text_loss,
            report.decompression.token_exact_match if report.decompression else None,
        )
        return report

    # ── Resolution mismatch ───────────────────────

    def resolution_sweep(self, resolutions: list[int], count: int, seed: int) -> SweepTable:
        """
        Render the same scenes at each resolution and run them through the
        tokenizer at that resolution, so a larger image gives a larger code
        map whose elements each cover less of the scene.

        A size that is not a multiple of the patch is tokenized at the
        nearest multiple and resampled back; its row has ``resampled`` set.
        """
        trained = self._state.settings.resolution
        patch = self._state.settings.patch_size
        if trained not in resolutions:
            resolutions = [trained, *resolutions]
        rows = []
        for size in sorted(set(resolutions)):
            if size < 1:
                raise UsageError(f"Resolution must be positive, got {size}")
            native = gen_images(seed, count, size).images
            grid_size = max(patch, int(round(size / patch)) * patch)
            if grid_size == size:
                recon = self.tokenizer.reconstruct(native)
            else:
                logger.warning("Resolution %d is not a multiple of patch %d; tokenizing at %d", size, patch, grid_size)
                recon = resample(self.tokenizer.reconstruct(resample(native, grid_size)), size)
            per_image = np.mean((recon - native) ** 2, axis=(1, 2, 3))
            rows.append(
                SweepRow(
                    resolution=size,
                    code_map=grid_size // patch,
                    mse=float(per_image.mean()),
                    psnr=float(np.mean([psnr(e) for e in per_image])),
                    resampled=grid_size != size,
                )
            )
            logger.info("Resolution %d (%d codes a side): mse=%.6f", size, rows[-1].code_map, rows[-1].mse)
        trained_mse = next(r.mse for r in rows if r.resolution == trained)
        optimum = all(r.mse > trained_mse for r in rows if r.resolution != trained)
        return SweepTable(trained_resolution=trained, rows=rows, trained_is_optimum=optimum)
