"""
Comparative experiments: the paradigm table, its multi-seed ablation and the
tokenizer-family comparison.
"""

from __future__ import annotations

import logging

from pydantic import BaseModel

from unicodebook.config import Settings, with_overrides
from unicodebook.corpus.dataset import CorpusBundle, prepare_corpus
from unicodebook.domain.errors import CorpusMismatchError, UsageError
from unicodebook.domain.models import Paradigm, QuantizerMode, RunSummary
from unicodebook.services.evaluation import Evaluator
from unicodebook.services.pipeline import train_stage1_run

logger = logging.getLogger(__name__)

PARADIGM_ORDER = (Paradigm.FROZEN, Paradigm.DUAL, Paradigm.ITERATIVE)


class ParadigmRow(BaseModel):
    paradigm: Paradigm
    final_mse: float
    final_text_loss: float
    final_distance: float
    utilization: float
    cl_external_drift: float


class ParadigmTable(BaseModel):
    seed: int
    corpus_digest: str
    rows: list[ParadigmRow]

    def row(self, paradigm: Paradigm) -> ParadigmRow:
        return next(r for r in self.rows if r.paradigm is paradigm)


class OrderingCheck(BaseModel):
    """Whether one seed's table reproduces the expected paradigm orderings."""

    seed: int
    text_loss: bool
    reconstruction: bool
    dual_drift: bool
    iterative_drift: bool

    @property
    def holds(self) -> bool:
        return self.text_loss and self.reconstruction and self.dual_drift and self.iterative_drift


class AblationReport(BaseModel):
    tables: list[ParadigmTable]
    checks: list[OrderingCheck]
    holds_on: int
    verdict: bool


class TokenizerRow(BaseModel):
    mode: QuantizerMode
    depth: int
    tokens_per_image: int
    mse: float
    psnr: float
    utilization: float
    perplexity: float


class TokenizerTable(BaseModel):
    codebook_size: int
    steps: int
    rows: list[TokenizerRow]


# ── Paradigm table ────────────────────────────────────────────────


def compare_paradigms(summaries: list[RunSummary]) -> ParadigmTable:
    """One row per paradigm, from three Stage-I runs that share seed and corpus."""
    by_paradigm: dict[Paradigm, RunSummary] = {}
    for summary in summaries:
        paradigm = Paradigm(summary.paradigm)
        if paradigm in by_paradigm:
            raise UsageError(f"Two runs were given for paradigm '{paradigm.value}'")
        by_paradigm[paradigm] = summary
    missing = [p.value for p in PARADIGM_ORDER if p not in by_paradigm]
    if missing:
        raise UsageError(f"Missing runs for paradigms: {', '.join(missing)}")

    digests = {s.corpus_digest for s in summaries}
    seeds = {s.seed for s in summaries}
    if len(digests) != 1 or len(seeds) != 1:
        raise CorpusMismatchError(
            f"Runs do not share a corpus: digests={sorted(digests)} seeds={sorted(seeds)}"
        )

    rows = [
        ParadigmRow(
            paradigm=p,
            final_mse=by_paradigm[p].final_mse,
            final_text_loss=by_paradigm[p].final_text_loss,
            final_distance=by_paradigm[p].final_distance,
            utilization=by_paradigm[p].utilization,
            cl_external_drift=by_paradigm[p].cl_external_drift,
        )
        for p in PARADIGM_ORDER
    ]
    return ParadigmTable(seed=seeds.pop(), corpus_digest=digests.pop(), rows=rows)


def check_orderings(table: ParadigmTable) -> OrderingCheck:
    frozen = table.row(Paradigm.FROZEN)
    dual = table.row(Paradigm.DUAL)
    iterative = table.row(Paradigm.ITERATIVE)
    return OrderingCheck(
        seed=table.seed,
        text_loss=iterative.final_text_loss <= frozen.final_text_loss < dual.final_text_loss,
        reconstruction=iterative.final_mse <= frozen.final_mse,
        dual_drift=dual.cl_external_drift > 0.0,
        iterative_drift=iterative.cl_external_drift == 0.0,
    )


def run_paradigms(settings: Settings, bundle: CorpusBundle, progress: bool = True) -> list[RunSummary]:
    summaries = []
    for paradigm in PARADIGM_ORDER:
        run_settings = with_overrides(settings, paradigm=paradigm)
        _, _, summary = train_stage1_run(run_settings, bundle, progress=progress)
        summaries.append(summary)
    return summaries


def ablate_paradigms(settings: Settings, seeds: list[int], progress: bool = True) -> AblationReport:
    """Every paradigm for every seed; the verdict needs the orderings on at least two thirds of the seeds."""
    if not seeds:
        raise UsageError("ablate-paradigms needs at least one seed")
    tables, checks = [], []
    for seed in seeds:
        seeded = with_overrides(settings, seed=seed)
        table = compare_paradigms(run_paradigms(seeded, prepare_corpus(seeded), progress=progress))
        check = check_orderings(table)
        logger.info("Seed %d: orderings %s", seed, "hold" if check.holds else "fail")
        tables.append(table)
        checks.append(check)
    holds_on = sum(c.holds for c in checks)
    return AblationReport(
        tables=tables,
        checks=checks,
        holds_on=holds_on,
        verdict=3 * holds_on >= 2 * len(seeds),
    )


# ── Tokenizer families ────────────────────────────────────────────


def compare_tokenizers(
    settings: Settings,
    bundle: CorpusBundle,
    modes: tuple[QuantizerMode, ...] = (QuantizerMode.VQ, QuantizerMode.RQ, QuantizerMode.HQ),
    progress: bool = True,
) -> TokenizerTable:
    """Train each quantizer family at the same K and tokenizer step budget, LM held fixed."""
    if bundle.heldout.images.shape[0] == 0:
        raise UsageError("compare-tokenizers needs held-out images")
    rows = []
    for mode in modes:
        depth = 1 if mode is QuantizerMode.VQ else settings.depth
        run_settings = with_overrides(
            settings, quantizer_mode=mode, depth=depth, freeze_lm=True, lm_steps_per_round=0
        )
        state, _, _ = train_stage1_run(run_settings, bundle, progress=progress)
        recon = Evaluator(state).reconstruction(bundle.heldout.images)
        rows.append(
            TokenizerRow(
                mode=mode,
                depth=depth,
                tokens_per_image=settings.grid**2 * depth,
                mse=recon.mse,
                psnr=recon.psnr,
                utilization=recon.utilization,
                perplexity=recon.perplexity,
            )
        )
        logger.info("Tokenizer %s (D=%d): mse=%.6f psnr=%.2f", mode.value, depth, recon.mse, recon.psnr)
    return TokenizerTable(
        codebook_size=settings.codebook_size,
        steps=settings.stage1_rounds * settings.tokenizer_steps_per_round,
        rows=rows,
    )
