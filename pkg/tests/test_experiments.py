"""Paradigm tables, ordering checks, tokenizer comparison and held-out evaluation."""

from pathlib import Path

import numpy as np
import pytest

from unicodebook.config import load_settings, with_overrides
from unicodebook.corpus.dataset import prepare_corpus
from unicodebook.domain.errors import CorpusMismatchError, UsageError
from unicodebook.domain.models import Paradigm, QuantizerMode, RunSummary
from unicodebook.services.evaluation import Evaluator
from unicodebook.services.experiments import (
    ablate_paradigms,
    check_orderings,
    compare_paradigms,
    compare_tokenizers,
    run_paradigms,
)
from unicodebook.services.pipeline import stage2_data, train_stage1_run
from unicodebook.services.stage2 import run_stage2

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def summary(paradigm: str, **fields) -> RunSummary:
    values = {
        "paradigm": paradigm,
        "seed": 0,
        "corpus_digest": "d1",
        "final_mse": 0.02,
        "final_text_loss": 2.0,
        "final_distance": 0.0,
        "utilization": 0.5,
        "cl_external_drift": 0.0,
        "initial_mse": 0.2,
        "initial_distance": 1.0,
        "steps": 10,
    }
    values.update(fields)
    return RunSummary(**values)


def expected_runs() -> list[RunSummary]:
    return [
        summary("iterative", final_text_loss=1.9, final_mse=0.015, final_distance=0.1),
        summary("frozen", final_text_loss=2.0),
        summary("dual", final_text_loss=2.4, cl_external_drift=3.5),
    ]


# ── Paradigm table ────────────────────────────────


def test_compare_paradigms_orders_rows():
    table = compare_paradigms(expected_runs())
    assert [r.paradigm for r in table.rows] == [Paradigm.FROZEN, Paradigm.DUAL, Paradigm.ITERATIVE]
    assert table.row(Paradigm.DUAL).cl_external_drift == 3.5
    assert table.seed == 0 and table.corpus_digest == "d1"


def test_compare_paradigms_rejects_duplicates_and_gaps():
    with pytest.raises(UsageError):
        compare_paradigms([*expected_runs(), summary("frozen")])
    with pytest.raises(UsageError):
        compare_paradigms(expected_runs()[:2])


def test_compare_paradigms_requires_shared_corpus():
    runs = expected_runs()
    runs[1] = summary("frozen", corpus_digest="d2")
    with pytest.raises(CorpusMismatchError):
        compare_paradigms(runs)
    runs = expected_runs()
    runs[2] = summary("dual", seed=1)
    with pytest.raises(CorpusMismatchError):
        compare_paradigms(runs)


def test_check_orderings_holds_on_expected_table():
    check = check_orderings(compare_paradigms(expected_runs()))
    assert check.holds


def test_check_orderings_flags_each_failure():
    runs = expected_runs()
    runs[2] = summary("dual", final_text_loss=1.0, cl_external_drift=3.5)
    check = check_orderings(compare_paradigms(runs))
    assert not check.text_loss and check.reconstruction and not check.holds

    runs = expected_runs()
    runs[0] = summary("iterative", final_text_loss=1.9, cl_external_drift=0.2)
    check = check_orderings(compare_paradigms(runs))
    assert not check.iterative_drift


def test_run_paradigms_share_corpus(settings, bundle):
    summaries = run_paradigms(settings, bundle, progress=False)
    table = compare_paradigms(summaries)
    assert table.corpus_digest == bundle.digest()
    assert table.row(Paradigm.FROZEN).final_distance == 0.0
    assert table.row(Paradigm.ITERATIVE).cl_external_drift == 0.0
    assert table.row(Paradigm.DUAL).cl_external_drift > 0.0


def test_ablation_counts_seeds(settings):
    report = ablate_paradigms(settings, seeds=[0, 1], progress=False)
    assert len(report.tables) == 2
    assert report.holds_on == sum(c.holds for c in report.checks)
    assert report.verdict == (3 * report.holds_on >= 4)
    with pytest.raises(UsageError):
        ablate_paradigms(settings, seeds=[])


# ── Tokenizer families ────────────────────────────


def test_compare_tokenizers_rows(settings, bundle):
    table = compare_tokenizers(settings, bundle, progress=False)
    assert [r.mode for r in table.rows] == [QuantizerMode.VQ, QuantizerMode.RQ, QuantizerMode.HQ]
    assert [r.tokens_per_image for r in table.rows] == [4, 8, 8]
    assert table.steps == 6
    assert all(r.mse >= 0.0 and np.isfinite(r.psnr) for r in table.rows)


def test_compare_tokenizers_needs_heldout(make_settings):
    settings = make_settings(heldout_images=0)
    with pytest.raises(UsageError):
        compare_tokenizers(settings, prepare_corpus(settings), progress=False)


# ── Evaluator ─────────────────────────────────────


def test_reconstruction_report(state, bundle):
    report = Evaluator(state).reconstruction(bundle.heldout.images)
    assert report.images == 4
    assert report.perplexity == pytest.approx(2.0**report.entropy_bits)


def test_decompression_report_bounds(state, bundle):
    report = Evaluator(state, workers=2).decompression(bundle.heldout.images[:2])
    assert 0.0 <= report.token_exact_match <= 1.0
    assert report.image_exact_match in (0.0, 0.5, 1.0)
    assert report.chance_level == pytest.approx(1 / 16)
    assert report.images == 2


def test_decompression_is_thread_count_independent(state, bundle):
    images = bundle.heldout.images
    assert Evaluator(state, workers=1).decompression(images) == Evaluator(state, workers=3).decompression(images)


def test_decompression_needs_images(state):
    with pytest.raises(UsageError):
        Evaluator(state).decompression(np.zeros((0, 8, 8, 3)))


def test_evaluate_without_decompression(state, bundle):
    report = Evaluator(state).evaluate(bundle.heldout.images, decompress=False)
    assert report.decompression is None and report.text_loss is None


def test_resolution_sweep_includes_trained_size(state):
    table = Evaluator(state).resolution_sweep([4, 16], count=3, seed=5)
    assert [r.resolution for r in table.rows] == [4, 8, 16]
    assert table.trained_resolution == 8
    assert all(r.mse >= 0.0 for r in table.rows)
    assert [r.code_map for r in table.rows] == [1, 2, 4]
    assert not any(r.resampled for r in table.rows)


def test_resolution_sweep_tokenizes_at_the_test_size(state, monkeypatch):
    evaluator = Evaluator(state)
    seen = []
    reconstruct = evaluator.tokenizer.reconstruct

    def recording(images):
        seen.append(images.shape[1:3])
        return reconstruct(images)

    monkeypatch.setattr(evaluator.tokenizer, "reconstruct", recording)
    evaluator.resolution_sweep([16], count=2, seed=5)
    assert seen == [(8, 8), (16, 16)]


def test_resolution_sweep_off_patch_size_is_resampled(state):
    table = Evaluator(state).resolution_sweep([6], count=2, seed=5)
    row = next(r for r in table.rows if r.resolution == 6)
    assert row.resampled
    assert row.code_map == 2


def test_resolution_sweep_rejects_bad_size(state):
    with pytest.raises(UsageError):
        Evaluator(state).resolution_sweep([0], count=1, seed=0)


# ── Desk scale ────────────────────────────────────


@pytest.mark.slow
def test_desk_scale_iterative_stage1():
    settings = load_settings(CONFIGS / "desk.env", paradigm="iterative")
    bundle = prepare_corpus(settings)
    state, _, result = train_stage1_run(settings, bundle, progress=False)
    assert result.final_mse <= 0.5 * result.initial_mse
    assert result.utilization >= 0.5
    assert result.final_distance <= 0.25 * result.initial_distance

    sweep = Evaluator(state).resolution_sweep([24], count=32, seed=settings.seed + 40_000)
    by_size = {r.resolution: r.mse for r in sweep.rows}
    assert by_size[24] > by_size[16]
    assert {r.resolution: r.code_map for r in sweep.rows} == {16: 4, 24: 6}

    run_stage2(state, stage2_data(bundle, state), progress=False)
    report = Evaluator(state).decompression(bundle.heldout.images)
    assert report.images == 32
    assert report.token_exact_match >= 10 * report.chance_level
    assert report.violations == 0


@pytest.mark.slow
def test_desk_scale_residual_beats_single_layer():
    settings = with_overrides(load_settings(CONFIGS / "desk.env"), stage1_rounds=5)
    modes = (QuantizerMode.VQ, QuantizerMode.RQ)
    table = compare_tokenizers(settings, prepare_corpus(settings), modes=modes, progress=False)
    vq, rq = table.rows
    assert (vq.depth, rq.depth) == (1, 2)
    assert rq.mse < vq.mse


@pytest.mark.slow
def test_desk_scale_paradigm_orderings():
    settings = load_settings(CONFIGS / "desk.env")
    report = ablate_paradigms(settings, seeds=[0, 1, 2], progress=False)
    assert len(report.checks) == 3
    assert report.verdict
    assert all(t.row(Paradigm.FROZEN).final_distance == 0.0 for t in report.tables)
