"""Unified vocabulary, sequence layouts, the tied-embedding transformer and the LM service."""

import numpy as np
import pytest

from unicodebook.domain.errors import EmptyMaskError, ShapeMismatchError, UsageError
from unicodebook.domain.models import (
    CodeMap,
    DialogueRound,
    InstructionSample,
    QuantizedFeatureMap,
    QuantizerMode,
    SampleKind,
    TokenSequence,
)
from unicodebook.domain.vocab import SpecialToken, UnifiedVocabulary
from unicodebook.models.sequences import (
    append_image,
    build_decompression_sample,
    collate,
    decompression_length,
    decompression_targets,
    empty_sequence,
    nll_loss,
    render_sample,
)
from unicodebook.models.transformer import TinyTransformerLM, TransformerConfig
from unicodebook.numerics.gradcheck import check_gradients
from unicodebook.numerics.tensor import Tensor
from unicodebook.services.language import LanguageModelService, SamplingConfig, SamplingMode
from unicodebook.services.state import TOKEN_TABLE, TrainingState

VOCAB = UnifiedVocabulary(codebook_size=8)


def lm(rng, width: int = 16, layers: int = 2, context: int = 32, prefix_width: int | None = None):
    config = TransformerConfig(
        vocab_size=VOCAB.size,
        width=width,
        layers=layers,
        heads=2,
        context=context,
        mlp_ratio=2,
        prefix_width=prefix_width,
    )
    return TinyTransformerLM(config, rng)


def text_seq(text: str) -> TokenSequence:
    ids = [VOCAB.special(SpecialToken.BOS), *VOCAB.encode_text(text)]
    return TokenSequence(np.array(ids), np.array([False] + [True] * (len(ids) - 1)))


# ── Vocabulary ────────────────────────────────────


def test_vocabulary_layout():
    assert VOCAB.visual_offset == 256
    assert VOCAB.special_offset == 264
    assert VOCAB.size == 264 + len(SpecialToken)
    assert VOCAB.visual_id(3) == 259
    assert VOCAB.code_of(259) == 3
    assert VOCAB.is_visual(263) and not VOCAB.is_visual(264)
    assert VOCAB.is_text(255) and not VOCAB.is_text(256)


def test_vocabulary_rejects_out_of_range():
    with pytest.raises(UsageError):
        VOCAB.visual_id(8)
    with pytest.raises(UsageError):
        VOCAB.code_of(12)
    with pytest.raises(UsageError):
        VOCAB.validate(TokenSequence(np.array([VOCAB.size]), np.array([False])))


def test_text_round_trip():
    assert VOCAB.decode_text(VOCAB.encode_text("red disk on gray")) == "red disk on gray"


# ── Sequence layouts ──────────────────────────────


def test_append_image_records_prefix_positions(rng):
    seq = append_image(empty_sequence(VOCAB, 4), rng.normal(size=(3, 4)), VOCAB)
    assert seq.ids.tolist()[:2] == [VOCAB.special(SpecialToken.BOS), VOCAB.special(SpecialToken.IMG_START)]
    assert seq.prefix_positions.tolist() == [2, 3, 4]
    assert seq.ids[5] == VOCAB.special(SpecialToken.IMG_END)
    assert seq.supervised == 0


def test_render_sample_supervises_answers_only(rng):
    sample = InstructionSample(
        rounds=(
            DialogueRound(question=(1, 2), answer=(3, 4, 5), embeddings=rng.normal(size=(2, 4))),
            DialogueRound(question=(6,), answer=(7,)),
        ),
        kind=SampleKind.VQA,
    )
    seq = render_sample(sample, VOCAB)
    assert seq.supervised == 4
    assert seq.ids[seq.loss_mask].tolist() == [3, 4, 5, 7]
    assert seq.prefix_positions.size == 2


def test_instruction_sample_needs_answers():
    with pytest.raises(UsageError):
        InstructionSample(rounds=(DialogueRound(question=(1,), answer=()),), kind=SampleKind.VQA)


def test_decompression_sample_targets_flattened_codes(rng):
    codes = CodeMap(rng.integers(0, 8, size=(2, 2, 2)), QuantizerMode.RQ)
    zhat = QuantizedFeatureMap(rng.normal(size=(2, 2, 4)), QuantizerMode.RQ, 2)
    seq = build_decompression_sample(zhat, codes, 1, VOCAB)
    np.testing.assert_array_equal(decompression_targets(seq, VOCAB), codes.flatten())
    assert seq.supervised == 8
    # every injected row comes before the first supervised token
    assert seq.prefix_positions.max() < np.flatnonzero(seq.loss_mask).min()


def test_segmented_decompression_interleaves(rng):
    codes = CodeMap(rng.integers(0, 8, size=(2, 2, 1)), QuantizerMode.VQ)
    zhat = QuantizedFeatureMap(rng.normal(size=(2, 2, 4)), QuantizerMode.VQ, 1)
    seq = build_decompression_sample(zhat, codes, 2, VOCAB)
    targets = np.flatnonzero(seq.loss_mask)
    assert seq.prefix_positions[1] < targets[0] < seq.prefix_positions[2]
    np.testing.assert_array_equal(decompression_targets(seq, VOCAB), codes.flatten())
    with pytest.raises(UsageError):
        build_decompression_sample(zhat, codes, 3, VOCAB)


@pytest.mark.parametrize("segments", [1, 2, 4])
def test_decompression_length_matches_the_sample(rng, segments):
    codes = CodeMap(rng.integers(0, 8, size=(2, 2, 2)), QuantizerMode.RQ)
    zhat = QuantizedFeatureMap(rng.normal(size=(2, 2, 4)), QuantizerMode.RQ, 2)
    seq = build_decompression_sample(zhat, codes, segments, VOCAB)
    assert decompression_length(4, 2, segments) == len(seq) - 1


# ── Batching and loss ─────────────────────────────


def test_collate_shifts_targets_and_pads():
    batch = collate([text_seq("ab"), text_seq("abcd")], VOCAB)
    assert batch.ids.shape == (2, 5)
    assert batch.targets[0, :2].tolist() == [ord("a"), ord("b")]
    assert batch.weights[0].tolist() == [1.0, 1.0, 0.0, 0.0, 0.0]
    assert batch.ids[0, 3] == VOCAB.special(SpecialToken.PAD)
    assert batch.supervised == 6


def test_collate_offsets_prefix_index_per_row(rng):
    first = append_image(empty_sequence(VOCAB, 4), rng.normal(size=(2, 4)), VOCAB)
    second = append_image(empty_sequence(VOCAB, 4), rng.normal(size=(1, 4)), VOCAB)
    batch = collate([first, second], VOCAB)
    length = batch.ids.shape[1]
    assert batch.prefix_index.tolist() == [2, 3, length + 2]
    assert batch.prefix_values.shape == (3, 4)


def test_collate_empty_batch():
    with pytest.raises(UsageError):
        collate([], VOCAB)


def test_nll_matches_direct_softmax(rng):
    batch = collate([text_seq("xyz")], VOCAB)
    logits = rng.normal(size=(1, batch.ids.shape[1], VOCAB.size))
    loss = nll_loss(Tensor(logits), batch).item()
    log_probs = logits[0] - np.log(np.exp(logits[0]).sum(axis=-1, keepdims=True))
    expected = -np.mean([log_probs[t, batch.targets[0, t]] for t in range(3)])
    assert loss == pytest.approx(expected, rel=1e-12)


def test_nll_single_supervised_position(rng):
    seq = TokenSequence(np.array([1, 2, 3]), np.array([False, False, True]))
    batch = collate([seq], VOCAB)
    logits = rng.normal(size=(1, 3, VOCAB.size))
    expected = -(logits[0, 1, 3] - np.log(np.exp(logits[0, 1]).sum()))
    assert nll_loss(Tensor(logits), batch).item() == pytest.approx(expected, rel=1e-12)


def test_nll_requires_supervision():
    seq = TokenSequence(np.array([1, 2]), np.array([False, False]))
    with pytest.raises(EmptyMaskError):
        nll_loss(Tensor(np.zeros((1, 2, VOCAB.size))), collate([seq], VOCAB))


# ── Transformer ───────────────────────────────────


def test_weight_tying_is_single_storage(rng):
    model = lm(rng)
    params = model.parameters()
    tables = [name for name, p in params.items() if p.shape[0] == VOCAB.size]
    assert tables == ["tok_emb.weight"]
    ids = np.array([[1, 2, 3]])
    before = model(ids).data.copy()
    # a constant shift vanishes after the final layer norm
    model.tok_emb.weight.data[VOCAB.visual_offset] += rng.normal(size=model.tok_emb.weight.shape[1])
    after = model(ids).data
    np.testing.assert_allclose(before[..., : VOCAB.visual_offset], after[..., : VOCAB.visual_offset])
    assert not np.allclose(before[..., VOCAB.visual_offset], after[..., VOCAB.visual_offset])


def test_visual_block_is_a_view_of_the_table(rng):
    model = lm(rng)
    entries = rng.normal(size=(8, 16))
    model.set_visual_block(VOCAB.visual_slice, entries)
    np.testing.assert_array_equal(model.tok_emb.weight.data[256:264], entries)
    block = model.visual_block(VOCAB.visual_slice)
    block[0] = 99.0
    assert model.tok_emb.weight.data[256, 0] != 99.0
    with pytest.raises(ShapeMismatchError):
        model.set_visual_block(VOCAB.visual_slice, entries[:4])


def test_attention_is_causal(rng):
    model = lm(rng)
    a = model(np.array([[1, 2, 3, 4]])).data
    b = model(np.array([[1, 2, 3, 9]])).data
    np.testing.assert_allclose(a[0, :3], b[0, :3], atol=1e-12)


def test_prefix_injection_replaces_input_rows(rng):
    model = lm(rng)
    ids = np.array([[1, VOCAB.special(SpecialToken.EMBED), 3]])
    plain = model(ids).data
    injected = model(ids, np.array([1]), rng.normal(size=(1, 16))).data
    np.testing.assert_allclose(plain[0, 0], injected[0, 0], atol=1e-12)
    assert not np.allclose(plain[0, 1:], injected[0, 1:])


def test_prefix_projection_for_wider_features(rng):
    model = lm(rng, prefix_width=32)
    assert model.prefix_proj is not None
    out = model(np.array([[1, 2]]), np.array([1]), rng.normal(size=(1, 32)))
    assert out.shape == (1, 2, VOCAB.size)


def test_context_limit(rng):
    with pytest.raises(UsageError):
        lm(rng, context=4)(np.zeros((1, 5), dtype=np.int64))


def test_lm_loss_gradients(rng):
    model = lm(rng, layers=2)
    seq = append_image(empty_sequence(VOCAB, 16), rng.normal(size=(2, 16)), VOCAB).extend([4, 5, 6], True)
    batch = collate([seq], VOCAB)

    def loss_fn():
        return nll_loss(model(batch.ids, batch.prefix_index, batch.prefix_values), batch)

    errors = check_gradients(loss_fn, model.parameters(), max_checks=6)
    assert max(errors.values()) < 1e-4


def test_state_dict_round_trip(rng):
    model, other = lm(rng), lm(np.random.default_rng(99))
    other.load_state_dict(model.state_dict())
    ids = np.array([[5, 6, 7]])
    np.testing.assert_array_equal(model(ids).data, other(ids).data)
    with pytest.raises(KeyError):
        other.load_state_dict({})


# ── Service ───────────────────────────────────────


def test_train_step_reduces_loss_and_pins_null_row(state):
    service = LanguageModelService(state)
    seqs = [text_seq("ab"), text_seq("ba")]
    null_row = state.lm.tok_emb.weight.data[state.vocab.visual_offset].copy()
    first = service.evaluate_loss(seqs)
    for step in range(1, 21):
        service.train_step(seqs, step)
    assert service.evaluate_loss(seqs) < first
    np.testing.assert_array_equal(state.lm.tok_emb.weight.data[state.vocab.visual_offset], null_row)
    assert TOKEN_TABLE in state.lm_optimizer.update_masks


def test_evaluate_loss_weights_by_supervised_tokens(state):
    service = LanguageModelService(state)
    seqs = [text_seq("a"), text_seq("abcdef")]
    combined = service.evaluate_loss(seqs, batch_size=1)
    per = [service.evaluate_loss([s]) for s in seqs]
    assert combined == pytest.approx((per[0] * 1 + per[1] * 6) / 7)


def test_generate_stops_and_respects_max_new(state):
    service = LanguageModelService(state)
    out = service.generate(text_seq("a"), max_new=3)
    assert 2 <= len(out) <= 5
    again = service.generate(text_seq("a"), max_new=3)
    np.testing.assert_array_equal(out.ids, again.ids)


def test_temperature_sampling_is_seeded(state):
    service = LanguageModelService(state)
    sampling = SamplingConfig(SamplingMode.TEMPERATURE, temperature=1.5, top_k=5)
    a = service.generate(text_seq("a"), 6, sampling, seed=3)
    b = service.generate(text_seq("a"), 6, sampling, seed=3)
    np.testing.assert_array_equal(a.ids, b.ids)


def test_sampling_config_validation():
    with pytest.raises(UsageError):
        SamplingConfig(SamplingMode.TEMPERATURE, temperature=0.0)
    with pytest.raises(UsageError):
        SamplingConfig(top_k=0)


def test_decompress_image_emits_full_code_map(state, rng):
    zhat = QuantizedFeatureMap(rng.normal(size=(2, 2, 16)), QuantizerMode.RQ, 2)
    result = LanguageModelService(state).decompress_image(zhat)
    assert result.code_map.indices.shape == (2, 2, 2)
    assert result.code_map.indices.max() < state.settings.codebook_size
    assert result.violations >= 0


def test_decompress_image_checks_context_up_front(state, rng):
    zhat = QuantizedFeatureMap(rng.normal(size=(8, 8, 16)), QuantizerMode.RQ, 2)
    with pytest.raises(UsageError, match="needs a context of 196"):
        LanguageModelService(state).decompress_image(zhat, segments=1)


@pytest.mark.slow
def test_decompression_recovers_an_overfit_image(make_settings, rng):
    state = TrainingState.initialize(make_settings(lm_lr=3e-3))
    zhat = QuantizedFeatureMap(rng.normal(size=(2, 2, 16)), QuantizerMode.RQ, 2)
    codes = CodeMap(rng.integers(0, 16, size=(2, 2, 2)), QuantizerMode.RQ)
    sample = build_decompression_sample(zhat, codes, 1, state.vocab)
    service = LanguageModelService(state)
    for step in range(1, 2001):
        service.train_step([sample], step)
        if step % 100 == 0 and service.evaluate_loss([sample]) < 1e-3:
            break
    result = service.decompress_image(zhat)
    np.testing.assert_array_equal(result.code_map.indices, codes.indices)
    assert result.violations == 0
