"""Synthetic scenes, captions, instruction samples and the dataset file."""

import numpy as np
import pytest

from unicodebook.corpus.dataset import decode_dataset, encode_dataset, prepare_corpus
from unicodebook.corpus.samples import (
    build_instruction_corpus,
    make_text_sequence,
    make_text_to_image_sample,
    make_vqa_sample,
    text_to_image_prompt,
)
from unicodebook.corpus.synthetic import (
    BACKGROUNDS,
    PALETTE,
    all_captions,
    gen_images,
    gen_text,
    render,
    resample,
    sample_spec,
)
from unicodebook.domain.errors import CheckpointError, UsageError
from unicodebook.domain.models import CodeMap, QuantizedFeatureMap, QuantizerMode, SampleKind, ShapeKind, ShapeSpec
from unicodebook.domain.vocab import SpecialToken, UnifiedVocabulary
from unicodebook.models.sequences import render_sample

VOCAB = UnifiedVocabulary(codebook_size=16)


# ── Images ────────────────────────────────────────


def test_gen_images_is_deterministic():
    a, b = gen_images(5, 6, 16), gen_images(5, 6, 16)
    assert a.images.tobytes() == b.images.tobytes()
    assert a.captions == b.captions
    assert a.digest() == b.digest()
    assert gen_images(6, 6, 16).digest() != a.digest()


def test_gen_images_zero_count():
    empty = gen_images(0, 0, 8)
    assert empty.images.shape == (0, 8, 8, 3)
    assert len(empty) == 0


def test_gen_images_rejects_bad_resolution():
    with pytest.raises(UsageError):
        gen_images(0, 1, 0)


def test_images_are_in_unit_range_and_show_two_colors():
    images = gen_images(1, 8, 16)
    assert images.images.min() >= 0.0 and images.images.max() <= 1.0
    for image, spec in zip(images.images, images.specs):
        colors = {tuple(px) for px in image.reshape(-1, 3)}
        assert colors <= {spec.color, spec.background}
        assert spec.color in colors


def test_same_seed_renders_same_scene_at_any_resolution():
    small, large = gen_images(3, 4, 8), gen_images(3, 4, 32)
    assert small.specs == large.specs
    assert small.captions == large.captions


def test_disk_is_round():
    spec = ShapeSpec(
        kind=ShapeKind.DISK,
        color_name="red",
        color=PALETTE["red"],
        background_name="black",
        background=BACKGROUNDS["black"],
        size_name="large",
        center=(0.5, 0.5),
        half_extent=0.36,
    )
    image = render(spec, 32)
    assert tuple(image[16, 16]) == PALETTE["red"]
    assert tuple(image[1, 1]) == BACKGROUNDS["black"]


def test_shape_spec_must_fit_canvas():
    with pytest.raises(UsageError):
        ShapeSpec(
            kind=ShapeKind.RECTANGLE,
            color_name="red",
            color=PALETTE["red"],
            background_name="black",
            background=BACKGROUNDS["black"],
            size_name="large",
            center=(0.1, 0.5),
            half_extent=0.36,
        )


def test_sampled_colors_differ_from_background(rng):
    for _ in range(200):
        spec = sample_spec(rng)
        assert spec.color_name != spec.background_name


def test_resample_identity_and_constant():
    images = gen_images(2, 3, 16).images
    np.testing.assert_array_equal(resample(images, 16), images)
    flat = np.full((1, 16, 16, 3), 0.3)
    np.testing.assert_allclose(resample(flat, 8), np.full((1, 8, 8, 3), 0.3))
    np.testing.assert_allclose(resample(flat, 24), np.full((1, 24, 24, 3), 0.3))


def test_downsample_by_two_averages_blocks():
    image = np.arange(16, dtype=np.float64).reshape(1, 4, 4, 1).repeat(3, axis=-1)
    out = resample(image, 2)
    assert out[0, 0, 0, 0] == pytest.approx((0 + 1 + 4 + 5) / 4)


# ── Captions and text ─────────────────────────────


def test_captions_tokenize_without_unknown_ids():
    captions = all_captions()
    assert len(captions) == len(set(captions))
    for caption in captions:
        ids = VOCAB.encode_text(caption)
        assert all(VOCAB.is_text(i) for i in ids)
        assert VOCAB.decode_text(ids) == caption


def test_gen_text_is_deterministic():
    assert gen_text(4, 10) == gen_text(4, 10)
    assert gen_text(4, 0) == []


def test_text_sequence_supervises_everything_after_bos():
    seq = make_text_sequence("abc", VOCAB)
    assert seq.ids[0] == VOCAB.special(SpecialToken.BOS)
    assert seq.ids[-1] == VOCAB.special(SpecialToken.EOS)
    assert seq.supervised == 4


# ── Instruction samples ───────────────────────────


def test_text_to_image_answer_is_codes_between_markers(rng):
    code_map = CodeMap(rng.integers(0, 16, size=(4, 4, 1)), QuantizerMode.VQ)
    sample = make_text_to_image_sample("small red disk on black", code_map, VOCAB)
    answer = sample.rounds[0].answer
    assert len(answer) == 16 + 2
    assert answer[0] == VOCAB.special(SpecialToken.IMG_START)
    assert answer[-1] == VOCAB.special(SpecialToken.IMG_END)
    seq = render_sample(sample, VOCAB)
    assert seq.supervised == 18
    assert [VOCAB.code_of(i) for i in answer[1:-1]] == code_map.flatten().tolist()


def test_text_to_image_respects_context(rng):
    code_map = CodeMap(rng.integers(0, 16, size=(4, 4, 2)), QuantizerMode.RQ)
    with pytest.raises(UsageError):
        make_text_to_image_sample("large blue square on white", code_map, VOCAB, context=32)


def test_text_to_image_prompt_ends_at_img_start():
    prompt = text_to_image_prompt("small red disk on black", VOCAB)
    assert prompt.ids[-1] == VOCAB.special(SpecialToken.IMG_START)
    assert VOCAB.special(SpecialToken.GEN_IMAGE) in prompt.ids.tolist()
    assert prompt.supervised == 0


def test_vqa_sample_injects_embeddings_once(rng):
    spec = gen_images(0, 1, 8).specs[0]
    zhat = QuantizedFeatureMap(rng.normal(size=(2, 2, 4)), QuantizerMode.RQ, 2)
    sample = make_vqa_sample(spec, zhat, VOCAB, rng, rounds=2)
    assert sample.kind is SampleKind.VQA
    assert sample.rounds[0].embeddings.shape == (4, 4)
    assert sample.rounds[1].embeddings is None
    answers = [VOCAB.decode_text(r.answer) for r in sample.rounds]
    assert all(a.endswith(".") for a in answers)


def test_instruction_corpus_has_every_kind(rng):
    images = gen_images(0, 3, 8)
    codes = rng.integers(0, 16, size=(3, 2, 2, 2))
    zhat = rng.normal(size=(3, 2, 2, 4))
    corpus = build_instruction_corpus(images, codes, zhat, QuantizerMode.RQ, VOCAB, seed=0, texts=["hello."])
    kinds = [s.kind for s in corpus]
    assert kinds.count(SampleKind.VQA) == 3
    assert kinds.count(SampleKind.TEXT_TO_IMAGE) == 3
    assert kinds.count(SampleKind.DECOMPRESSION) == 3
    assert kinds.count(SampleKind.TEXT) == 1
    without = build_instruction_corpus(
        images, codes, zhat, QuantizerMode.RQ, VOCAB, seed=0, include_decompression=False
    )
    assert SampleKind.DECOMPRESSION not in {s.kind for s in without}


def test_instruction_corpus_rejects_misaligned_batches(rng):
    images = gen_images(0, 2, 8)
    with pytest.raises(UsageError):
        build_instruction_corpus(
            images, np.zeros((3, 2, 2, 1), dtype=np.int64), np.zeros((3, 2, 2, 4)), QuantizerMode.VQ, VOCAB, 0
        )


# ── Dataset file ──────────────────────────────────


def test_prepare_corpus_splits_are_disjoint_streams(settings):
    bundle = prepare_corpus(settings)
    assert len(bundle.train) == 16 and len(bundle.heldout) == 4
    assert bundle.train.digest() != bundle.heldout.digest()
    assert prepare_corpus(settings).digest() == bundle.digest()


def test_dataset_round_trip(bundle, settings):
    restored = decode_dataset(encode_dataset(bundle, settings))
    assert restored.digest() == bundle.digest()
    assert restored.train.captions == bundle.train.captions
    assert restored.texts == bundle.texts


def test_dataset_round_trip_with_empty_splits(make_settings):
    settings = make_settings(train_images=0, heldout_images=0, text_samples=0, heldout_text_samples=0)
    bundle = prepare_corpus(settings)
    restored = decode_dataset(encode_dataset(bundle, settings))
    assert len(restored.train) == 0
    assert restored.texts == ()


def test_dataset_corruption_is_detected(bundle, settings):
    data = bytearray(encode_dataset(bundle, settings))
    data[-20] ^= 0xFF
    with pytest.raises(CheckpointError):
        decode_dataset(bytes(data))
