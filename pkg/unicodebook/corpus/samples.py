"""Instruction, text-to-image, text and decompression samples over tokenized images."""

from __future__ import annotations

import logging

import numpy as np

from unicodebook.corpus.synthetic import SHAPE_WORDS, ImageSet, caption_of
from unicodebook.domain.errors import UsageError
from unicodebook.domain.models import (
    CodeMap,
    DialogueRound,
    InstructionSample,
    LabeledSequence,
    QuantizedFeatureMap,
    QuantizerMode,
    SampleKind,
    ShapeSpec,
    TokenSequence,
)
from unicodebook.domain.vocab import SpecialToken, UnifiedVocabulary
from unicodebook.models.sequences import build_decompression_sample, render_sample
from unicodebook.prompts.templates import GENERATE_IMAGE, VQA_TEMPLATES, get_prompt

logger = logging.getLogger(__name__)


def make_text_sequence(text: str, vocab: UnifiedVocabulary) -> TokenSequence:
    """BOS, the text bytes, EOS; every token after BOS is a prediction target."""
    ids = [vocab.special(SpecialToken.BOS), *vocab.encode_text(text), vocab.special(SpecialToken.EOS)]
    mask = np.ones(len(ids), dtype=bool)
    mask[0] = False
    seq = TokenSequence(ids=np.array(ids), loss_mask=mask)
    vocab.validate(seq)
    return seq


def image_answer(code_map: CodeMap, vocab: UnifiedVocabulary) -> tuple[int, ...]:
    return (
        vocab.special(SpecialToken.IMG_START),
        *vocab.visual_ids(code_map.flatten()).tolist(),
        vocab.special(SpecialToken.IMG_END),
    )


def make_text_to_image_sample(
    caption: str, code_map: CodeMap, vocab: UnifiedVocabulary, context: int | None = None
) -> InstructionSample:
    """Question: the caption request plus GEN_IMAGE. Answer: IMG_START, codes, IMG_END."""
    question, _ = GENERATE_IMAGE.render(caption=caption)
    rnd = DialogueRound(
        question=(*vocab.encode_text(question), vocab.special(SpecialToken.GEN_IMAGE)),
        answer=image_answer(code_map, vocab),
    )
    sample = InstructionSample(rounds=(rnd,), kind=SampleKind.TEXT_TO_IMAGE)
    if context is not None:
        # BOS, USER, question, ASSISTANT, answer
        length = 3 + len(rnd.question) + len(rnd.answer)
        if length > context:
            raise UsageError(f"Text-to-image sample of length {length} exceeds the context limit {context}")
    return sample


def answer_ids(text: str, vocab: UnifiedVocabulary) -> tuple[int, ...]:
    return (*vocab.encode_text(text), vocab.special(SpecialToken.EOS))


def make_vqa_sample(
    spec: ShapeSpec,
    zhat: QuantizedFeatureMap,
    vocab: UnifiedVocabulary,
    rng: np.random.Generator,
    rounds: int = 2,
) -> InstructionSample:
    """Multi-round questions about one image; its Ẑ rows are injected in the first round."""
    if rounds < 1:
        raise UsageError("A VQA sample needs at least one round")
    names = rng.permutation(len(VQA_TEMPLATES))[:rounds]
    fields = {
        "shape": SHAPE_WORDS[spec.kind],
        "color": spec.color_name,
        "background": spec.background_name,
        "caption": caption_of(spec),
    }
    turns = []
    for i, idx in enumerate(names):
        question, answer = get_prompt(VQA_TEMPLATES[int(idx)]).render(**fields)
        turns.append(
            DialogueRound(
                question=tuple(vocab.encode_text(question)),
                answer=answer_ids(answer, vocab),
                embeddings=zhat.flat() if i == 0 else None,
            )
        )
    return InstructionSample(rounds=tuple(turns), kind=SampleKind.VQA)


def make_decompression_sample(
    zhat: QuantizedFeatureMap, code_map: CodeMap, segments: int, vocab: UnifiedVocabulary
) -> LabeledSequence:
    return LabeledSequence(SampleKind.DECOMPRESSION, build_decompression_sample(zhat, code_map, segments, vocab))


def build_instruction_corpus(
    images: ImageSet,
    codes: np.ndarray,
    zhat: np.ndarray,
    mode: QuantizerMode,
    vocab: UnifiedVocabulary,
    seed: int,
    segments: int = 1,
    include_decompression: bool = True,
    context: int | None = None,
    texts: list[str] | None = None,
) -> list[LabeledSequence]:
    """
    One VQA, one text-to-image and (optionally) one decompression sample per
    image, plus plain text sequences. ``codes`` is (B, h, w, D) and ``zhat``
    is (B, h, w, n_agg) from the frozen tokenizer.
    """
    if len(images) != codes.shape[0] or codes.shape[0] != zhat.shape[0]:
        raise UsageError("Images, codes and Ẑ must describe the same batch")
    rng = np.random.default_rng(seed)
    depth = codes.shape[-1]
    corpus: list[LabeledSequence] = []
    for i, spec in enumerate(images.specs):
        code_map = CodeMap(codes[i], mode)
        qmap = QuantizedFeatureMap(zhat[i], mode, depth)
        vqa = make_vqa_sample(spec, qmap, vocab, rng)
        corpus.append(LabeledSequence(SampleKind.VQA, render_sample(vqa, vocab)))
        t2i = make_text_to_image_sample(images.captions[i], code_map, vocab, context)
        corpus.append(LabeledSequence(SampleKind.TEXT_TO_IMAGE, render_sample(t2i, vocab)))
        if include_decompression:
            corpus.append(make_decompression_sample(qmap, code_map, segments, vocab))
    for text in texts or []:
        corpus.append(LabeledSequence(SampleKind.TEXT, make_text_sequence(text, vocab)))
    logger.info(
        "Instruction corpus: %d sequences from %d images (decompression=%s)",
        len(corpus),
        len(images),
        include_decompression,
    )
    return corpus


def text_to_image_prompt(caption: str, vocab: UnifiedVocabulary) -> TokenSequence:
    """The text-to-image layout up to and including IMG_START; the model continues with codes."""
    question, _ = GENERATE_IMAGE.render(caption=caption)
    ids = [
        vocab.special(SpecialToken.BOS),
        vocab.special(SpecialToken.USER),
        *vocab.encode_text(question),
        vocab.special(SpecialToken.GEN_IMAGE),
        vocab.special(SpecialToken.ASSISTANT),
        vocab.special(SpecialToken.IMG_START),
    ]
    seq = TokenSequence(ids=np.array(ids), loss_mask=np.zeros(len(ids), dtype=bool))
    vocab.validate(seq)
    return seq
