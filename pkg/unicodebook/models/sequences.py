"""Token-sequence layouts, batch collation and the answer-masked NLL objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from unicodebook.domain.errors import EmptyMaskError, ShapeMismatchError, UsageError
from unicodebook.domain.models import CodeMap, InstructionSample, QuantizedFeatureMap, TokenSequence
from unicodebook.domain.vocab import SpecialToken, UnifiedVocabulary
from unicodebook.numerics import functional as F
from unicodebook.numerics.tensor import Tensor


def empty_sequence(vocab: UnifiedVocabulary, width: int = 0) -> TokenSequence:
    return TokenSequence(
        ids=np.array([vocab.special(SpecialToken.BOS)]),
        loss_mask=np.zeros(1, dtype=bool),
        prefix_embeddings=np.zeros((0, width)),
    )


def append_image(seq: TokenSequence, embeddings: np.ndarray, vocab: UnifiedVocabulary) -> TokenSequence:
    """Append IMG_START, one EMBED slot per row of ``embeddings``, IMG_END."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    start = len(seq) + 1
    slots = [vocab.special(SpecialToken.EMBED)] * embeddings.shape[0]
    ids = [vocab.special(SpecialToken.IMG_START), *slots, vocab.special(SpecialToken.IMG_END)]
    prefix = seq.prefix_embeddings
    if prefix.shape[0] == 0:
        prefix = np.zeros((0, embeddings.shape[1]))
    elif prefix.shape[1] != embeddings.shape[1]:
        raise ShapeMismatchError("append_image", prefix.shape, embeddings.shape)
    extended = seq.extend(ids, supervised=False)
    return TokenSequence(
        ids=extended.ids,
        loss_mask=extended.loss_mask,
        prefix_positions=np.concatenate([seq.prefix_positions, np.arange(start, start + embeddings.shape[0])]),
        prefix_embeddings=np.concatenate([prefix, embeddings]),
    )


def render_sample(sample: InstructionSample, vocab: UnifiedVocabulary) -> TokenSequence:
    """
    BOS, then per round: USER [IMG_START EMBED… IMG_END] question ASSISTANT answer.

    Only answer tokens are supervised.
    """
    width = next((r.embeddings.shape[1] for r in sample.rounds if r.embeddings is not None), 0)
    seq = empty_sequence(vocab, width)
    for rnd in sample.rounds:
        seq = seq.extend([vocab.special(SpecialToken.USER)], supervised=False)
        if rnd.embeddings is not None:
            seq = append_image(seq, rnd.embeddings, vocab)
        seq = seq.extend([*rnd.question, vocab.special(SpecialToken.ASSISTANT)], supervised=False)
        seq = seq.extend(list(rnd.answer), supervised=True)
    vocab.validate(seq)
    return seq


# ── Image decompression ──────────────────────────────────────────


def _segment_cells(cells: int, segments: int) -> int:
    if segments < 1 or cells % segments:
        raise UsageError(f"Segment count {segments} must divide the {cells} cells of the code map")
    return cells // segments


def decompression_segment(
    seq: TokenSequence, embeddings: np.ndarray, vocab: UnifiedVocabulary
) -> TokenSequence:
    """Open one decompression turn: USER, the image slots, ASSISTANT. Codes follow."""
    seq = seq.extend([vocab.special(SpecialToken.USER)], supervised=False)
    seq = append_image(seq, embeddings, vocab)
    return seq.extend([vocab.special(SpecialToken.ASSISTANT)], supervised=False)


def decompression_length(cells: int, depth: int, segments: int) -> int:
    """Tokens the model reads while decompressing: every id except the last emitted code."""
    # BOS + per segment (USER IMG_START slots IMG_END ASSISTANT codes) - final code
    return 4 * segments + cells * (1 + depth)


def build_decompression_sample(
    zhat: QuantizedFeatureMap, code_map: CodeMap, segments: int, vocab: UnifiedVocabulary
) -> TokenSequence:
    """
    Injected Ẑ rows followed by the flattened code map as supervised targets.

    With ``segments`` > 1 the cells are cut into raster-order pieces and each
    piece's embeddings are followed by that piece's codes, so piece t sees
    only embeddings and codes of pieces ≤ t.
    """
    if (zhat.values.shape[0], zhat.values.shape[1]) != (code_map.height, code_map.width):
        raise ShapeMismatchError("build_decompression_sample", zhat.values.shape, code_map.indices.shape)
    cells = code_map.height * code_map.width
    per = _segment_cells(cells, segments)
    flat_z = zhat.flat()
    flat_codes = code_map.indices.reshape(cells, code_map.depth)

    seq = empty_sequence(vocab, zhat.width)
    for t in range(segments):
        seq = decompression_segment(seq, flat_z[t * per : (t + 1) * per], vocab)
        targets = vocab.visual_ids(flat_codes[t * per : (t + 1) * per].reshape(-1))
        seq = seq.extend(targets.tolist(), supervised=True)
    vocab.validate(seq)
    return seq


def decompression_targets(seq: TokenSequence, vocab: UnifiedVocabulary) -> np.ndarray:
    """Recover the flattened code map from a decompression sample's supervised tokens."""
    return np.array([vocab.code_of(int(i)) for i in seq.ids[seq.loss_mask]], dtype=np.int64)


# ── Batching and loss ────────────────────────────────────────────


@dataclass(frozen=True)
class Batch:
    """
    Right-padded ids (B, T) with next-token targets and weights.

    ``targets[b, t]`` is ``ids[b, t + 1]``; ``weights[b, t]`` is the loss mask
    of that next token, so logits at t are scored only where t + 1 is supervised.
    """

    ids: np.ndarray
    targets: np.ndarray
    weights: np.ndarray
    prefix_index: np.ndarray
    prefix_values: np.ndarray

    @property
    def supervised(self) -> int:
        return int(self.weights.sum())


def collate(seqs: list[TokenSequence], vocab: UnifiedVocabulary) -> Batch:
    if not seqs:
        raise UsageError("Cannot collate an empty batch")
    pad = vocab.special(SpecialToken.PAD)
    length = max(len(s) for s in seqs)
    ids = np.full((len(seqs), length), pad, dtype=np.int64)
    targets = np.full((len(seqs), length), pad, dtype=np.int64)
    weights = np.zeros((len(seqs), length))
    index, values = [], []
    for b, seq in enumerate(seqs):
        n = len(seq)
        ids[b, :n] = seq.ids
        targets[b, : n - 1] = seq.ids[1:]
        weights[b, : n - 1] = seq.loss_mask[1:]
        if seq.prefix_positions.size:
            index.append(b * length + seq.prefix_positions)
            values.append(seq.prefix_embeddings)
    prefix_index = np.concatenate(index) if index else np.zeros(0, dtype=np.int64)
    prefix_values = np.concatenate(values) if values else np.zeros((0, 0))
    return Batch(ids, targets, weights, prefix_index, prefix_values)


def nll_loss(logits: Tensor, batch: Batch) -> Tensor:
    """Mean −log p(target) over supervised positions only."""
    if batch.supervised == 0:
        raise EmptyMaskError("nll_loss: the loss mask has no supervised position")
    b, t, v = logits.shape
    return F.cross_entropy(
        F.reshape(logits, (b * t, v)), batch.targets.reshape(-1), batch.weights.reshape(-1)
    )
