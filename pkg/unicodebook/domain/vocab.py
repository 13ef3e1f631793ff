"""Unified vocabulary: byte-level text ids, then one id per code, then special tokens."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from unicodebook.domain.errors import UsageError
from unicodebook.domain.models import TokenSequence

TEXT_VOCAB_SIZE = 256


class SpecialToken(str, Enum):
    PAD = "<pad>"
    BOS = "<bos>"
    EOS = "<eos>"
    IMG_START = "<img>"
    IMG_END = "</img>"
    USER = "<user>"
    ASSISTANT = "<assistant>"
    GEN_IMAGE = "<gen-image>"
    EMBED = "<embed>"


_SPECIALS = tuple(SpecialToken)


@dataclass(frozen=True)
class UnifiedVocabulary:
    codebook_size: int
    text_size: int = TEXT_VOCAB_SIZE

    @property
    def visual_offset(self) -> int:
        return self.text_size

    @property
    def special_offset(self) -> int:
        return self.text_size + self.codebook_size

    @property
    def size(self) -> int:
        return self.special_offset + len(_SPECIALS)

    @property
    def visual_slice(self) -> slice:
        return slice(self.visual_offset, self.special_offset)

    def special(self, token: SpecialToken) -> int:
        return self.special_offset + _SPECIALS.index(token)

    def visual_id(self, code: int) -> int:
        if not 0 <= code < self.codebook_size:
            raise UsageError(f"Code {code} outside [0, {self.codebook_size})")
        return self.visual_offset + int(code)

    def visual_ids(self, codes: np.ndarray) -> np.ndarray:
        codes = np.asarray(codes, dtype=np.int64)
        if codes.size and (codes.min() < 0 or codes.max() >= self.codebook_size):
            raise UsageError(f"Codes outside [0, {self.codebook_size})")
        return codes + self.visual_offset

    def code_of(self, token_id: int) -> int:
        if not self.is_visual(token_id):
            raise UsageError(f"Token id {token_id} is not a visual token")
        return int(token_id) - self.visual_offset

    def is_visual(self, token_id: int) -> bool:
        return self.visual_offset <= token_id < self.special_offset

    def is_text(self, token_id: int) -> bool:
        return 0 <= token_id < self.text_size

    def encode_text(self, text: str) -> list[int]:
        return list(text.encode("utf-8"))

    def decode_text(self, ids: list[int] | np.ndarray) -> str:
        return bytes(int(i) for i in ids if self.is_text(int(i))).decode("utf-8", errors="replace")

    def validate(self, seq: TokenSequence) -> None:
        if len(seq) and (seq.ids.min() < 0 or seq.ids.max() >= self.size):
            raise UsageError(f"Sequence ids outside [0, {self.size})")
