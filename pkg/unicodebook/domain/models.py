"""Domain value types shared by the tokenizer, the language model and the trainers."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from pydantic import BaseModel, Field

from unicodebook.domain.errors import ShapeMismatchError, UsageError


class QuantizerMode(str, Enum):
    VQ = "vq"
    RQ = "rq"
    HQ = "hq"


class Paradigm(str, Enum):
    FROZEN = "frozen"
    DUAL = "dual"
    ITERATIVE = "iterative"


class SampleKind(str, Enum):
    TEXT = "text"
    VQA = "vqa"
    TEXT_TO_IMAGE = "text-to-image"
    DECOMPRESSION = "decompression"


class ShapeKind(str, Enum):
    RECTANGLE = "rectangle"
    DISK = "disk"
    STRIPES = "stripes"


# ── Visual tokens ────────────────────────────────────────────────


@dataclass(frozen=True)
class CodeMap:
    """ĥ × ŵ × D grid of code indices; flattened with d fastest, then row-major cells."""

    indices: np.ndarray
    mode: QuantizerMode

    def __post_init__(self) -> None:
        if self.indices.ndim != 3:
            raise ShapeMismatchError("CodeMap", self.indices.shape, ("h", "w", "D"))
        if self.depth < 1:
            raise UsageError("CodeMap depth must be >= 1")
        if self.mode is QuantizerMode.VQ and self.depth != 1:
            raise UsageError(f"VQ code maps have depth 1, got {self.depth}")
        if self.indices.size and self.indices.min() < 0:
            raise UsageError("CodeMap indices must be non-negative")

    @property
    def height(self) -> int:
        return self.indices.shape[0]

    @property
    def width(self) -> int:
        return self.indices.shape[1]

    @property
    def depth(self) -> int:
        return self.indices.shape[2]

    def flatten(self) -> np.ndarray:
        return self.indices.reshape(-1).copy()

    @classmethod
    def from_flat(
        cls, codes: np.ndarray, height: int, width: int, depth: int, mode: QuantizerMode
    ) -> CodeMap:
        codes = np.asarray(codes, dtype=np.int64)
        if codes.size != height * width * depth:
            raise ShapeMismatchError("CodeMap.from_flat", codes.shape, (height, width, depth))
        return cls(codes.reshape(height, width, depth), mode)

    def validate_range(self, codebook_size: int) -> None:
        if self.indices.size and self.indices.max() >= codebook_size:
            raise UsageError(
                f"Code index {int(self.indices.max())} out of range for K={codebook_size}"
            )


@dataclass(frozen=True)
class QuantizedFeatureMap:
    """Aggregated per-cell embeddings Ẑ: width n (VQ/RQ) or n·D (HQ)."""

    values: np.ndarray
    mode: QuantizerMode
    depth: int

    @property
    def cells(self) -> int:
        return self.values.shape[0] * self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def flat(self) -> np.ndarray:
        return self.values.reshape(self.cells, self.width)


@dataclass(frozen=True)
class UsageStats:
    counts: np.ndarray
    utilization: float
    entropy_bits: float

    @property
    def perplexity(self) -> float:
        return float(2.0**self.entropy_bits)


# ── Token sequences ──────────────────────────────────────────────


@dataclass
class TokenSequence:
    """
    Vocabulary ids with a per-position supervision mask.

    ``loss_mask[i]`` marks token ``i`` as a prediction target (predicted from
    the logits at ``i - 1``). Positions listed in ``prefix_positions`` take
    their input embedding from the matching row of ``prefix_embeddings``
    instead of the token table.
    """

    ids: np.ndarray
    loss_mask: np.ndarray
    prefix_positions: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    prefix_embeddings: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self) -> None:
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.loss_mask = np.asarray(self.loss_mask, dtype=bool)
        self.prefix_positions = np.asarray(self.prefix_positions, dtype=np.int64)
        if self.ids.shape != self.loss_mask.shape:
            raise ShapeMismatchError("TokenSequence", self.ids.shape, self.loss_mask.shape)
        if self.prefix_positions.size != self.prefix_embeddings.shape[0]:
            raise ShapeMismatchError(
                "TokenSequence prefix", self.prefix_positions.shape, self.prefix_embeddings.shape
            )
        if self.prefix_positions.size and self.prefix_positions.max() >= len(self.ids):
            raise UsageError("prefix position beyond sequence end")

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    @property
    def supervised(self) -> int:
        return int(self.loss_mask.sum())

    def extend(self, ids: list[int], supervised: bool) -> TokenSequence:
        return TokenSequence(
            ids=np.concatenate([self.ids, np.asarray(ids, dtype=np.int64)]),
            loss_mask=np.concatenate([self.loss_mask, np.full(len(ids), supervised)]),
            prefix_positions=self.prefix_positions,
            prefix_embeddings=self.prefix_embeddings,
        )


@dataclass(frozen=True)
class DialogueRound:
    """One question/answer turn. ``embeddings`` are injected inside the question."""

    question: tuple[int, ...]
    answer: tuple[int, ...]
    embeddings: np.ndarray | None = None


@dataclass(frozen=True)
class InstructionSample:
    rounds: tuple[DialogueRound, ...]
    kind: SampleKind

    def __post_init__(self) -> None:
        if not self.rounds:
            raise UsageError("An instruction sample needs at least one round")
        if any(len(r.answer) == 0 for r in self.rounds):
            raise UsageError("Instruction answers must be non-empty")


@dataclass(frozen=True)
class LabeledSequence:
    """A rendered training sequence tagged with the sample kind it came from."""

    kind: SampleKind
    sequence: TokenSequence


# ── Synthetic imagery ────────────────────────────────────────────


@dataclass(frozen=True)
class ShapeSpec:
    """A single shape in normalized canvas coordinates, so it renders at any resolution."""

    kind: ShapeKind
    color_name: str
    color: tuple[float, float, float]
    background_name: str
    background: tuple[float, float, float]
    size_name: str
    center: tuple[float, float]
    half_extent: float

    def __post_init__(self) -> None:
        cx, cy = self.center
        if not (self.half_extent <= cx <= 1 - self.half_extent and self.half_extent <= cy <= 1 - self.half_extent):
            raise UsageError("Shape must lie fully inside the canvas")
        if not all(0.0 <= c <= 1.0 for c in (*self.color, *self.background)):
            raise UsageError("Colors must lie in [0, 1]")


# ── Metrics ──────────────────────────────────────────────────────


@dataclass(frozen=True)
class MetricsRow:
    step: int
    phase: str
    mse: float
    lm_loss: float
    codebook_distance: float
    utilization: float

    HEADER = ("step", "phase", "mse", "lm_loss", "codebook_distance", "utilization")

    def as_row(self) -> list[str]:
        return [
            str(self.step),
            self.phase,
            repr(self.mse),
            repr(self.lm_loss),
            repr(self.codebook_distance),
            repr(self.utilization),
        ]


@dataclass
class StageMetrics:
    rows: list[MetricsRow] = field(default_factory=list)
    initial: MetricsRow | None = None
    final: MetricsRow | None = None
    cl_external_drift: float = 0.0
    wall_clock: float = 0.0

    def series(self, column: str) -> np.ndarray:
        return np.array([getattr(r, column) for r in self.rows], dtype=np.float64)


@dataclass(frozen=True)
class ReconstructionMetrics:
    mse: float
    psnr: float
    utilization: float
    entropy_bits: float
    count: int


# ── Run bookkeeping ──────────────────────────────────────────────


class RunManifest(BaseModel):
    """Written before any training step; never modified afterwards."""

    command: str
    config: dict
    config_digest: str
    seed: int
    build_id: str
    layout: dict[str, str] = Field(default_factory=dict)


class RunSummary(BaseModel):
    paradigm: str
    seed: int
    corpus_digest: str
    final_mse: float
    final_text_loss: float
    final_distance: float
    utilization: float
    cl_external_drift: float
    initial_mse: float
    initial_distance: float
    steps: int


class Stage2Summary(BaseModel):
    seed: int
    corpus_digest: str
    initial_heldout_loss: float | None
    final_heldout_loss: float | None
    steps: int
    tokenizer_checksum: str
