"""
The unified code table and its update rules.

``quantize`` / ``quantize_map`` pick nearest codes, ``ema_update`` moves codes
toward the encoder features assigned to them, and ``sync_update`` moves the
tokenizer's table toward the language model's visual embedding rows.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from unicodebook.domain.errors import ShapeMismatchError, UsageError
from unicodebook.domain.models import UsageStats

logger = logging.getLogger(__name__)


class EmaRule(str, Enum):
    LITERAL = "literal"
    NORMALIZED = "normalized"


@dataclass
class Codebook:
    """
    K × n embedding table.

    With ``pinned_null`` the first row is held at the origin by every update,
    which gives residual quantization a "nothing left to add" choice.
    """

    entries: np.ndarray
    version: int = 0
    pinned_null: bool = False

    def __post_init__(self) -> None:
        self.entries = np.array(self.entries, dtype=np.float64)
        if self.entries.ndim != 2:
            raise ShapeMismatchError("Codebook", self.entries.shape, ("K", "n"))
        if not np.all(np.isfinite(self.entries)):
            raise UsageError("Codebook entries must be finite")
        if self.pinned_null:
            self.entries[0] = 0.0

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    @classmethod
    def random(
        cls, size: int, dim: int, rng: np.random.Generator, scale: float = 1.0, pinned_null: bool = False
    ) -> Codebook:
        return cls(rng.normal(0.0, scale, size=(size, dim)), pinned_null=pinned_null)

    def replaced(self, entries: np.ndarray) -> Codebook:
        """Same K/n, new entries, version advanced."""
        if entries.shape != self.entries.shape:
            raise ShapeMismatchError("Codebook.replaced", self.entries.shape, entries.shape)
        return Codebook(entries, version=self.version + 1, pinned_null=self.pinned_null)

    def snapshot(self) -> Codebook:
        return Codebook(self.entries.copy(), version=self.version, pinned_null=self.pinned_null)

    def checksum(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.entries, dtype="<f8").tobytes()).hexdigest()


@dataclass
class IndicatorMap:
    """K × hw one-hot assignment matrix, stored as the assigned code per column."""

    assignments: np.ndarray
    size: int

    def dense(self) -> np.ndarray:
        out = np.zeros((self.size, self.assignments.size))
        out[self.assignments, np.arange(self.assignments.size)] = 1.0
        return out

    def usage(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.size).astype(np.float64)

    def apply(self, features: np.ndarray) -> np.ndarray:
        """I · Z: per-code sums of the assigned feature rows."""
        if features.shape[0] != self.assignments.size:
            raise ShapeMismatchError("I·Z", (self.size, self.assignments.size), features.shape)
        sums = np.zeros((self.size, features.shape[1]))
        np.add.at(sums, self.assignments, features)
        return sums


@dataclass
class EmaState:
    """Per-code running counts and feature sums for the normalized EMA rule."""

    cluster_size: np.ndarray
    embed_sum: np.ndarray

    @classmethod
    def matching(cls, codebook: Codebook) -> EmaState:
        return cls(np.ones(codebook.size), codebook.entries.copy())

    def rebase(self, codebook: Codebook) -> None:
        """Keep the running counts but make sum / count equal the current entries."""
        self.embed_sum = codebook.entries * self.cluster_size[:, None]


# ── Nearest-code search ──────────────────────────────────────────


def nearest_codes(features: np.ndarray, entries: np.ndarray) -> np.ndarray:
    """
    argmin_k ‖z − e(k)‖² for every row of ``features``, lowest index on ties.

    Candidates are shortlisted with the expanded form ‖e‖² − 2 z·e, then every
    candidate within rounding distance of the row minimum is re-scored with
    the exact squared difference.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != entries.shape[1]:
        raise ShapeMismatchError("quantize", features.shape, entries.shape)
    if features.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)

    e_sq = np.sum(entries * entries, axis=1)
    z_sq = np.sum(features * features, axis=1)
    approx = e_sq[None, :] - 2.0 * features @ entries.T
    row_min = approx.min(axis=1)
    tol = 1e-9 * (z_sq + e_sq.max()) + 1e-12
    rows, cols = np.nonzero(approx <= (row_min + tol)[:, None])

    exact = np.sum((features[rows] - entries[cols]) ** 2, axis=1)
    order = np.lexsort((cols, exact, rows))
    rows, cols = rows[order], cols[order]
    first = np.ones(rows.size, dtype=bool)
    first[1:] = rows[1:] != rows[:-1]
    return cols[first].astype(np.int64)


def quantize(z: np.ndarray, codebook: Codebook) -> int:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] != codebook.dim:
        raise ShapeMismatchError("quantize", z.shape, (codebook.dim,))
    return int(nearest_codes(z[None, :], codebook.entries)[0])


def quantize_map(
    feature_map: np.ndarray, codebook: Codebook
) -> tuple[np.ndarray, IndicatorMap, np.ndarray]:
    """Quantize every cell of an h × w × n map: (index map, indicator map, quantized map)."""
    if feature_map.ndim != 3 or feature_map.shape[2] != codebook.dim:
        raise ShapeMismatchError("quantize_map", feature_map.shape, ("h", "w", codebook.dim))
    if not np.all(np.isfinite(feature_map)):
        raise UsageError("quantize_map: feature map contains non-finite values")
    h, w, n = feature_map.shape
    codes = nearest_codes(feature_map.reshape(h * w, n), codebook.entries)
    indicator = IndicatorMap(codes, codebook.size)
    return codes.reshape(h, w), indicator, codebook.entries[codes].reshape(h, w, n)


# ── Update rules ─────────────────────────────────────────────────


def _check_decay(decay: float) -> None:
    if not 0.0 <= decay <= 1.0:
        raise UsageError(f"Decay must lie in [0, 1], got {decay}")


def ema_update(
    codebook: Codebook,
    features: np.ndarray,
    indicator: IndicatorMap,
    decay: float,
    rule: EmaRule = EmaRule.LITERAL,
    state: EmaState | None = None,
) -> Codebook:
    """
    C' = λC + (1−λ) I·Z.

    ``LITERAL`` applies the formula as written, so unused rows shrink by λ.
    ``NORMALIZED`` keeps per-code EMA counts and sums in ``state`` and sets
    each row to sum / count; rows without assignments keep their value.

    With ``pinned_null`` the result is re-pinned, so row 0 stays at the
    origin whatever was assigned to it and the update above holds for rows
    1..K-1 only.
    """
    _check_decay(decay)
    if indicator.size != codebook.size or features.ndim != 2 or features.shape[1] != codebook.dim:
        raise ShapeMismatchError(
            "ema_update", codebook.entries.shape, features.shape, (indicator.size, indicator.assignments.size)
        )
    sums = indicator.apply(features)

    if rule is EmaRule.LITERAL:
        entries = decay * codebook.entries + (1.0 - decay) * sums
    else:
        if state is None:
            raise UsageError("The normalized EMA rule needs an EmaState")
        state.cluster_size = decay * state.cluster_size + (1.0 - decay) * indicator.usage()
        state.embed_sum = decay * state.embed_sum + (1.0 - decay) * sums
        live = state.cluster_size > 1e-12
        entries = codebook.entries.copy()
        entries[live] = state.embed_sum[live] / state.cluster_size[live, None]
        if codebook.pinned_null:
            state.embed_sum[0] = 0.0

    return codebook.replaced(entries)


def sync_update(codebook: Codebook, lm_codebook: Codebook, decay: float) -> Codebook:
    """C' = λC + (1−λ)C_L, except that a pinned null row stays at the origin."""
    _check_decay(decay)
    if codebook.entries.shape != lm_codebook.entries.shape:
        raise ShapeMismatchError("sync_update", codebook.entries.shape, lm_codebook.entries.shape)
    return codebook.replaced(decay * codebook.entries + (1.0 - decay) * lm_codebook.entries)


def codebook_distance(codebook: Codebook | np.ndarray, lm_codebook: Codebook | np.ndarray) -> float:
    """Frobenius norm ‖C − C_L‖."""
    a = codebook.entries if isinstance(codebook, Codebook) else np.asarray(codebook)
    b = lm_codebook.entries if isinstance(lm_codebook, Codebook) else np.asarray(lm_codebook)
    if a.shape != b.shape:
        raise ShapeMismatchError("codebook_distance", a.shape, b.shape)
    return float(np.linalg.norm(a - b))


# ── Diagnostics ──────────────────────────────────────────────────


def usage_stats(history: np.ndarray | list[int], size: int) -> UsageStats:
    """Counts, utilization (codes used at least once / K) and assignment entropy in bits."""
    codes = np.asarray(history, dtype=np.int64).reshape(-1)
    if codes.size == 0:
        raise UsageError("usage_stats needs a non-empty assignment history")
    counts = np.bincount(codes, minlength=size)
    probs = counts[counts > 0] / codes.size
    entropy = float(-np.sum(probs * np.log2(probs)))
    return UsageStats(counts=counts, utilization=float(np.count_nonzero(counts)) / size, entropy_bits=max(entropy, 0.0))


@dataclass
class UsageWindow:
    """Assignment history over the last ``capacity`` tokenizer steps."""

    size: int
    capacity: int
    _steps: list[np.ndarray] = field(default_factory=list)

    def push(self, codes: np.ndarray) -> None:
        self._steps.append(np.asarray(codes, dtype=np.int64).reshape(-1))
        if len(self._steps) > self.capacity:
            self._steps.pop(0)

    def stats(self) -> UsageStats | None:
        if not self._steps:
            return None
        return usage_stats(np.concatenate(self._steps), self.size)
