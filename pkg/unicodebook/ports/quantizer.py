"""Quantizer port: abstract interface for stacked quantization over the shared codebook."""

from abc import ABC, abstractmethod

import numpy as np

from unicodebook.domain.codebook import Codebook
from unicodebook.domain.errors import ShapeMismatchError, UsageError
from unicodebook.domain.models import CodeMap, QuantizedFeatureMap, QuantizerMode


class QuantizerPort(ABC):
    """
    Maps encoder features (..., n_enc) to D codes per cell and back.

    Array-level methods accept any number of leading dimensions so a whole
    batch of feature maps is quantized in one call.
    """

    mode: QuantizerMode

    def __init__(self, depth: int) -> None:
        if depth < 1:
            raise UsageError(f"Quantizer depth must be >= 1, got {depth}")
        self.depth = depth

    def encoder_width(self, dim: int) -> int:
        """Feature width the encoder must emit for codebook dimension ``dim``."""
        return dim

    def aggregate_width(self, dim: int) -> int:
        return dim

    def _check_features(self, features: np.ndarray, codebook: Codebook) -> None:
        expected = self.encoder_width(codebook.dim)
        if features.shape[-1] != expected:
            raise ShapeMismatchError(
                f"{self.mode.value} encode (D={self.depth}, n={codebook.dim})",
                features.shape,
                (expected,),
            )

    @abstractmethod
    def encode_codes(self, features: np.ndarray, codebook: Codebook) -> np.ndarray:
        """(..., n_enc) features to (..., D) code indices."""
        ...

    @abstractmethod
    def aggregate_codes(self, codes: np.ndarray, codebook: Codebook) -> np.ndarray:
        """(..., D) code indices to (..., n_agg) aggregated embeddings."""
        ...

    @abstractmethod
    def layer_targets(self, features: np.ndarray, codes: np.ndarray, codebook: Codebook) -> np.ndarray:
        """(..., D, n) vectors that each layer's chosen code was quantizing; EMA input."""
        ...

    def encode_stacked(self, feature_map: np.ndarray, codebook: Codebook) -> CodeMap:
        if feature_map.ndim != 3:
            raise ShapeMismatchError("encode_stacked", feature_map.shape, ("h", "w", "n_enc"))
        if not np.all(np.isfinite(feature_map)):
            raise UsageError("encode_stacked: feature map contains non-finite values")
        return CodeMap(self.encode_codes(feature_map, codebook), self.mode)

    def aggregate(self, code_map: CodeMap, codebook: Codebook) -> QuantizedFeatureMap:
        if code_map.depth != self.depth:
            raise ShapeMismatchError("aggregate depth", (code_map.depth,), (self.depth,))
        code_map.validate_range(codebook.size)
        values = self.aggregate_codes(code_map.indices, codebook)
        return QuantizedFeatureMap(values, self.mode, self.depth)
