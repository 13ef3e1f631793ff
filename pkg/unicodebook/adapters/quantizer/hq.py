"""
Slice-based hierarchical quantization: the encoder emits n·D features per
cell, layer d quantizes the d-th n-wide slice, and aggregation concatenates
the chosen codes. This stands in for a pyramid HQ; each layer sees the whole
cell, not a coarser or finer spatial level.
"""

import numpy as np

from unicodebook.domain.codebook import Codebook, nearest_codes
from unicodebook.domain.models import QuantizerMode
from unicodebook.ports.quantizer import QuantizerPort


class HierarchicalQuantizer(QuantizerPort):
    mode = QuantizerMode.HQ

    def encoder_width(self, dim: int) -> int:
        return dim * self.depth

    def aggregate_width(self, dim: int) -> int:
        return dim * self.depth

    def _slices(self, features: np.ndarray, dim: int) -> np.ndarray:
        return features.reshape(*features.shape[:-1], self.depth, dim)

    def encode_codes(self, features: np.ndarray, codebook: Codebook) -> np.ndarray:
        self._check_features(features, codebook)
        slices = self._slices(features, codebook.dim)
        codes = nearest_codes(slices.reshape(-1, codebook.dim), codebook.entries)
        return codes.reshape(*features.shape[:-1], self.depth)

    def aggregate_codes(self, codes: np.ndarray, codebook: Codebook) -> np.ndarray:
        stacked = codebook.entries[codes]
        return stacked.reshape(*codes.shape[:-1], codes.shape[-1] * codebook.dim)

    def layer_targets(self, features: np.ndarray, codes: np.ndarray, codebook: Codebook) -> np.ndarray:
        return self._slices(features, codebook.dim)
