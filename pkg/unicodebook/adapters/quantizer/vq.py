"""Single-layer vector quantization."""

import numpy as np

from unicodebook.domain.codebook import Codebook, nearest_codes
from unicodebook.domain.errors import UsageError
from unicodebook.domain.models import QuantizerMode
from unicodebook.ports.quantizer import QuantizerPort


class VectorQuantizer(QuantizerPort):
    mode = QuantizerMode.VQ

    def __init__(self, depth: int = 1) -> None:
        if depth != 1:
            raise UsageError(f"VQ uses exactly one layer, got depth={depth}")
        super().__init__(depth)

    def encode_codes(self, features: np.ndarray, codebook: Codebook) -> np.ndarray:
        self._check_features(features, codebook)
        lead = features.shape[:-1]
        codes = nearest_codes(features.reshape(-1, codebook.dim), codebook.entries)
        return codes.reshape(*lead, 1)

    def aggregate_codes(self, codes: np.ndarray, codebook: Codebook) -> np.ndarray:
        return codebook.entries[codes[..., 0]]

    def layer_targets(self, features: np.ndarray, codes: np.ndarray, codebook: Codebook) -> np.ndarray:
        return features[..., None, :]
