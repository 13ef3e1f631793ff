"""
Residual quantization: layer d quantizes what the previous layers left over,
and the cell embedding is the cumulative sum of the chosen codes.
"""

import numpy as np

from unicodebook.domain.codebook import Codebook, nearest_codes
from unicodebook.domain.errors import ShapeMismatchError, UsageError
from unicodebook.domain.models import CodeMap, QuantizerMode
from unicodebook.ports.quantizer import QuantizerPort


class ResidualQuantizer(QuantizerPort):
    mode = QuantizerMode.RQ

    def _residuals(self, features: np.ndarray, codebook: Codebook) -> tuple[np.ndarray, np.ndarray]:
        """Codes (N, D) and the residual each layer quantized (N, D, n)."""
        flat = features.reshape(-1, codebook.dim)
        codes = np.empty((flat.shape[0], self.depth), dtype=np.int64)
        targets = np.empty((flat.shape[0], self.depth, codebook.dim))
        residual = flat.copy()
        for d in range(self.depth):
            targets[:, d] = residual
            codes[:, d] = nearest_codes(residual, codebook.entries)
            residual = residual - codebook.entries[codes[:, d]]
        return codes, targets

    def encode_codes(self, features: np.ndarray, codebook: Codebook) -> np.ndarray:
        self._check_features(features, codebook)
        codes, _ = self._residuals(features, codebook)
        return codes.reshape(*features.shape[:-1], self.depth)

    def aggregate_codes(self, codes: np.ndarray, codebook: Codebook) -> np.ndarray:
        out = np.zeros(codes.shape[:-1] + (codebook.dim,))
        for d in range(codes.shape[-1]):
            out = out + codebook.entries[codes[..., d]]
        return out

    def layer_targets(self, features: np.ndarray, codes: np.ndarray, codebook: Codebook) -> np.ndarray:
        flat_codes = codes.reshape(-1, self.depth)
        flat = features.reshape(-1, codebook.dim)
        targets = np.empty((flat.shape[0], self.depth, codebook.dim))
        residual = flat.copy()
        for d in range(self.depth):
            targets[:, d] = residual
            residual = residual - codebook.entries[flat_codes[:, d]]
        return targets.reshape(*features.shape[:-1], self.depth, codebook.dim)


def residual_error(feature_map: np.ndarray, code_map: CodeMap, codebook: Codebook) -> list[float]:
    """‖r_d‖² summed over cells after each layer d = 1..D."""
    if code_map.mode is not QuantizerMode.RQ:
        raise UsageError(f"residual_error is defined for RQ code maps, got {code_map.mode.value}")
    if feature_map.shape[:2] != code_map.indices.shape[:2] or feature_map.shape[2] != codebook.dim:
        raise ShapeMismatchError("residual_error", feature_map.shape, code_map.indices.shape)
    code_map.validate_range(codebook.size)
    residual = feature_map.reshape(-1, codebook.dim).astype(np.float64)
    codes = code_map.indices.reshape(-1, code_map.depth)
    errors = []
    for d in range(code_map.depth):
        residual = residual - codebook.entries[codes[:, d]]
        errors.append(float(np.sum(residual * residual)))
    return errors
