"""Quantizer adapters, selected by ``Settings.quantizer_mode``."""

from unicodebook.adapters.quantizer.hq import HierarchicalQuantizer
from unicodebook.adapters.quantizer.rq import ResidualQuantizer, residual_error
from unicodebook.adapters.quantizer.vq import VectorQuantizer
from unicodebook.domain.models import QuantizerMode
from unicodebook.ports.quantizer import QuantizerPort

_ADAPTERS: dict[QuantizerMode, type[QuantizerPort]] = {
    QuantizerMode.VQ: VectorQuantizer,
    QuantizerMode.RQ: ResidualQuantizer,
    QuantizerMode.HQ: HierarchicalQuantizer,
}


def build_quantizer(mode: QuantizerMode, depth: int) -> QuantizerPort:
    return _ADAPTERS[QuantizerMode(mode)](depth)


__all__ = [
    "HierarchicalQuantizer",
    "ResidualQuantizer",
    "VectorQuantizer",
    "build_quantizer",
    "residual_error",
]
