"""
Deterministic synthetic scenes: one flat-colored shape on a flat background.

Shapes live in normalized canvas coordinates, so the same seed renders the
same scenes at any resolution.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from unicodebook.domain.errors import UsageError
from unicodebook.domain.models import ShapeKind, ShapeSpec
from unicodebook.prompts.templates import STATEMENT, render_caption

logger = logging.getLogger(__name__)

PALETTE: dict[str, tuple[float, float, float]] = {
    "red": (0.9, 0.1, 0.1),
    "green": (0.1, 0.8, 0.2),
    "blue": (0.15, 0.25, 0.95),
    "yellow": (0.95, 0.9, 0.1),
    "cyan": (0.1, 0.85, 0.9),
    "magenta": (0.85, 0.15, 0.8),
    "white": (1.0, 1.0, 1.0),
    "black": (0.0, 0.0, 0.0),
}

BACKGROUNDS: dict[str, tuple[float, float, float]] = {
    "black": (0.0, 0.0, 0.0),
    "white": (1.0, 1.0, 1.0),
    "gray": (0.5, 0.5, 0.5),
    "navy": (0.05, 0.05, 0.35),
    "brown": (0.45, 0.3, 0.15),
}

SIZES: dict[str, float] = {"small": 0.2, "large": 0.36}

SHAPE_WORDS: dict[ShapeKind, str] = {
    ShapeKind.RECTANGLE: "square",
    ShapeKind.DISK: "disk",
    ShapeKind.STRIPES: "striped square",
}


@dataclass(frozen=True)
class ImageSet:
    images: np.ndarray
    specs: tuple[ShapeSpec, ...]
    captions: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.specs)

    def digest(self) -> str:
        h = hashlib.sha256(np.ascontiguousarray(self.images, dtype="<f8").tobytes())
        h.update("\n".join(self.captions).encode("utf-8"))
        return h.hexdigest()[:16]


def caption_of(spec: ShapeSpec) -> str:
    return render_caption(spec.size_name, spec.color_name, SHAPE_WORDS[spec.kind], spec.background_name)


def all_captions() -> list[str]:
    """Every caption the grammar can produce."""
    out = []
    for size in SIZES:
        for color in PALETTE:
            for kind in ShapeKind:
                for background in BACKGROUNDS:
                    if color != background:
                        out.append(render_caption(size, color, SHAPE_WORDS[kind], background))
    return out


def sample_spec(rng: np.random.Generator) -> ShapeSpec:
    kind = list(ShapeKind)[int(rng.integers(len(ShapeKind)))]
    color_name = list(PALETTE)[int(rng.integers(len(PALETTE)))]
    choices = [b for b in BACKGROUNDS if b != color_name]
    background_name = choices[int(rng.integers(len(choices)))]
    size_name = list(SIZES)[int(rng.integers(len(SIZES)))]
    half = SIZES[size_name]
    center = (float(rng.uniform(half, 1 - half)), float(rng.uniform(half, 1 - half)))
    return ShapeSpec(
        kind=kind,
        color_name=color_name,
        color=PALETTE[color_name],
        background_name=background_name,
        background=BACKGROUNDS[background_name],
        size_name=size_name,
        center=center,
        half_extent=half,
    )


def render(spec: ShapeSpec, resolution: int) -> np.ndarray:
    """Rasterize at pixel centers into an H × W × 3 array."""
    coords = (np.arange(resolution) + 0.5) / resolution
    y, x = np.meshgrid(coords, coords, indexing="ij")
    cx, cy = spec.center
    he = spec.half_extent
    in_box = (np.abs(x - cx) <= he) & (np.abs(y - cy) <= he)
    if spec.kind is ShapeKind.DISK:
        mask = (x - cx) ** 2 + (y - cy) ** 2 <= he**2
    elif spec.kind is ShapeKind.STRIPES:
        band = np.floor((y - (cy - he)) / (he / 2)).astype(np.int64)
        mask = in_box & (band % 2 == 0)
    else:
        mask = in_box
    image = np.empty((resolution, resolution, 3))
    image[...] = spec.background
    image[mask] = spec.color
    return image


def gen_images(seed: int, count: int, resolution: int) -> ImageSet:
    """``count`` scenes with captions; a pure function of (seed, count, resolution)."""
    if resolution < 1:
        raise UsageError(f"Resolution must be positive, got {resolution}")
    rng = np.random.default_rng(seed)
    specs = tuple(sample_spec(rng) for _ in range(count))
    images = np.stack([render(s, resolution) for s in specs]) if specs else np.zeros((0, resolution, resolution, 3))
    captions = tuple(caption_of(s) for s in specs)
    logger.debug("Generated %d images at %dx%d (seed=%d)", count, resolution, resolution, seed)
    return ImageSet(images, specs, captions)


def gen_text(seed: int, count: int) -> list[str]:
    """Caption-grammar sentences for language-model training."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        spec = sample_spec(rng)
        question, _ = STATEMENT.render(
            shape=SHAPE_WORDS[spec.kind],
            size=spec.size_name,
            color=spec.color_name,
            background=spec.background_name,
        )
        out.append(question)
    return out


# ── Resampling ───────────────────────────────────────────────────


def _area_weights(src: int, dst: int) -> np.ndarray:
    """(dst, src) matrix averaging the source pixels each destination pixel covers."""
    scale = src / dst
    weights = np.zeros((dst, src))
    for o in range(dst):
        lo, hi = o * scale, (o + 1) * scale
        for i in range(int(np.floor(lo)), min(int(np.ceil(hi)), src)):
            weights[o, i] = max(0.0, min(hi, i + 1) - max(lo, i))
    return weights / weights.sum(axis=1, keepdims=True)


def _bilinear_weights(src: int, dst: int) -> np.ndarray:
    weights = np.zeros((dst, src))
    pos = np.clip((np.arange(dst) + 0.5) * src / dst - 0.5, 0.0, src - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    frac = pos - lo
    rows = np.arange(dst)
    np.add.at(weights, (rows, lo), 1.0 - frac)
    np.add.at(weights, (rows, hi), frac)
    return weights


def resample(images: np.ndarray, size: int) -> np.ndarray:
    """Resize a (B, H, H, 3) batch: area averaging when shrinking, bilinear when growing."""
    src = images.shape[1]
    if src == size:
        return images.copy()
    weights = _area_weights(src, size) if size < src else _bilinear_weights(src, size)
    return np.einsum("oi,bijc,pj->bopc", weights, images, weights)
