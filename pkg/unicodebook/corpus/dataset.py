"""The generated corpus of a run and its dataset-file encoding."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from unicodebook.config import Settings
from unicodebook.corpus.synthetic import BACKGROUNDS, PALETTE, SIZES, ImageSet, caption_of, gen_images, gen_text
from unicodebook.domain.errors import CheckpointError, UsageError
from unicodebook.domain.models import ShapeKind, ShapeSpec
from unicodebook.serialization.container import DATASET_MAGIC, ContainerHeader, decode_container, encode_container

logger = logging.getLogger(__name__)

_KINDS = list(ShapeKind)
_COLORS = list(PALETTE)
_BACKGROUNDS = list(BACKGROUNDS)
_SIZES = list(SIZES)


@dataclass(frozen=True)
class CorpusBundle:
    """Train and held-out images plus the plain-text sentences for the language model."""

    train: ImageSet
    heldout: ImageSet
    texts: tuple[str, ...]
    heldout_texts: tuple[str, ...]
    seed: int

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.train.digest().encode("ascii"))
        h.update(self.heldout.digest().encode("ascii"))
        h.update("\n".join(self.texts).encode("utf-8"))
        h.update("\n".join(self.heldout_texts).encode("utf-8"))
        return h.hexdigest()[:16]


def prepare_corpus(settings: Settings) -> CorpusBundle:
    """Every split is drawn from its own stream derived from ``settings.seed``."""
    seed = settings.seed
    bundle = CorpusBundle(
        train=gen_images(seed, settings.train_images, settings.resolution),
        heldout=gen_images(seed + 10_000, settings.heldout_images, settings.resolution),
        texts=tuple(gen_text(seed + 20_000, settings.text_samples)),
        heldout_texts=tuple(gen_text(seed + 30_000, settings.heldout_text_samples)),
        seed=seed,
    )
    logger.info(
        "Corpus ready: %d train / %d held-out images, %d / %d sentences (digest %s)",
        len(bundle.train),
        len(bundle.heldout),
        len(bundle.texts),
        len(bundle.heldout_texts),
        bundle.digest(),
    )
    return bundle


# ── Dataset file ──────────────────────────────────────────────────


def _spec_rows(specs: tuple[ShapeSpec, ...]) -> np.ndarray:
    rows = [
        (
            _KINDS.index(s.kind),
            _COLORS.index(s.color_name),
            _BACKGROUNDS.index(s.background_name),
            _SIZES.index(s.size_name),
            s.center[0],
            s.center[1],
        )
        for s in specs
    ]
    return np.array(rows, dtype=np.float64).reshape(len(specs), 6)


def _specs_from_rows(rows: np.ndarray) -> tuple[ShapeSpec, ...]:
    specs = []
    for kind, color, background, size, cx, cy in rows:
        color_name = _COLORS[int(color)]
        background_name = _BACKGROUNDS[int(background)]
        size_name = _SIZES[int(size)]
        specs.append(
            ShapeSpec(
                kind=_KINDS[int(kind)],
                color_name=color_name,
                color=PALETTE[color_name],
                background_name=background_name,
                background=BACKGROUNDS[background_name],
                size_name=size_name,
                center=(float(cx), float(cy)),
                half_extent=SIZES[size_name],
            )
        )
    return tuple(specs)


def _lines(lines: tuple[str, ...]) -> np.ndarray:
    return np.frombuffer("\n".join(lines).encode("utf-8"), dtype=np.uint8)


def _unlines(payload: np.ndarray, count: int) -> tuple[str, ...]:
    if count == 0:
        return ()
    return tuple(payload.tobytes().decode("utf-8").split("\n"))


def encode_dataset(bundle: CorpusBundle, settings: Settings) -> bytes:
    segments: dict[str, np.ndarray] = {}
    for split, images in (("train", bundle.train), ("heldout", bundle.heldout)):
        segments[f"{split}.images"] = images.images
        segments[f"{split}.specs"] = _spec_rows(images.specs)
    segments["texts"] = _lines(bundle.texts)
    segments["heldout_texts"] = _lines(bundle.heldout_texts)
    header = ContainerHeader(
        kind="dataset",
        config_digest=bundle.digest(),
        seed=bundle.seed,
        meta={
            "resolution": settings.resolution,
            "train_images": len(bundle.train),
            "heldout_images": len(bundle.heldout),
            "texts": len(bundle.texts),
            "heldout_texts": len(bundle.heldout_texts),
        },
    )
    return encode_container(DATASET_MAGIC, header, segments)


def decode_dataset(data: bytes) -> CorpusBundle:
    """Rebuild a bundle; captions are re-derived from the stored shape specs."""
    header, segments = decode_container(data, DATASET_MAGIC)
    try:
        splits = {}
        for split in ("train", "heldout"):
            specs = _specs_from_rows(segments[f"{split}.specs"])
            splits[split] = ImageSet(segments[f"{split}.images"], specs, tuple(caption_of(s) for s in specs))
        bundle = CorpusBundle(
            train=splits["train"],
            heldout=splits["heldout"],
            texts=_unlines(segments["texts"], header.meta.get("texts", 0)),
            heldout_texts=_unlines(segments["heldout_texts"], header.meta.get("heldout_texts", 0)),
            seed=header.seed,
        )
    except (KeyError, IndexError, ValueError, UsageError) as exc:
        raise CheckpointError(f"Malformed dataset file: {exc}") from exc
    if bundle.digest() != header.config_digest:
        raise CheckpointError(f"Dataset digest {bundle.digest()} does not match its header {header.config_digest}")
    return bundle
