"""Patch-MLP visual encoder/decoder and the straight-through tokenizer objective."""

from __future__ import annotations

import numpy as np

from unicodebook.domain.errors import ShapeMismatchError, UsageError
from unicodebook.numerics import functional as F
from unicodebook.numerics.layers import Linear, Module
from unicodebook.numerics.tensor import Tensor, as_tensor

CHANNELS = 3


def check_images(images: np.ndarray, patch: int) -> np.ndarray:
    """Validate a (B, H, W, 3) batch and clamp it to [0, 1]."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    if images.ndim != 4 or images.shape[-1] != CHANNELS:
        raise ShapeMismatchError("image batch", images.shape, ("B", "H", "W", CHANNELS))
    if images.shape[1] % patch or images.shape[2] % patch:
        raise UsageError(
            f"Image size {images.shape[1]}x{images.shape[2]} is not divisible by patch {patch}"
        )
    return np.clip(images, 0.0, 1.0)


class PatchEncoder(Module):
    """(B, H, W, 3) → (B, H/p, W/p, out_width) via patchify, Linear, GELU, Linear."""

    def __init__(
        self, patch: int, out_width: int, hidden: int, rng: np.random.Generator, out_scale: float = 1.0
    ) -> None:
        self.patch = patch
        self.fc_in = Linear(patch * patch * CHANNELS, hidden, rng)
        # Output rows start near the scale of the code table.
        self.fc_out = Linear(hidden, out_width, rng, std=out_scale / np.sqrt(hidden * out_width))

    def forward(self, images: Tensor) -> Tensor:
        x = F.patchify(images, self.patch)
        return self.fc_out(F.gelu(self.fc_in(x)))


class PatchDecoder(Module):
    """Mirror of :class:`PatchEncoder`, squashed into [0, 1] by a sigmoid."""

    def __init__(self, patch: int, in_width: int, hidden: int, rng: np.random.Generator) -> None:
        self.patch = patch
        self.in_width = in_width
        self.fc_in = Linear(in_width, hidden, rng)
        self.fc_out = Linear(hidden, patch * patch * CHANNELS, rng)

    def forward(self, features: Tensor) -> Tensor:
        if features.ndim != 4 or features.shape[-1] != self.in_width:
            raise ShapeMismatchError("decode", features.shape, ("B", "h", "w", self.in_width))
        x = F.sigmoid(self.fc_out(F.gelu(self.fc_in(features))))
        return F.unpatchify(x, self.patch, CHANNELS)


class Autoencoder(Module):
    def __init__(
        self,
        patch: int,
        encoder_width: int,
        decoder_width: int,
        hidden: int,
        rng: np.random.Generator,
        out_scale: float = 1.0,
    ) -> None:
        self.patch = patch
        self.encoder = PatchEncoder(patch, encoder_width, hidden, rng, out_scale=out_scale)
        self.decoder = PatchDecoder(patch, decoder_width, hidden, rng)

    def encode(self, images: np.ndarray | Tensor) -> Tensor:
        if isinstance(images, Tensor):
            return self.encoder(images)
        return self.encoder(Tensor(check_images(images, self.patch)))

    def decode(self, features: np.ndarray | Tensor) -> Tensor:
        features = as_tensor(features)
        if features.ndim == 3:
            features = F.reshape(features, (1, *features.shape))
        return self.decoder(features)

    def forward(self, images: np.ndarray) -> Tensor:
        return self.decode(self.encode(images))


def straight_through(z0: Tensor, zhat: np.ndarray) -> Tensor:
    """Forward value ``zhat``; backward passes the gradient to ``z0`` unchanged."""
    if z0.shape != zhat.shape:
        raise ShapeMismatchError("straight_through", z0.shape, zhat.shape)
    return z0 + Tensor(zhat - z0.data)


def tokenizer_loss(
    model: Autoencoder, images: np.ndarray, z0: Tensor, zhat: np.ndarray, beta: float
) -> tuple[Tensor, Tensor, Tensor]:
    """
    Reconstruction MSE through the straight-through estimator plus
    ``beta`` times the commitment term mse(z0, stopgrad(zhat)).

    Returns (loss, reconstruction term, reconstruction).
    """
    recon = model.decode(straight_through(z0, zhat))
    recon_loss = F.mse(recon, Tensor(images))
    if beta == 0.0:
        return recon_loss, recon_loss, recon
    commit = F.mse(z0, Tensor(zhat))
    return recon_loss + commit * beta, recon_loss, recon
