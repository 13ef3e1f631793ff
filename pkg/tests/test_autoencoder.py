"""Patch autoencoder, straight-through objective and the tokenizer service."""

import numpy as np
import pytest

from unicodebook.domain.codebook import UsageWindow
from unicodebook.domain.errors import ShapeMismatchError, UsageError
from unicodebook.models.autoencoder import Autoencoder, check_images, straight_through, tokenizer_loss
from unicodebook.numerics import functional as F
from unicodebook.numerics.gradcheck import check_gradients
from unicodebook.numerics.tensor import Tensor, backward, no_grad
from unicodebook.services.state import TrainingState
from unicodebook.services.tokenizer import TokenizerService, psnr

# ── Model shapes ──────────────────────────────────


@pytest.fixture
def model(rng) -> Autoencoder:
    return Autoencoder(patch=4, encoder_width=6, decoder_width=6, hidden=8, rng=rng)


def test_encode_decode_shapes(model, rng):
    images = rng.uniform(size=(2, 16, 16, 3))
    z0 = model.encode(images)
    assert z0.shape == (2, 4, 4, 6)
    assert model.decode(z0).shape == (2, 16, 16, 3)
    assert model.decode(np.zeros((4, 4, 6))).shape == (1, 16, 16, 3)


def test_zero_feature_map_decodes_to_repeated_patch(model):
    out = model.decode(np.zeros((4, 4, 6))).data[0]
    patch = out[:4, :4]
    for i in range(0, 16, 4):
        for j in range(0, 16, 4):
            np.testing.assert_array_equal(out[i : i + 4, j : j + 4], patch)
    assert np.all((out >= 0.0) & (out <= 1.0))


def test_check_images_validation():
    with pytest.raises(ShapeMismatchError):
        check_images(np.zeros((1, 8, 8, 4)), 4)
    with pytest.raises(UsageError):
        check_images(np.zeros((1, 10, 10, 3)), 4)
    clamped = check_images(np.full((8, 8, 3), 2.0), 4)
    assert clamped.shape == (1, 8, 8, 3)
    assert clamped.max() == 1.0


def test_decoder_rejects_wrong_width(model):
    with pytest.raises(ShapeMismatchError):
        model.decode(np.zeros((1, 4, 4, 5)))


# ── Straight-through ──────────────────────────────


def test_straight_through_forward_value_and_gradient(rng):
    z0 = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    zhat = rng.normal(size=(2, 3))
    out = straight_through(z0, zhat)
    np.testing.assert_allclose(out.data, zhat, atol=1e-15)
    w = rng.normal(size=(2, 3))
    backward((out * Tensor(w)).sum())
    np.testing.assert_array_equal(z0.grad, w)


def test_straight_through_shape_mismatch(rng):
    with pytest.raises(ShapeMismatchError):
        straight_through(Tensor(np.zeros((2, 3)), requires_grad=True), np.zeros((3, 2)))


def test_tokenizer_loss_gradients(model, rng):
    images = rng.uniform(size=(1, 8, 8, 3))
    zhat = rng.normal(size=(1, 2, 2, 6))

    def loss_fn() -> Tensor:
        loss, _, _ = tokenizer_loss(model, images, model.encode(images), zhat, beta=0.25)
        return loss

    # Encoder gradients take the straight-through path, which finite differences cannot see.
    decoder = {k: v for k, v in model.parameters().items() if k.startswith("decoder.")}
    errors = check_gradients(loss_fn, decoder, max_checks=12)
    assert max(errors.values()) < 1e-4


def test_encoder_gradient_is_decoder_gradient_plus_commitment(model, rng):
    images = rng.uniform(size=(1, 8, 8, 3))
    zhat = rng.normal(size=(1, 2, 2, 6))
    with no_grad():
        z0 = Tensor(model.encode(images).data, requires_grad=True)
    loss, _, _ = tokenizer_loss(model, images, z0, zhat, beta=0.25)
    backward(loss)

    decoder_input = Tensor(zhat.copy(), requires_grad=True)
    errors = check_gradients(lambda: F.mse(model.decode(decoder_input), Tensor(images)), {"zhat": decoder_input})
    assert errors["zhat"] < 1e-4
    commitment = 0.25 * 2.0 * (z0.data - zhat) / zhat.size
    np.testing.assert_allclose(z0.grad, decoder_input.grad + commitment, rtol=1e-10, atol=1e-14)


def test_tokenizer_loss_without_commitment(model, rng):
    images = rng.uniform(size=(1, 8, 8, 3))
    z0 = model.encode(images)
    loss, recon_loss, recon = tokenizer_loss(model, images, z0, z0.data.copy(), beta=0.0)
    assert loss is recon_loss
    assert recon_loss.item() == pytest.approx(F.mse(recon, Tensor(images)).item())


# ── Service ───────────────────────────────────────


def test_train_step_never_moves_codebook_by_gradient(make_settings, rng):
    state = TrainingState.initialize(make_settings(ema_enabled=False))
    before = state.codebook.checksum()
    tokenizer = TokenizerService(state)
    for step in range(1, 4):
        tokenizer.train_step(rng.uniform(size=(4, 8, 8, 3)), step)
    assert state.codebook.checksum() == before
    assert state.counters.tokenizer_steps == 3


def test_train_step_with_ema_moves_codebook(state, rng):
    before = state.codebook.checksum()
    TokenizerService(state).train_step(rng.uniform(size=(4, 8, 8, 3)), 1)
    assert state.codebook.checksum() != before
    np.testing.assert_array_equal(state.codebook.entries[0], 0.0)


def test_frozen_tokenizer_keeps_weights(make_settings, rng):
    state = TrainingState.initialize(make_settings(freeze_tokenizer=True, ema_enabled=False))
    before = state.tokenizer_checksum()
    TokenizerService(state).train_step(rng.uniform(size=(4, 8, 8, 3)), 1)
    assert state.tokenizer_checksum() == before
    assert state.counters.tokenizer_steps == 0


def test_tokenize_shapes(state, rng):
    tokens = TokenizerService(state).tokenize(rng.uniform(size=(3, 8, 8, 3)))
    assert tokens.codes.shape == (3, 2, 2, 2)
    assert tokens.zhat.shape == (3, 2, 2, 16)
    assert tokens.code_map(0, state.quantizer.mode).depth == 2


def test_encode_stacked_and_aggregate_round_trip(state, rng):
    tokenizer = TokenizerService(state)
    image = rng.uniform(size=(8, 8, 3))
    code_map = tokenizer.encode_stacked(image)
    np.testing.assert_array_equal(code_map.indices, tokenizer.tokenize(image[None]).codes[0])
    assert tokenizer.aggregate(code_map).values.shape == (2, 2, 16)


def test_usage_window_tracks_training_steps(state, rng):
    window = UsageWindow(state.settings.codebook_size, capacity=2)
    tokenizer = TokenizerService(state, usage_window=window)
    tokenizer.train_step(rng.uniform(size=(4, 8, 8, 3)), 1)
    stats = window.stats()
    assert stats is not None
    assert int(stats.counts.sum()) == 4 * 2 * 2 * 2


def test_reconstruct_eval_is_deterministic(state, bundle):
    tokenizer = TokenizerService(state, update_codebook=False)
    first = tokenizer.reconstruct_eval(bundle.heldout.images)
    second = tokenizer.reconstruct_eval(bundle.heldout.images)
    assert first == second
    assert first.count == len(bundle.heldout)
    assert 0.0 < first.utilization <= 1.0


def test_reconstruct_eval_needs_images(state):
    with pytest.raises(UsageError):
        TokenizerService(state).reconstruct_eval(np.zeros((0, 8, 8, 3)))


def test_psnr_hand_values():
    # all-gray prediction of a binary 2x2 image: every pixel is off by 0.5
    assert psnr(0.25) == pytest.approx(10 * np.log10(4.0))
    assert psnr(0.0) == 99.0
