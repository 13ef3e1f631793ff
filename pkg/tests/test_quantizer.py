"""Stacked quantization: VQ, RQ and slice-based HQ over one shared codebook."""

import numpy as np
import pytest

from unicodebook.adapters.quantizer import build_quantizer, residual_error
from unicodebook.domain.codebook import Codebook, nearest_codes
from unicodebook.domain.errors import ShapeMismatchError, UsageError
from unicodebook.domain.models import CodeMap, QuantizerMode

# ── Construction ──────────────────────────────────


def test_vq_requires_depth_one():
    with pytest.raises(UsageError):
        build_quantizer(QuantizerMode.VQ, 2)


def test_depth_must_be_positive():
    with pytest.raises(UsageError):
        build_quantizer(QuantizerMode.RQ, 0)


def test_encoder_widths():
    assert build_quantizer(QuantizerMode.RQ, 3).encoder_width(8) == 8
    assert build_quantizer(QuantizerMode.HQ, 3).encoder_width(8) == 24
    assert build_quantizer(QuantizerMode.HQ, 3).aggregate_width(8) == 24


# ── RQ ────────────────────────────────────────────


def test_rq_hand_example():
    cb = Codebook(np.array([[-1.0], [0.0], [1.0], [2.0]]))
    rq = build_quantizer(QuantizerMode.RQ, 2)
    code_map = rq.encode_stacked(np.array([[[2.7]]]), cb)
    assert code_map.indices[0, 0].tolist() == [3, 2]
    np.testing.assert_allclose(rq.aggregate(code_map, cb).values[0, 0], [3.0])


def test_rq_exact_cover_leaves_zero_residual():
    cb = Codebook(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    rq = build_quantizer(QuantizerMode.RQ, 2)
    fmap = np.array([[[1.0, 1.0]]])
    code_map = rq.encode_stacked(fmap, cb)
    assert residual_error(fmap, code_map, cb)[-1] == 0.0


def test_rq_residual_error_is_non_increasing_with_null_code():
    rng = np.random.default_rng(7)
    rq = build_quantizer(QuantizerMode.RQ, 4)
    vq = build_quantizer(QuantizerMode.VQ, 1)
    for _ in range(1000):
        cb = Codebook(rng.normal(size=(int(rng.integers(2, 33)), 3)), pinned_null=True)
        fmap = rng.normal(size=(2, 2, 3)) * rng.uniform(0.1, 3.0)
        code_map = rq.encode_stacked(fmap, cb)
        errors = residual_error(fmap, code_map, cb)
        assert all(b <= a + 1e-9 for a, b in zip(errors, errors[1:]))
        rq_cell = np.sum((fmap - rq.aggregate(code_map, cb).values) ** 2, axis=-1)
        vq_cell = np.sum((fmap - vq.aggregate(vq.encode_stacked(fmap, cb), cb).values) ** 2, axis=-1)
        assert np.all(rq_cell <= vq_cell + 1e-9)


def test_rq_layer_targets_are_residuals(rng):
    cb = Codebook(rng.normal(size=(8, 2)))
    rq = build_quantizer(QuantizerMode.RQ, 3)
    feats = rng.normal(size=(5, 2))
    codes = rq.encode_codes(feats, cb)
    targets = rq.layer_targets(feats, codes, cb)
    np.testing.assert_allclose(targets[:, 0], feats)
    np.testing.assert_allclose(targets[:, 1], feats - cb.entries[codes[:, 0]])
    np.testing.assert_array_equal(nearest_codes(targets[:, 2], cb.entries), codes[:, 2])


def test_residual_error_rejects_other_modes(rng):
    cb = Codebook(rng.normal(size=(4, 2)))
    code_map = CodeMap(np.zeros((1, 1, 1), dtype=np.int64), QuantizerMode.VQ)
    with pytest.raises(UsageError):
        residual_error(np.zeros((1, 1, 2)), code_map, cb)


# ── VQ and HQ ─────────────────────────────────────


def test_vq_matches_single_nearest(rng):
    cb = Codebook(rng.normal(size=(16, 4)))
    fmap = rng.normal(size=(3, 3, 4))
    code_map = build_quantizer(QuantizerMode.VQ, 1).encode_stacked(fmap, cb)
    assert code_map.depth == 1
    np.testing.assert_array_equal(code_map.indices[..., 0].ravel(), nearest_codes(fmap.reshape(9, 4), cb.entries))


def test_hq_quantizes_each_slice_and_concatenates(rng):
    cb = Codebook(rng.normal(size=(8, 2)))
    hq = build_quantizer(QuantizerMode.HQ, 3)
    fmap = rng.normal(size=(2, 2, 6))
    code_map = hq.encode_stacked(fmap, cb)
    qmap = hq.aggregate(code_map, cb)
    assert qmap.values.shape == (2, 2, 6)
    for d in range(3):
        expected = nearest_codes(fmap[..., 2 * d : 2 * d + 2].reshape(4, 2), cb.entries)
        np.testing.assert_array_equal(code_map.indices[..., d].ravel(), expected)
        np.testing.assert_array_equal(qmap.values[..., 2 * d : 2 * d + 2], cb.entries[code_map.indices[..., d]])


def test_encode_rejects_wrong_feature_width(rng):
    cb = Codebook(rng.normal(size=(8, 2)))
    with pytest.raises(ShapeMismatchError):
        build_quantizer(QuantizerMode.HQ, 2).encode_stacked(rng.normal(size=(2, 2, 2)), cb)


def test_encode_rejects_non_finite(rng):
    cb = Codebook(rng.normal(size=(8, 2)))
    fmap = np.zeros((1, 1, 2))
    fmap[0, 0, 1] = np.inf
    with pytest.raises(UsageError):
        build_quantizer(QuantizerMode.RQ, 2).encode_stacked(fmap, cb)


# ── Aggregation ───────────────────────────────────


def test_aggregate_matches_per_cell_recomputation(rng):
    cb = Codebook(rng.normal(size=(8, 3)))
    code_map = CodeMap(rng.integers(0, 8, size=(2, 3, 2)), QuantizerMode.RQ)
    values = build_quantizer(QuantizerMode.RQ, 2).aggregate(code_map, cb).values
    for i in range(2):
        for j in range(3):
            a, b = code_map.indices[i, j]
            np.testing.assert_allclose(values[i, j], cb.entries[a] + cb.entries[b])


def test_aggregate_rejects_out_of_range_codes(rng):
    cb = Codebook(rng.normal(size=(4, 3)))
    code_map = CodeMap(np.full((1, 1, 2), 4), QuantizerMode.RQ)
    with pytest.raises(UsageError):
        build_quantizer(QuantizerMode.RQ, 2).aggregate(code_map, cb)


def test_aggregate_rejects_depth_mismatch(rng):
    cb = Codebook(rng.normal(size=(4, 3)))
    code_map = CodeMap(np.zeros((1, 1, 3), dtype=np.int64), QuantizerMode.RQ)
    with pytest.raises(ShapeMismatchError):
        build_quantizer(QuantizerMode.RQ, 2).aggregate(code_map, cb)


def test_code_map_flatten_order():
    indices = np.arange(12).reshape(2, 3, 2)
    code_map = CodeMap(indices, QuantizerMode.RQ)
    np.testing.assert_array_equal(code_map.flatten(), np.arange(12))
    again = CodeMap.from_flat(code_map.flatten(), 2, 3, 2, QuantizerMode.RQ)
    np.testing.assert_array_equal(again.indices, indices)
