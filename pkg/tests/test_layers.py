"""Pooling, ReLU, softmax and fire-block tests against scalar references."""

import numpy as np
import pytest

from helpers import conv_oracle, fire_spec, random_plain_bank
from vcnn import (
    ArithMode,
    ConvSpec,
    FireSpec,
    FireWeights,
    PoolKind,
    PoolSpec,
    Tensor3,
    avg_pool,
    fire_forward,
    max_pool,
    relu,
    reorder_from_chunked4,
    reorder_to_chunked4,
    softmax,
)
from vcnn.kernels import weights_from_plain
from vcnn.layers import pool_rowmajor


def _chunked(arr):
    return reorder_to_chunked4(Tensor3.from_array(np.asarray(arr, np.float32)))


def _unchunk(t):
    return reorder_from_chunked4(t).to_array()


def _pool_reference(arr, window, stride, kind):
    # Scalar semantics on purpose: float32 accumulation element by element
    # in window row order (numpy reductions would reassociate).
    layers, h, w = arr.shape
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    out = np.empty((layers, oh, ow), np.float32)
    for m in range(layers):
        for y in range(oh):
            for x in range(ow):
                win = arr[m, y * stride:y * stride + window,
                          x * stride:x * stride + window]
                if kind is PoolKind.MAX:
                    out[m, y, x] = win.max()
                else:
                    acc = np.float32(0.0)
                    for i in range(window):
                        for j in range(window):
                            acc = np.float32(acc + win[i, j])
                    out[m, y, x] = acc / np.float32(window * window)
    return out


def test_max_pool_window_case():
    out = max_pool(_chunked([[[1, 2], [3, 4]]]), PoolSpec(2, 2, PoolKind.MAX))
    assert _unchunk(out).tolist() == [[[4.0]]]


def test_max_pool_constant_idempotent():
    t = _chunked(np.full((6, 5, 5), 2.5, np.float32))
    out = max_pool(t, PoolSpec(3, 2, PoolKind.MAX))
    assert np.all(_unchunk(out) == 2.5)
    assert out.shape == (6, 2, 2)


def test_max_pool_vs_brute_force():
    rng = np.random.default_rng(41)
    arr = rng.standard_normal((8, 13, 13)).astype(np.float32)
    out = max_pool(_chunked(arr), PoolSpec(3, 2, PoolKind.MAX))
    assert np.array_equal(_unchunk(out), _pool_reference(arr, 3, 2, PoolKind.MAX))


def test_avg_pool_window_case():
    out = avg_pool(_chunked([[[1, 2], [3, 4]]]), PoolSpec(2, 2, PoolKind.AVG))
    assert _unchunk(out).tolist() == [[[2.5]]]


def test_avg_pool_exact_vs_scalar_reference():
    # Window sums are short enough that the scalar reference accumulates in
    # the same float32 order; equality is exact.
    rng = np.random.default_rng(40)
    arr = rng.standard_normal((6, 9, 9)).astype(np.float32)
    out = avg_pool(_chunked(arr), PoolSpec(3, 2, PoolKind.AVG))
    assert np.array_equal(_unchunk(out), _pool_reference(arr, 3, 2, PoolKind.AVG))


def test_avg_pool_global_1000ch():
    rng = np.random.default_rng(42)
    arr = rng.standard_normal((1000, 13, 13)).astype(np.float32)
    out = avg_pool(_chunked(arr), PoolSpec(13, 1, PoolKind.AVG))
    assert out.shape == (1000, 1, 1)
    want = arr.reshape(1000, -1).astype(np.float64).sum(axis=1) / 169.0
    assert np.abs(_unchunk(out).ravel() - want).max() <= 1e-4


def test_avg_pool_zeros():
    out = avg_pool(_chunked(np.zeros((4, 6, 6), np.float32)),
                   PoolSpec(2, 2, PoolKind.AVG))
    assert np.all(out.data == 0.0)


def test_pool_window_too_large():
    with pytest.raises(ValueError, match="window"):
        max_pool(_chunked(np.zeros((4, 2, 2), np.float32)),
                 PoolSpec(3, 1, PoolKind.MAX))


def test_pool_kind_mismatch():
    t = _chunked(np.zeros((4, 4, 4), np.float32))
    with pytest.raises(ValueError):
        max_pool(t, PoolSpec(2, 2, PoolKind.AVG))
    with pytest.raises(ValueError):
        avg_pool(t, PoolSpec(2, 2, PoolKind.MAX))


def test_pool_rowmajor_matches_chunked():
    rng = np.random.default_rng(43)
    arr = rng.standard_normal((7, 9, 9)).astype(np.float32)
    t = Tensor3.from_array(arr)
    for kind in (PoolKind.MAX, PoolKind.AVG):
        spec = PoolSpec(3, 2, kind)
        seq = pool_rowmajor(t, spec)
        par = (max_pool if kind is PoolKind.MAX else avg_pool)(_chunked(arr), spec)
        assert np.array_equal(seq.to_array(), _unchunk(par))


def test_relu_examples():
    t = Tensor3.from_array(np.array([[[-1.0]], [[0.0]], [[2.0]]], np.float32))
    out = relu(t)
    assert out.to_array().ravel().tolist() == [0.0, 0.0, 2.0]
    assert np.array_equal(relu(out).data, out.data)  # idempotent
    rng = np.random.default_rng(44)
    arr = rng.standard_normal((5, 4, 4)).astype(np.float32)
    got = relu(Tensor3.from_array(arr))
    assert np.array_equal(got.to_array(), np.where(arr > 0, arr, 0.0))
    # layout preserving on chunked tensors
    c = _chunked(arr)
    assert relu(c).layout is c.layout


def test_softmax_uniform():
    assert softmax(np.zeros(2, np.float32)).tolist() == [0.5, 0.5]


def test_softmax_overflow_guard():
    out = softmax(np.array([1000.0, 1000.0], np.float32))
    assert np.all(np.isfinite(out))
    assert out.tolist() == [0.5, 0.5]


def test_softmax_normalized_and_order_preserving():
    rng = np.random.default_rng(45)
    logits = rng.standard_normal(1000).astype(np.float32) * 5
    p = softmax(logits)
    assert abs(p.sum() - 1.0) <= 1e-6
    assert p.argmax() == logits.argmax()
    # invariant under additive shift
    shifted = softmax(logits + 123.0)
    assert np.abs(p - shifted).max() <= 1e-6


def test_softmax_rejects_empty():
    with pytest.raises(ValueError):
        softmax(np.zeros(0, np.float32))


def _fire_reference(arr, fw_plain):
    sq, e1, e3 = fw_plain
    s = conv_oracle(arr, sq.kernels, sq.biases, 1, 0)
    s = np.maximum(s, 0.0)
    a = np.maximum(conv_oracle(s, e1.kernels, e1.biases, 1, 0), 0.0)
    b = np.maximum(conv_oracle(s, e3.kernels, e3.biases, 1, 1), 0.0)
    return np.concatenate([a, b], axis=0)


def _random_fire(spec: FireSpec, rng):
    plains = tuple(
        random_plain_bank(getattr(spec, name), rng)
        for name in ("squeeze1x1", "expand1x1", "expand3x3")
    )
    weights = FireWeights(*(weights_from_plain(p) for p in plains))
    return plains, weights


def test_fire_micro_vs_scalar_composition():
    # All-1x1 micro fire with handcrafted weights.
    spec = FireSpec(
        ConvSpec(1, 1, 0, 2, 2),
        ConvSpec(1, 1, 0, 2, 4),
        ConvSpec(1, 1, 0, 2, 4),
    )
    rng = np.random.default_rng(46)
    plains, weights = _random_fire(spec, rng)
    arr = rng.standard_normal((2, 3, 3)).astype(np.float32)
    got = fire_forward(_chunked(arr), spec, weights)
    want = _fire_reference_1x1(arr, plains)
    assert got.shape == (8, 3, 3)
    assert np.abs(_unchunk(got) - want).max() <= 1e-5


def _fire_reference_1x1(arr, plains):
    sq, e1, e3 = plains
    s = np.maximum(conv_oracle(arr, sq.kernels, sq.biases, 1, 0), 0.0)
    a = np.maximum(conv_oracle(s, e1.kernels, e1.biases, 1, 0), 0.0)
    b = np.maximum(conv_oracle(s, e3.kernels, e3.biases, 1, 0), 0.0)
    return np.concatenate([a, b], axis=0)


def test_fire_zero_input_propagates_biases():
    spec = fire_spec(4, 4, 4, 4)
    rng = np.random.default_rng(47)
    plains, weights = _random_fire(spec, rng)
    arr = np.zeros((4, 3, 3), np.float32)
    got = _unchunk(fire_forward(_chunked(arr), spec, weights))
    s = np.maximum(plains[0].biases, 0.0)  # squeeze output per channel
    e1 = np.maximum(
        plains[1].kernels.reshape(4, 4) @ s + plains[1].biases, 0.0
    )
    # expand3x3 sees a constant field only at positions where the full 3x3
    # window is inside: at corners/edges padding zeros shrink the sum, so
    # just check the center pixel.
    e3_center = np.maximum(
        plains[2].kernels.sum(axis=(2, 3)).reshape(4, 4) @ s + plains[2].biases, 0.0
    )
    for ch in range(4):
        assert np.allclose(got[ch], e1[ch], atol=1e-6)
    for ch in range(4):
        assert abs(got[4 + ch, 1, 1] - e3_center[ch]) <= 1e-5


def test_fire2_shaped_vs_oracle():
    spec = fire_spec(96, 16, 64, 64)
    rng = np.random.default_rng(48)
    plains, weights = _random_fire(spec, rng)
    arr = rng.standard_normal((96, 9, 9)).astype(np.float32)
    got = fire_forward(_chunked(arr), spec, weights)
    assert got.shape == (128, 9, 9)
    want = _fire_reference(arr, plains)
    assert np.abs(_unchunk(got) - want).max() <= 1e-4


def test_fire_output_channels_concatenate():
    spec = fire_spec(8, 4, 8, 12)
    assert spec.out_layers == 20
    rng = np.random.default_rng(49)
    _, weights = _random_fire(spec, rng)
    arr = rng.standard_normal((8, 5, 5)).astype(np.float32)
    out = fire_forward(_chunked(arr), spec, weights)
    assert out.shape == (20, 5, 5)


def test_fire_zero_weight_expand_equals_zero_concat():
    spec = fire_spec(8, 4, 8, 8)
    rng = np.random.default_rng(50)
    plains, weights = _random_fire(spec, rng)
    zero_e3 = weights_from_plain(
        random_plain_bank(spec.expand3x3, rng, scale=0.0)
    )
    zero_e3.biases[:] = 0.0
    weights_zero = FireWeights(weights.squeeze1x1, weights.expand1x1, zero_e3)
    arr = rng.standard_normal((8, 5, 5)).astype(np.float32)
    got = _unchunk(fire_forward(_chunked(arr), spec, weights_zero))
    assert np.all(got[8:] == 0.0)
    # first half equals the expand1x1 branch alone
    base = _unchunk(fire_forward(_chunked(arr), spec, weights))
    assert np.array_equal(got[:8], base[:8])


def test_fire_channel_mismatch_rejected():
    with pytest.raises(ValueError):
        FireSpec(
            ConvSpec(1, 1, 0, 8, 4),
            ConvSpec(1, 1, 0, 5, 8),  # expand input != squeeze output
            ConvSpec(3, 1, 1, 4, 8),
        )
    spec = fire_spec(8, 4, 8, 8)
    rng = np.random.default_rng(51)
    _, weights = _random_fire(spec, rng)
    with pytest.raises(ValueError, match="layers"):
        fire_forward(_chunked(np.zeros((4, 3, 3), np.float32)), spec, weights)


def test_fire_non_chunkable_expand_rejected():
    with pytest.raises(ValueError, match="multiples of 4"):
        FireSpec(
            ConvSpec(1, 1, 0, 8, 4),
            ConvSpec(1, 1, 0, 4, 6),
            ConvSpec(3, 1, 1, 4, 8),
        )


def test_pool_relaxed_mode_matches_strict():
    rng = np.random.default_rng(52)
    arr = rng.standard_normal((8, 9, 9)).astype(np.float32)
    for kind, op in ((PoolKind.MAX, max_pool), (PoolKind.AVG, avg_pool)):
        spec = PoolSpec(3, 2, kind)
        strict = op(_chunked(arr), spec, ArithMode.STRICT)
        relaxed = op(_chunked(arr), spec, ArithMode.RELAXED)
        assert np.abs(strict.data - relaxed.data).max() <= 1e-5
