"""Layer-zoo contracts: hand oracles for small cases, finite differences for all."""

import math

import numpy as np
import pytest

from ricshield import autodiff as ad
from ricshield import layers, rng
from ricshield.autodiff import Tensor
from ricshield.layers import (LayerNorm, Linear, MultiHeadSelfAttention,
                              TransformerLayer, conv2d, cross_entropy,
                              global_avg_pool, layer_norm, maxpool2)
from tests.test_autodiff import fd_check


def gen_for(seed):
    return rng.numpy_generator(seed, "test-init")


# -- layer norm ----------------------------------------------------------------


def test_layer_norm_constant_row_is_zero():
    ln = LayerNorm(5)
    out = ln(Tensor(np.full((2, 5), 3.3)))
    assert np.allclose(out.data, 0.0, atol=1e-6)


def test_layer_norm_standardized_row_kept():
    ln = LayerNorm(2)
    out = ln(Tensor(np.array([[-1.0, 1.0]])))
    assert np.allclose(out.data, [[-1.0, 1.0]], atol=1e-4)


def test_layer_norm_zero_gamma_gives_beta():
    ln = LayerNorm(4)
    ln.gamma.data[...] = 0.0
    ln.beta.data[...] = np.array([1.0, 2.0, 3.0, 4.0])
    out = ln(Tensor(np.random.default_rng(0).normal(size=(3, 4))))
    assert np.allclose(out.data, np.broadcast_to([1.0, 2.0, 3.0, 4.0], (3, 4)))


def test_layer_norm_gradients():
    g = np.random.default_rng(1)
    x = Tensor(g.normal(size=(3, 6)), requires_grad=True)
    gamma = Tensor(g.normal(size=6), requires_grad=True)
    beta = Tensor(g.normal(size=6), requires_grad=True)
    w = Tensor(g.normal(size=(3, 6)))
    fd_check(lambda: ad.reduce_sum(ad.mul(layer_norm(x, gamma, beta), w)),
             [x, gamma, beta])


# -- attention -----------------------------------------------------------------


def test_msa_with_zero_weights_is_identity_through_residual():
    layer = TransformerLayer(8, 12, 2, gen_for(2))
    for lin in (layer.attn.wq, layer.attn.wk, layer.attn.wv, layer.attn.wo):
        lin.w.data[...] = 0.0
        lin.b.data[...] = 0.0
    x = Tensor(np.random.default_rng(3).normal(size=(2, 5, 8)))
    out = layer.msa_block(x)
    assert np.array_equal(out.data, x.data)


def test_single_token_attention_weight_is_one():
    attn = MultiHeadSelfAttention(8, 2, gen_for(4))
    x = Tensor(np.random.default_rng(5).normal(size=(1, 1, 8)))
    # softmax over a single logit is exactly 1: output = wo(v) exactly
    q = attn.wv(x)
    expect = attn.wo(q).data
    assert np.allclose(attn(x).data, expect, atol=1e-12)


def test_attention_rows_sum_to_one():
    attn = MultiHeadSelfAttention(16, 4, gen_for(6))
    x = Tensor(np.random.default_rng(7).normal(size=(2, 9, 16)))
    captured = {}
    orig_softmax = ad.softmax

    def spy(t, axis=-1):
        out = orig_softmax(t, axis=axis)
        captured["weights"] = out.data
        return out

    ad.softmax = spy
    try:
        attn(x)
    finally:
        ad.softmax = orig_softmax
    sums = captured["weights"].sum(axis=-1)
    assert np.all(np.abs(sums - 1.0) < 1e-12)


def test_msa_block_permutation_equivariance_is_exact():
    layer = TransformerLayer(16, 24, 4, gen_for(8))
    x = np.random.default_rng(9).normal(size=(1, 10, 16))
    out = layer.msa_block(Tensor(x)).data
    perm = np.random.default_rng(10).permutation(9) + 1
    xp = x[:, np.concatenate([[0], perm]), :]
    outp = layer.msa_block(Tensor(xp)).data
    assert np.array_equal(outp[:, 0], out[:, 0])  # class row unchanged
    assert np.array_equal(outp[:, 1:], out[:, perm, :])  # rows permute identically


def test_attention_gradients():
    layer = TransformerLayer(8, 12, 2, gen_for(11))
    x = Tensor(np.random.default_rng(12).normal(size=(2, 4, 8)), requires_grad=True)
    params = list(layer.params("L").values())
    w = Tensor(np.random.default_rng(13).normal(size=(2, 4, 8)))
    fd_check(lambda: ad.reduce_sum(ad.mul(layer.msa_block(x), w)), params + [x],
             samples=3)


def test_attention_rejects_nonfinite_logits():
    attn = MultiHeadSelfAttention(8, 2, gen_for(14))
    x = Tensor(np.full((1, 3, 8), np.nan))
    with pytest.raises(FloatingPointError):
        attn(x)


# -- MLP block -----------------------------------------------------------------


def test_mlp_zero_weights_is_identity():
    layer = TransformerLayer(8, 12, 2, gen_for(15))
    layer.fc1.w.data[...] = 0.0
    layer.fc1.b.data[...] = 0.0
    layer.fc2.w.data[...] = 0.0
    layer.fc2.b.data[...] = 0.0
    x = Tensor(np.random.default_rng(16).normal(size=(2, 5, 8)))
    assert np.array_equal(layer.mlp_block(x).data, x.data)


def test_mlp_rowwise_independence():
    layer = TransformerLayer(8, 12, 2, gen_for(17))
    x = np.random.default_rng(18).normal(size=(1, 5, 8))
    base = layer.mlp_block(Tensor(x)).data
    x2 = x.copy()
    x2[0, 2] += 1.0
    out2 = layer.mlp_block(Tensor(x2)).data
    changed = np.any(np.abs(out2 - base) > 0, axis=(0, 2))
    assert changed[2] and not changed[[0, 1, 3, 4]].any()


def test_mlp_hand_computed_case():
    # d=2, hidden=2, fixed weights: verify one row by scalar arithmetic
    layer = TransformerLayer(2, 2, 1, gen_for(19))
    layer.ln2.gamma.data[...] = 1.0
    layer.ln2.beta.data[...] = 0.0
    layer.fc1.w.data[...] = np.array([[1.0, 0.5], [-1.0, 2.0]])
    layer.fc1.b.data[...] = np.array([0.1, -0.2])
    layer.fc2.w.data[...] = np.array([[2.0, 0.0], [1.0, 1.0]])
    layer.fc2.b.data[...] = np.array([0.0, 0.3])
    x = np.array([[[1.0, 3.0]]])
    # LN of (1,3): mean 2, var 1 -> (-1, 1) / sqrt(1 + 1e-5), then affine
    s = 1.0 / math.sqrt(1.0 + 1e-5)
    h = np.array([-s, s])
    pre = h @ np.array([[1.0, 0.5], [-1.0, 2.0]]) + np.array([0.1, -0.2])
    act = 0.5 * pre * (1.0 + np.array([math.erf(v / math.sqrt(2)) for v in pre]))
    expect = act @ np.array([[2.0, 0.0], [1.0, 1.0]]) + np.array([0.0, 0.3]) + x[0, 0]
    out = layer.mlp_block(Tensor(x)).data
    assert np.allclose(out[0, 0], expect, atol=1e-12)


# -- conv / pool ----------------------------------------------------------------


def test_conv_identity_kernel_passes_input_through():
    g = np.random.default_rng(20)
    x = Tensor(g.random((2, 6, 7, 3)))
    w = np.zeros((3, 3, 3, 3))
    for c in range(3):
        w[1, 1, c, c] = 1.0  # delta kernel per channel
    out = conv2d(x, Tensor(w), Tensor(np.zeros(3)))
    assert np.allclose(out.data, x.data, atol=1e-12)


def test_conv_channel_mismatch_rejected():
    with pytest.raises(ValueError):
        conv2d(Tensor(np.zeros((1, 4, 4, 2))), Tensor(np.zeros((3, 3, 3, 4))),
               Tensor(np.zeros(4)))


def test_conv_gradients():
    g = np.random.default_rng(21)
    x = Tensor(g.normal(size=(2, 5, 6, 2)), requires_grad=True)
    w = Tensor(g.normal(size=(3, 3, 2, 3)), requires_grad=True)
    b = Tensor(g.normal(size=3), requires_grad=True)
    s = Tensor(g.normal(size=(2, 5, 6, 3)))
    fd_check(lambda: ad.reduce_sum(ad.mul(conv2d(x, w, b), s)), [x, w, b])


def test_maxpool_constant_image_halves():
    x = Tensor(np.full((1, 8, 6, 2), 0.7))
    out = maxpool2(x)
    assert out.data.shape == (1, 4, 3, 2)
    assert np.all(out.data == 0.7)


def test_maxpool_odd_dims_ceil():
    x = Tensor(np.random.default_rng(22).random((1, 5, 7, 1)))
    out = maxpool2(x)
    assert out.data.shape == (1, 3, 4, 1)


def test_maxpool_picks_window_max():
    x = np.zeros((1, 4, 4, 1))
    x[0, 1, 1, 0] = 5.0
    x[0, 2, 3, 0] = 7.0
    out = maxpool2(Tensor(x))
    assert out.data[0, 0, 0, 0] == 5.0
    assert out.data[0, 1, 1, 0] == 7.0


def test_maxpool_gradients():
    g = np.random.default_rng(23)
    x = Tensor(g.normal(size=(2, 6, 4, 3)), requires_grad=True)
    s = Tensor(g.normal(size=(2, 3, 2, 3)))
    fd_check(lambda: ad.reduce_sum(ad.mul(maxpool2(x), s)), [x])


def test_global_avg_pool_one_hot():
    x = np.zeros((1, 4, 5, 2))
    x[0, 2, 3, 1] = 1.0
    out = global_avg_pool(Tensor(x))
    assert np.allclose(out.data, [[0.0, 1.0 / 20.0]])


def test_global_avg_pool_gradients():
    g = np.random.default_rng(24)
    x = Tensor(g.normal(size=(2, 3, 4, 5)), requires_grad=True)
    s = Tensor(g.normal(size=(2, 5)))
    fd_check(lambda: ad.reduce_sum(ad.mul(global_avg_pool(x), s)), [x])


# -- loss ------------------------------------------------------------------------


def test_cross_entropy_one_hot_correct_is_zero():
    probs = Tensor(np.array([[1.0, 0.0, 0.0]]))
    assert cross_entropy(probs, np.array([0])).item() == 0.0


def test_cross_entropy_uniform_is_ln3():
    probs = Tensor(np.full((4, 3), 1.0 / 3.0))
    assert cross_entropy(probs, np.array([0, 1, 2, 0])).item() == pytest.approx(
        math.log(3.0), abs=1e-12)


def test_cross_entropy_closed_form_row():
    probs = Tensor(np.array([[0.5, 0.25, 0.25]]))
    assert cross_entropy(probs, np.array([1])).item() == pytest.approx(
        math.log(4.0), abs=1e-12)


def test_cross_entropy_clamp_flagged():
    probs = Tensor(np.array([[1.0, 0.0, 0.0]]))
    diag = {}
    loss = cross_entropy(probs, np.array([1]), diag)
    assert diag["clamped"] == 1
    assert loss.item() == pytest.approx(-math.log(1e-12))


def test_cross_entropy_gradients():
    g = np.random.default_rng(25)
    logits = Tensor(g.normal(size=(5, 3)), requires_grad=True)
    labels = np.array([0, 1, 2, 1, 0])
    fd_check(lambda: cross_entropy(ad.softmax(logits, axis=-1), labels), [logits])
