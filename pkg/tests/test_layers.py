import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridkd.core import Tensor, default_dtype, grad_check
from hybridkd.errors import ConfigError, DimensionError
from hybridkd.layers import (
    Conv2d,
    DepthwiseSeparableBlock,
    GroupNorm,
    LayerNorm,
    Linear,
    PatchEmbed,
    SqueezeExcitation,
    WindowAttentionBlock,
    patch_embed,
    squeeze_excitation,
)


def rng(seed=0):
    return np.random.default_rng(seed)


# -- patch embedding ----------------------------------------------------------------------------


@pytest.mark.parametrize("size,n_p", [(64, 64), (32, 16)])
def test_patch_count(size, n_p):
    out = patch_embed(Tensor(rng().random((2, 3, size, size))), 8, 12)
    assert out.shape == (2, n_p, 12)


def test_zero_image_zero_bias_embeds_to_zero():
    pe = PatchEmbed(8, 12, rng())
    assert not pe(Tensor(np.zeros((1, 3, 16, 16)))).data.any()


def test_patch_embed_is_flattened_patch_projection():
    pe = PatchEmbed(4, 5, rng(1))
    x = rng(2).random((1, 3, 8, 8))
    out = pe(Tensor(x)).data[0]
    w = pe.proj.weight.data.reshape(5, -1)
    for i in range(2):
        for j in range(2):
            patch = x[0, :, 4 * i : 4 * i + 4, 4 * j : 4 * j + 4].reshape(-1)
            np.testing.assert_allclose(out[i * 2 + j], w @ patch + pe.proj.bias.data, atol=1e-5)


def test_indivisible_image_is_config_error():
    with pytest.raises(ConfigError):
        patch_embed(Tensor(np.zeros((1, 3, 30, 30))), 8, 4)


# -- window attention ---------------------------------------------------------------------------


def test_identical_tokens_give_uniform_attention():
    blk = WindowAttentionBlock(16, 4, rng())
    tokens = Tensor(np.tile(rng(1).normal(size=(1, 1, 16)), (2, 9, 1)))
    _, attn = blk(tokens)
    assert attn.shape == (2, 4, 9, 9)
    np.testing.assert_allclose(attn.data, 1 / 9, atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(2, 12))
def test_attention_rows_are_distributions(seed, b, n):
    blk = WindowAttentionBlock(8, 2, rng(seed))
    out, attn = blk(Tensor(rng(seed + 1).normal(0, 3, (b, n, 8))))
    assert out.shape == (b, n, 8)
    assert np.all(attn.data >= 0)
    assert np.abs(attn.data.sum(-1) - 1).max() < 1e-6


def test_two_token_single_head_closed_form():
    d = 2
    blk = WindowAttentionBlock(d, 1, rng())
    for lin in (blk.q, blk.k):
        lin.weight.data[...] = np.eye(d)
        lin.bias.data[...] = 0
    # bypass the norm so queries and keys equal the raw tokens
    t = np.array([[[1.0, 0.0], [0.5, 2.0]]])
    _, attn = blk.window_attention(Tensor(t))
    s = t[0] @ t[0].T / math.sqrt(d)
    for i in range(2):
        e = [math.exp(s[i, j]) for j in range(2)]
        for j in range(2):
            assert attn.data[0, 0, i, j] == pytest.approx(e[j] / sum(e), abs=1e-6)


def test_indivisible_heads_is_config_error():
    with pytest.raises(ConfigError):
        WindowAttentionBlock(10, 4, rng())


def test_wrong_token_dim_is_dimension_error():
    with pytest.raises(DimensionError):
        WindowAttentionBlock(8, 2, rng())(Tensor(np.zeros((1, 4, 6))))


# -- squeeze-excitation and depthwise blocks --------------------------------------------------


def test_half_gate_halves_input():
    se = SqueezeExcitation(4, 2, rng())
    se.fc2.weight.data[...] = 0
    se.fc2.bias.data[...] = 0
    x = rng(1).normal(size=(2, 4, 3, 3))
    np.testing.assert_allclose(se(Tensor(x)).data, x / 2, atol=1e-6)


def test_se_zero_input_zero_output():
    assert not squeeze_excitation(Tensor(np.zeros((1, 8, 4, 4))), 4).data.any()


def test_se_matches_loop_oracle():
    se = SqueezeExcitation(6, 3, rng(3))
    x = rng(4).normal(size=(2, 6, 5, 5))
    out = se(Tensor(x)).data
    w1, b1, w2, b2 = (a.data for a in (se.fc1.weight, se.fc1.bias, se.fc2.weight, se.fc2.bias))
    for b in range(2):
        pooled = [x[b, c].mean() for c in range(6)]
        hidden = [max(0.0, sum(pooled[c] * w1[c, j] for c in range(6)) + b1[j]) for j in range(2)]
        for c in range(6):
            g = 1 / (1 + math.exp(-(sum(hidden[j] * w2[j, c] for j in range(2)) + b2[c])))
            np.testing.assert_allclose(out[b, c], x[b, c] * g, atol=1e-6)


def test_se_indivisible_reduction():
    with pytest.raises(ConfigError):
        SqueezeExcitation(6, 4, rng())


def test_depthwise_stage_never_mixes_channels():
    blk = DepthwiseSeparableBlock(8, 7, 1, rng())
    for c in range(8):
        x = np.zeros((1, 8, 6, 6))
        x[0, c, 3, 3] = 1.0
        y = blk.depthwise(Tensor(x)).data
        others = np.delete(y[0], c, axis=0)
        assert not others.any()
        assert y[0, c].any()


@pytest.mark.parametrize("stride,out", [(1, 8), (2, 4)])
def test_block_output_shape(stride, out):
    blk = DepthwiseSeparableBlock(4, 6, stride, rng())
    assert blk(Tensor(rng(1).normal(size=(2, 4, 8, 8)))).shape == (2, 6, out, out)


# -- gradient checks ---------------------------------------------------------------------------


def _check_module(mod_fn, x_shape, seed=0):
    with default_dtype(np.float64):
        mod = mod_fn(rng(seed))
        x = Tensor(rng(seed + 1).normal(size=x_shape), requires_grad=True)

        def objective(inp):
            y = mod(inp)
            y = y[0] if isinstance(y, tuple) else y
            return (y * y).sum() * 0.1 + y.sum() * 0.5

        worst = grad_check(objective, x)
        for _, p in mod.named_parameters():
            worst = max(worst, grad_check(lambda _: objective(x), p))
    return worst


@pytest.mark.parametrize(
    "name,mod_fn,shape",
    [
        ("linear", lambda r: Linear(4, 3, r), (2, 4)),
        ("conv", lambda r: Conv2d(3, 4, 3, r, stride=2, padding=1), (1, 3, 5, 5)),
        ("layernorm", lambda r: LayerNorm(5), (2, 3, 5)),
        ("groupnorm", lambda r: GroupNorm(3), (2, 3, 3, 3)),
        ("patch", lambda r: PatchEmbed(2, 4, r), (1, 3, 4, 4)),
        ("attention", lambda r: WindowAttentionBlock(4, 2, r, mlp_ratio=2), (2, 4, 4)),
        ("se", lambda r: SqueezeExcitation(4, 2, r), (2, 4, 3, 3)),
        ("dwsep", lambda r: DepthwiseSeparableBlock(4, 6, 2, r), (1, 4, 5, 5)),
    ],
)
def test_block_grad_check(name, mod_fn, shape):
    assert _check_module(mod_fn, shape) < 1e-5
