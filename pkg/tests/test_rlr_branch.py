import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ordnet import tensor as T
from ordnet.attention import self_attention
from ordnet.errors import ArgumentError
from ordnet.gradcheck import grad_check
from ordnet.rlr_branch import RLRConfig, apply_gate, contribution_gate, reweighed_long_range
from ordnet.tensor import Tensor

from conftest import make_params


def loop_rlr(x, params):
    """Gate and output from explicit loops over the attention map."""
    h, w, c = x.shape
    hw = h * w
    flat = x.reshape(hw, c)
    p = {k: v.data for k, v in params.named_parameters().items()}
    q = [[p["bq"][t] + sum(flat[i, ci] * p["wq"][ci, t] for ci in range(c)) for t in range(len(p["bq"]))]
         for i in range(hw)]
    k = [[p["bk"][t] + sum(flat[i, ci] * p["wk"][ci, t] for ci in range(c)) for t in range(len(p["bk"]))]
         for i in range(hw)]
    attn = [[sum(a * b for a, b in zip(q[i], k[j])) for j in range(hw)] for i in range(hw)]
    y = self_attention(Tensor(x), params).y.data
    gate = np.zeros((h, w))
    z = np.zeros_like(y)
    for i in range(hw):
        s = sum(attn[j][i] for j in range(hw))  # contribution of i to every j
        g = 1.0 / (1.0 + np.exp(-s))
        gate[i // w, i % w] = g
        for ch in range(c):
            z[i // w, i % w, ch] = y[i // w, i % w, ch] * g
    return z, gate


def test_zero_input_gives_half_gate():
    params = make_params(4, 2, 3, seed=0, zero_bias=True)
    z, cmap = reweighed_long_range(Tensor(np.zeros((3, 3, 4))), params)
    assert np.all(cmap.gate.data == 0.5)
    assert np.all(z.data == 0)


def test_constant_input_gives_uniform_gate(params4):
    x = np.broadcast_to(np.random.default_rng(1).normal(size=4), (3, 3, 4)).copy()
    z, cmap = reweighed_long_range(Tensor(x), params4)
    g = cmap.gate.data
    assert np.allclose(g, g[0, 0], rtol=0, atol=1e-15)
    y = self_attention(Tensor(x), params4).y.data
    np.testing.assert_allclose(z.data, g[0, 0] * y, atol=1e-15)


def test_matches_loop_oracle_seed17():
    x = np.random.default_rng(17).normal(size=(3, 3, 4))
    params = make_params(4, 2, 3, seed=17)
    z, cmap = reweighed_long_range(Tensor(x), params)
    z_ref, g_ref = loop_rlr(x, params)
    np.testing.assert_allclose(cmap.gate.data, g_ref, atol=1e-10, rtol=0)
    np.testing.assert_allclose(z.data, z_ref, atol=1e-10, rtol=0)


def test_no_extra_parameters(params4):
    before = params4.num_parameters()
    reweighed_long_range(Tensor(np.ones((2, 2, 4))), params4)
    assert params4.num_parameters() == before


@settings(max_examples=30, deadline=None)
@given(h=st.integers(1, 4), w=st.integers(1, 4), seed=st.integers(0, 2**16))
def test_gate_ranges(h, w, seed):
    params = make_params(4, 2, 3, seed)
    x = Tensor(np.random.default_rng(seed).uniform(-1, 1, size=(h, w, 4)))
    _, cmap = reweighed_long_range(x, params, RLRConfig(normalizer="sigmoid"))
    assert np.all((cmap.gate.data > 0) & (cmap.gate.data < 1))
    _, cmap = reweighed_long_range(x, params, RLRConfig(normalizer="softmax"))
    # the softmax gate is rescaled by HW, so it sums to HW (mean gate 1)
    assert abs(cmap.gate.data.sum() / (h * w) - 1.0) <= 1e-12


@pytest.mark.parametrize("norm", ["sigmoid", "softmax"])
def test_transpose_swaps_directions(norm):
    attn = np.random.default_rng(2).normal(size=(6, 6))
    out_dir = contribution_gate(Tensor(attn), (2, 3), RLRConfig("attention_out", norm)).data
    in_dir_t = contribution_gate(Tensor(attn.T.copy()), (2, 3), RLRConfig("attention_in", norm)).data
    assert np.array_equal(out_dir, in_dir_t)


def test_attention_out_is_column_sum():
    attn = np.arange(9.0).reshape(3, 3) / 10
    g = contribution_gate(Tensor(attn), (1, 3), RLRConfig()).data
    np.testing.assert_allclose(g[0], 1 / (1 + np.exp(-attn.sum(axis=0))))


@pytest.mark.parametrize("seed", range(5))
def test_monotone_in_own_column(seed):
    rng = np.random.default_rng(seed)
    attn = rng.normal(size=(4, 4))
    y = Tensor(rng.normal(size=(2, 2, 3)))
    i = int(rng.integers(0, 4))
    before = contribution_gate(Tensor(attn), (2, 2)).data.reshape(-1)[i]
    attn[:, i] += rng.uniform(0, 1, size=4)
    after_gate = contribution_gate(Tensor(attn), (2, 2))
    assert after_gate.data.reshape(-1)[i] >= before
    assert apply_gate(y, after_gate).shape == y.shape


@pytest.mark.parametrize("cfg", [RLRConfig(), RLRConfig("attention_in", "softmax")])
def test_gradcheck_through_branch(params4, cfg):
    x = Tensor(np.random.default_rng(3).uniform(-2, 2, size=(3, 2, 4)), requires_grad=True)
    w = Tensor(np.random.default_rng(4).normal(size=(3, 2, 4)))
    named = {"x": x, **params4.named_parameters()}
    report = grad_check(lambda: T.sum_(T.mul(reweighed_long_range(x, params4, cfg)[0], w)), named)
    assert report.max_rel_diff < 1e-4, report.per_parameter


def test_config_validation():
    with pytest.raises(ArgumentError):
        RLRConfig(direction="sideways")
    with pytest.raises(ArgumentError):
        RLRConfig(normalizer="tanh")
