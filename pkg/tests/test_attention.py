import numpy as np
import pytest
import torch

import oracles
from dstnet.attention import LCA, TFEB, cross_attention, from_windows, to_windows


def mats(c, gen, dtype=torch.float64):
    return [torch.randn(c, c, generator=gen, dtype=dtype) for _ in range(3)]


@pytest.fixture
def gen():
    return torch.Generator().manual_seed(0)


def test_window_round_trip(gen):
    x = torch.randn(2, 3, 8, 12, generator=gen)
    assert torch.equal(from_windows(to_windows(x, 4), 2, 3, 8, 12, 4), x)


def test_single_token_window_adds_value(gen):
    xi, xf = torch.randn(1, 4, 3, 3, generator=gen, dtype=torch.float64), torch.randn(1, 4, 3, 3, generator=gen, dtype=torch.float64)
    wq, wk, wv = mats(4, gen)
    out = cross_attention(xi, xf, wq, wk, wv, window=1)
    v = torch.einsum("nchw,cd->ndhw", xf, wv)
    assert torch.allclose(out, xi + v, atol=1e-12)


def test_zero_value_is_identity(gen):
    xi, xf = torch.randn(1, 4, 4, 4, generator=gen), torch.randn(1, 4, 4, 4, generator=gen)
    wq, wk, _ = mats(4, gen, torch.float32)
    out = cross_attention(xi, xf, wq, wk, torch.zeros(4, 4), window=2)
    assert torch.equal(out, xi)


@pytest.mark.parametrize("h,w,window", [(2, 2, 2), (6, 6, 2), (6, 6, 3), (4, 6, 2)])
def test_matches_loop_oracle(gen, h, w, window):
    xi = torch.randn(1, 4, h, w, generator=gen, dtype=torch.float64)
    xf = torch.randn(1, 4, h, w, generator=gen, dtype=torch.float64)
    wq, wk, wv = mats(4, gen)
    got = cross_attention(xi, xf, wq, wk, wv, window)[0].numpy()
    want = oracles.cross_attention(xi[0].numpy(), xf[0].numpy(), wq.numpy(), wk.numpy(), wv.numpy(), window)
    assert np.abs(got - want).max() < 1e-6


def test_padding_path_shape(gen):
    xi, xf = torch.randn(1, 4, 5, 7, generator=gen), torch.randn(1, 4, 5, 7, generator=gen)
    out = cross_attention(xi, xf, *mats(4, gen, torch.float32), window=4)
    assert out.shape == xi.shape


def test_shape_mismatch_raises(gen):
    with pytest.raises(ValueError):
        cross_attention(torch.zeros(1, 4, 4, 4), torch.zeros(1, 4, 4, 2), *mats(4, gen, torch.float32), 2)


def test_attention_rows_sum_to_one(gen):
    xi, xf = torch.randn(2, 8, 8, 8, generator=gen), torch.randn(2, 8, 8, 8, generator=gen)
    _, attn = cross_attention(xi, xf, *mats(8, gen, torch.float32), window=4, return_attn=True)
    assert torch.allclose(attn.sum(-1), torch.ones(attn.shape[:-1]), atol=1e-6)


def test_key_permutation_within_window(gen):
    xi = torch.randn(1, 4, 4, 4, generator=gen, dtype=torch.float64)
    xf = torch.randn(1, 4, 4, 4, generator=gen, dtype=torch.float64)
    w = mats(4, gen)
    # swap two pixels of the feature stream inside the top-left 2x2 window
    xp = xf.clone()
    xp[..., 0, 0], xp[..., 1, 1] = xf[..., 1, 1], xf[..., 0, 0]
    assert torch.allclose(cross_attention(xi, xf, *w, 2), cross_attention(xi, xp, *w, 2), atol=1e-12)


def test_lca_zero_mlp_halves_layernorm(gen):
    lca = LCA(8).double()
    for p in lca.mlp.parameters():
        torch.nn.init.zeros_(p)
    x = torch.randn(1, 8, 5, 5, generator=gen, dtype=torch.float64)
    assert torch.allclose(lca.gate(x), torch.full((1, 8, 1, 1), 0.5, dtype=torch.float64))
    assert torch.allclose(lca(x), 0.5 * lca.norm(x))


def test_lca_matches_loop_oracle(gen):
    lca = LCA(4, reduction=2).double()
    with torch.no_grad():
        lca.norm.weight.uniform_(0.5, 1.5, generator=gen)
        lca.norm.bias.uniform_(-0.5, 0.5, generator=gen)
    x = torch.randn(1, 4, 3, 3, generator=gen, dtype=torch.float64)
    w1 = lca.mlp[0].weight[:, :, 0, 0].detach().numpy()
    w2 = lca.mlp[2].weight[:, :, 0, 0].detach().numpy()
    want = oracles.lca(x[0].numpy(), lca.norm.weight.detach().numpy(), lca.norm.bias.detach().numpy(), w1, w2)
    assert np.abs(lca(x)[0].detach().numpy() - want).max() < 1e-9


def test_lca_constant_input_pools_agree():
    x = torch.full((1, 4, 3, 3), 2.5)
    assert torch.equal(x.mean(dim=(2, 3)), x.amax(dim=(2, 3)))


def test_lca_gate_in_open_interval(gen):
    lca = LCA(8)
    g = lca.gate(torch.randn(3, 8, 4, 4, generator=gen) * 3)
    assert (g > 0).all() and (g < 1).all()


def test_lca_output_scales_with_gate(gen):
    lca = LCA(4).double()
    x = torch.randn(1, 4, 3, 3, generator=gen, dtype=torch.float64)
    gate = lca.gate(x)
    doubled = gate.clone()
    doubled[:, 2] *= 2
    base, scaled = lca.norm(x) * gate, lca.norm(x) * doubled
    assert torch.allclose(scaled[:, 2], 2 * base[:, 2])
    assert torch.equal(scaled[:, :2], base[:, :2])


@pytest.mark.parametrize("c,h,w", [(4, 4, 4), (8, 6, 10), (3, 16, 16)])
def test_tfeb_shape(c, h, w):
    blk = TFEB(c, window=4, reduction=2)
    x = torch.rand(2, c, h, w)
    assert blk(x, torch.rand_like(x)).shape == x.shape


def test_tfeb_deterministic(gen):
    blk = TFEB(4, window=2)
    xi, xf = torch.randn(1, 4, 4, 4, generator=gen), torch.randn(1, 4, 4, 4, generator=gen)
    assert torch.equal(blk(xi, xf), blk(xi, xf))


def test_tfeb_gradient(gen, grad_check):
    torch.manual_seed(0)
    blk = TFEB(4, window=2, reduction=2).double()
    xf = torch.randn(1, 4, 4, 4, generator=gen, dtype=torch.float64)
    wts = torch.randn(1, 4, 4, 4, generator=gen, dtype=torch.float64)
    xi = torch.randn(1, 4, 4, 4, generator=gen, dtype=torch.float64)
    assert grad_check(lambda x: (blk(x, xf) * wts).sum(), xi) < 1e-3
