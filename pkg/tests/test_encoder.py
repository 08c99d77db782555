import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from trajrecon.encoder import (
    EncoderConfig,
    MultiHeadAttention,
    NumericalError,
    TransformerEncoder,
    attention,
    encode,
    masked_softmax,
    multi_head,
)


def scalar_attention_weights(Q, K):
    """Hand evaluation of softmax(q.k / sqrt(d_k)) row by row."""
    d_k = len(Q[0])
    out = []
    for q in Q:
        scores = [sum(a * b for a, b in zip(q, k)) / math.sqrt(d_k) for k in K]
        z = sum(math.exp(s) for s in scores)
        out.append([math.exp(s) / z for s in scores])
    return out


def test_two_by_two_identity_case():
    Q = K = [[3.0, 0.0], [0.0, 3.0]]
    _, w = attention(torch.tensor(Q, dtype=torch.float64), torch.tensor(K, dtype=torch.float64),
                     torch.eye(2, dtype=torch.float64))
    np.testing.assert_allclose(w.numpy(), scalar_attention_weights(Q, K), rtol=0, atol=1e-12)


def test_identical_keys_give_uniform_weights_and_mean_values():
    Q = torch.randn(4, 8, dtype=torch.float64)
    K = torch.randn(1, 8, dtype=torch.float64).expand(5, 8)
    V = torch.randn(5, 3, dtype=torch.float64)
    pad = torch.tensor([False, False, False, True, True])
    out, w = attention(Q, K, V, pad)
    torch.testing.assert_close(w[:, :3], torch.full((4, 3), 1 / 3, dtype=torch.float64))
    assert torch.all(w[:, 3:] == 0)
    torch.testing.assert_close(out, V[:3].mean(0).expand(4, 3))


def test_single_unpadded_key_returns_its_value():
    Q = torch.randn(3, 4)
    K = torch.randn(6, 4)
    V = torch.randn(6, 2)
    pad = torch.ones(6, dtype=torch.bool)
    pad[4] = False
    out, _ = attention(Q, K, V, pad)
    assert torch.equal(out, V[4].expand(3, 2))


def test_non_finite_inputs_rejected():
    Q = torch.randn(2, 4)
    Q[0, 0] = float("nan")
    with pytest.raises(NumericalError):
        attention(Q, torch.randn(2, 4), torch.randn(2, 4))
    with pytest.raises(NumericalError):
        attention(torch.randn(2, 4), torch.full((2, 4), float("inf")), torch.randn(2, 4))


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        attention(torch.randn(2, 4), torch.randn(3, 5), torch.randn(3, 4))


def test_softmax_rows_and_padding_over_random_trials():
    gen = torch.Generator().manual_seed(0)
    for _ in range(1000):
        n, m, d = (int(x) for x in torch.randint(1, 9, (3,), generator=gen))
        Q = torch.randn(n, d, generator=gen) * 5
        K = torch.randn(m, d, generator=gen) * 5
        V = torch.randn(m, 3, generator=gen)
        pad = torch.rand(m, generator=gen) < 0.4
        pad[int(torch.randint(0, m, (1,), generator=gen))] = False
        out, w = attention(Q, K, V, pad)
        assert torch.all(torch.abs(w.sum(-1) - 1) <= 1e-6)
        assert torch.all(w[:, pad] == 0)
        live = V[~pad]
        assert torch.all(out >= live.min(0).values - 1e-5)
        assert torch.all(out <= live.max(0).values + 1e-5)


def test_masked_softmax_is_shift_stable():
    s = torch.tensor([[1000.0, 1001.0, 999.0]])
    w = masked_softmax(s, None)
    assert torch.isfinite(w).all()
    torch.testing.assert_close(w, torch.softmax(s - 1000, -1))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 7), st.integers(0, 10_000))
def test_attention_permutation_equivariance(n, seed):
    g = torch.Generator().manual_seed(seed)
    X = torch.randn(n, 4, generator=g, dtype=torch.float64)
    pad = torch.rand(n, generator=g) < 0.3
    pad[0] = False
    perm = torch.randperm(n, generator=g)
    out, _ = attention(X, X, X, pad)
    out_p, _ = attention(X[perm], X[perm], X[perm], pad[perm])
    torch.testing.assert_close(out_p, out[perm])


def test_single_head_equals_plain_attention():
    mha = MultiHeadAttention(8, 1)
    X = torch.randn(2, 5, 8)
    expected, _ = attention(mha.W_Q(X), mha.W_K(X), mha.W_V(X))
    torch.testing.assert_close(mha(X), mha.W_O(expected))


def test_zeroed_head_contributes_nothing():
    torch.manual_seed(1)
    mha = MultiHeadAttention(8, 2)
    with torch.no_grad():
        mha.W_O.weight.copy_(torch.eye(8))
        mha.W_V.weight[4:].zero_()  # head 2's value projection
    X = torch.randn(3, 6, 8)
    y = mha(X)
    assert torch.all(y[..., 4:] == 0)
    with torch.no_grad():
        mha.W_Q.weight[4:].normal_()
        mha.W_K.weight[4:].normal_()
    assert torch.equal(mha(X), y)


def test_multi_head_shape_and_errors():
    mha = MultiHeadAttention(12, 3)
    X = torch.randn(2, 7, 12)
    assert multi_head(X, mha).shape == X.shape
    with pytest.raises(ValueError):
        MultiHeadAttention(10, 3)
    with pytest.raises(ValueError):
        mha(torch.randn(2, 7, 8))


def test_zero_layers_is_identity():
    enc = TransformerEncoder(8, EncoderConfig(layers=0))
    X = torch.randn(2, 5, 8)
    assert torch.equal(encode(X, None, enc), X)


def test_padding_never_influences_live_outputs():
    enc = TransformerEncoder(16, EncoderConfig(layers=2, heads=4)).eval()
    X = torch.randn(2, 9, 16)
    pad = torch.zeros(2, 9, dtype=torch.bool)
    pad[:, 6:] = True
    H = enc(X, pad)
    X2 = X.clone()
    X2[:, 6:] = torch.randn(2, 3, 16) * 100
    H2 = enc(X2, pad)
    assert torch.equal(H[:, :6], H2[:, :6])


def test_inference_is_deterministic_and_train_mode_uses_dropout():
    enc = TransformerEncoder(16, EncoderConfig(layers=2, heads=2, dropout=0.5))
    X = torch.randn(1, 5, 16)
    enc.eval()
    assert torch.equal(enc(X), enc(X))
    enc.train()
    assert not torch.equal(enc(X), enc(X))


def test_non_finite_activation_names_layer():
    enc = TransformerEncoder(8, EncoderConfig(layers=2, heads=2)).eval()
    with torch.no_grad():
        enc.layers[1].ff1.weight.fill_(float("inf"))
    with pytest.raises(NumericalError, match="layer 1"):
        enc(torch.randn(1, 4, 8))


def test_batched_and_single_inference_agree():
    enc = TransformerEncoder(16, EncoderConfig(layers=2, heads=4)).eval()
    X = torch.randn(4, 7, 16)
    pad = torch.zeros(4, 7, dtype=torch.bool)
    pad[1, 5:] = True
    pad[3, 2:] = True
    batched = enc(X, pad)
    for b in range(4):
        single = enc(X[b:b + 1], pad[b:b + 1])
        live = ~pad[b]
        torch.testing.assert_close(single[0, live], batched[b, live], rtol=0, atol=1e-6)


def test_default_linear_init_is_bounded_by_fan_in():
    enc = TransformerEncoder(64, EncoderConfig())
    for name, p in enc.named_parameters():
        if p.dim() == 2:
            bound = 1 / math.sqrt(p.shape[1])
            assert p.abs().max() <= bound + 1e-7, name
