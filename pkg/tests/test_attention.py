import numpy as np
import pytest

from h3conformer.attention import (AttentionMode, MHSACache, MHSAParams, default_feature_map,
                                   linear_attention_forward, mhsa_forward, mhsa_stream)
from h3conformer.numerics import Tensor, grad_check, ops

from oracles import linear_attention_bruteforce, mhsa_bruteforce


def _softplus1(v):
    return np.logaddexp(0.0, v) + 1.0


def test_single_frame_any_mode(rng):
    p = MHSAParams.initialize(8, 2, rng)
    x = rng.standard_normal((1, 8))
    want = x @ p.Wv.data @ p.Wo.data
    for mode in AttentionMode:
        np.testing.assert_allclose(mhsa_forward(x, p, mode).data, want, atol=1e-14)


def test_identical_rows(rng):
    p = MHSAParams.initialize(8, 2, rng)
    x = np.repeat(rng.standard_normal((1, 8)), 5, axis=0)
    out = mhsa_forward(x, p).data
    assert np.abs(out - out[0]).max() < 1e-14


@pytest.mark.parametrize("heads,causal", [(1, True), (2, False), (4, True)])
def test_softmax_oracle(rng, heads, causal):
    p = MHSAParams.initialize(8, heads, rng)
    x = rng.standard_normal((6, 8))
    mode = AttentionMode.CAUSAL if causal else AttentionMode.BIDIRECTIONAL
    want = mhsa_bruteforce(x, *(W.data for W in (p.Wq, p.Wk, p.Wv, p.Wo)), heads, causal)
    assert np.abs(mhsa_forward(x, p, mode).data - want).max() < 1e-10


def test_key_mask_ignores_padding(rng):
    p = MHSAParams.initialize(4, 1, rng)
    x = rng.standard_normal((1, 7, 4))
    padded = x.copy()
    padded[0, 5:] = 99.0
    mask = np.arange(7)[None] < 5
    a = mhsa_forward(padded, p, key_mask=mask).data[0, :5]
    b = mhsa_forward(x[:, :5], p).data[0]
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_bad_dims(rng):
    with pytest.raises(ValueError):
        MHSAParams.initialize(6, 4, rng)
    p = MHSAParams.initialize(4, 1, rng)
    with pytest.raises(ValueError):
        mhsa_forward(np.zeros((3, 5)), p)


def test_linear_single_frame(rng):
    Q, K, V = rng.standard_normal((3, 1, 4))
    np.testing.assert_allclose(linear_attention_forward(Q, K, V).data, V, atol=1e-14)


def test_linear_oracle(rng):
    Q, K, V = rng.standard_normal((3, 8, 4))
    want = linear_attention_bruteforce(Q, K, V, _softplus1)
    assert np.abs(linear_attention_forward(Q, K, V).data - want).max() < 1e-10


def test_linear_constant_keys_running_mean(rng):
    Q, V = rng.standard_normal((2, 6, 3))
    K = np.tile(rng.standard_normal(3), (6, 1))
    want = np.cumsum(V, 0) / np.arange(1, 7)[:, None]
    np.testing.assert_allclose(linear_attention_forward(Q, K, V).data, want, atol=1e-12)


def test_linear_custom_phi(rng):
    Q, K, V = np.abs(rng.standard_normal((3, 5, 2))) + 0.1
    got = linear_attention_forward(Q, K, V, phi=lambda t: t).data
    np.testing.assert_allclose(got, linear_attention_bruteforce(Q, K, V, lambda t: t), atol=1e-12)


def test_streaming_matches_causal(rng):
    p = MHSAParams.initialize(8, 2, rng)
    x = rng.standard_normal((23, 8))
    full = mhsa_forward(x, p, AttentionMode.CAUSAL).data
    cache = MHSACache.empty(p, capacity=4)
    outs = [mhsa_stream(cache, x[i:i + 5], p) for i in range(0, 23, 5)]
    assert np.abs(np.concatenate(outs) - full).max() < 1e-12


def test_grad_mhsa(rng):
    p = MHSAParams.initialize(4, 2, rng)
    x = Tensor(rng.standard_normal((5, 4)))
    r = rng.standard_normal((5, 4))
    params = list(p.parameters().values()) + [x]
    for mode in AttentionMode:
        assert grad_check(lambda: ops.sum(mhsa_forward(x, p, mode) * r), params) < 1e-4


def test_grad_linear(rng):
    Q, K, V = (Tensor(a) for a in rng.standard_normal((3, 6, 3)))
    r = rng.standard_normal((6, 3))
    f = lambda: ops.sum(linear_attention_forward(Q, K, V, default_feature_map) * r)
    assert grad_check(f, [Q, K, V]) < 1e-4
