import time

import numpy as np
import pytest

from h3conformer.h3 import H3Params, H3StreamState, h3_flop_estimate, h3_forward, h3_step, h3_stream
from h3conformer.numerics import Tensor, grad_check, ops
from h3conformer.ssm import DiagSSM, ShiftSSM

from oracles import unnormalized_linear_attention


def degenerate(rng, d=8, heads=2, shift_id=True, diag="integrator"):
    """H3 whose shift SSM passes keys through and whose diagonal SSM is an integrator."""
    Ws = rng.standard_normal((4, d, d)) / np.sqrt(d)
    shift = ShiftSSM(np.zeros((d, 4)), np.ones(d)) if shift_id else ShiftSSM.initialize(d, 4, rng)
    pole, dd = (1.0, 0.0) if diag == "integrator" else (0.0, 1.0)
    dg = DiagSSM.from_poles(np.full((heads, 1), pole), 1.0, 1.0 if pole else 0.0, dd)
    return H3Params(*Ws, heads=heads, shift=shift, diag=dg)


def test_single_step_identity(rng):
    p = degenerate(rng, diag="identity")
    x = rng.standard_normal((1, 8))
    q, k, v = x @ p.Wq.data, x @ p.Wk.data, x @ p.Wv.data
    o = np.concatenate([q[0, s] @ np.outer(k[0, s], v[0, s]) for s in (slice(0, 4), slice(4, 8))])
    np.testing.assert_allclose(h3_forward(x, p).data[0], o @ p.Wo.data, atol=1e-13)


def test_degenerate_is_linear_attention(rng):
    for _ in range(5):
        p = degenerate(rng)
        x = rng.standard_normal((30, 8))
        want = unnormalized_linear_attention(x, p.Wq.data, p.Wk.data, p.Wv.data, p.Wo.data, 2)
        assert np.abs(h3_forward(x, p).data - want).max() < 1e-9


@pytest.mark.parametrize("shared", [True, False])
def test_causal(rng, shared):
    p = H3Params.initialize(8, 2, rng, shared_diag=shared)
    x = rng.standard_normal((64, 8))
    base = h3_forward(x, p).data
    for t in (0, 17, 63):
        y = x.copy()
        y[t] += rng.standard_normal(8)
        diff = np.abs(h3_forward(y, p).data - base)
        assert diff[:t].max(initial=0.0) < 1e-12
        assert diff[t].max() > 1e-6


@pytest.mark.parametrize("shared", [True, False])
def test_steps_match_forward(rng, shared):
    p = H3Params.initialize(8, 2, rng, shared_diag=shared)
    x = rng.standard_normal((128, 8))
    full = h3_forward(x, p).data
    state = H3StreamState.zeros(p)
    ys = []
    for t in range(128):
        state, y = h3_step(state, x[t], p)
        ys.append(y)
    assert np.abs(np.stack(ys) - full).max() < 1e-9


def test_chunks_match_forward(rng):
    p = H3Params.initialize(8, 2, rng)
    x = rng.standard_normal((100, 8))
    full = h3_forward(x, p).data
    state = H3StreamState.zeros(p)
    outs = []
    for i in range(0, 100, 7):
        state, y = h3_stream(state, x[i:i + 7], p)
        outs.append(y)
    assert np.abs(np.concatenate(outs) - full).max() < 1e-9


def test_zero_step(rng):
    p = H3Params.initialize(8, 2, rng)
    _, y = h3_step(H3StreamState.zeros(p), np.zeros(8), p)
    assert np.abs(y).max() == 0.0


def test_batch_consistent(rng):
    p = H3Params.initialize(8, 2, rng)
    x = rng.standard_normal((3, 20, 8))
    out = h3_forward(x, p).data
    for b in range(3):
        np.testing.assert_allclose(out[b], h3_forward(x[b], p).data, atol=1e-12)


def test_long_sequence_fft_path(rng):
    p = H3Params.initialize(8, 2, rng)
    x = rng.standard_normal((300, 8))
    state = H3StreamState.zeros(p)
    state, y = h3_stream(state, x, p)
    assert np.abs(y - h3_forward(x, p).data).max() < 1e-9


def test_step_time_constant(rng):
    p = H3Params.initialize(32, 2, rng)
    state = H3StreamState.zeros(p)
    from h3conformer.h3 import _DiagView
    view = _DiagView(p)
    x = rng.standard_normal((1100, 32))

    def timed(t0, n=60):
        nonlocal state
        best = []
        for t in range(t0, t0 + n):
            s = time.perf_counter()
            state, _ = h3_step(state, x[t], p, view)
            best.append(time.perf_counter() - s)
        return float(np.median(best))

    early = timed(10)
    for t in range(70, 1000):
        state, _ = h3_step(state, x[t], p, view)
    late = timed(1000)
    assert abs(late - early) / early < 0.2


def test_flop_estimate(rng):
    p = H3Params.initialize(16, 2, rng)
    for L in (256, 1024, 4096):
        r = h3_flop_estimate(p, 2 * L)["total"] / h3_flop_estimate(p, L)["total"]
        assert 2.0 <= r <= 2.2
    big = H3Params.initialize(32, 2, rng)
    a, b = h3_flop_estimate(p, 512), h3_flop_estimate(big, 512)
    assert b["outer_product"] == 4 * a["outer_product"]
    assert b["diag_ssm"] == 4 * a["diag_ssm"]
    one = h3_flop_estimate(p, 1)
    assert one["diag_ssm"] == p.heads * p.head_dim ** 2 * (3 * 1.0 + 6.0)


def test_shape_errors(rng):
    p = H3Params.initialize(8, 2, rng)
    with pytest.raises(ValueError):
        h3_forward(np.zeros((4, 6)), p)
    with pytest.raises(ValueError):
        H3Params.initialize(8, 3, rng)
    with pytest.raises(ValueError):
        h3_stream(H3StreamState(np.zeros((8, 3)), np.zeros((2, 4, 4, 16), complex)), np.zeros(8), p)


def test_grad_h3(rng):
    p = H3Params.initialize(8, 2, rng, diag_state=4)
    x = Tensor(rng.standard_normal((8, 8)))
    r = rng.standard_normal((8, 8))
    params = list(p.parameters().values()) + [x]
    assert grad_check(lambda: ops.sum(h3_forward(x, p) * r), params) < 1e-4


def _loglog_slope(f, Ls, rng, d):
    times = []
    for L in Ls:
        x = rng.standard_normal((L, d))
        f(x)
        best = np.inf
        for _ in range(3):
            t0 = time.perf_counter()
            f(x)
            best = min(best, time.perf_counter() - t0)
        times.append(best)
    return np.polyfit(np.log(Ls), np.log(times), 1)[0]


@pytest.mark.slow
def test_wall_time_scaling(rng):
    from threadpoolctl import threadpool_limits
    from h3conformer.attention import MHSAParams, mhsa_forward
    Ls = [256, 512, 1024, 2048, 4096]
    hp, mp = H3Params.initialize(16, 4, rng), MHSAParams.initialize(16, 1, rng)
    with threadpool_limits(limits=1):
        h3_slope = _loglog_slope(lambda x: h3_forward(x, hp), Ls, rng, 16)
        mhsa_slope = _loglog_slope(lambda x: mhsa_forward(x, mp, "causal"), Ls, rng, 16)
    assert h3_slope <= 1.25 and mhsa_slope >= 1.7, (h3_slope, mhsa_slope)
