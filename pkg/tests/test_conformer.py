import numpy as np
import pytest

from h3conformer.attention import AttentionMode, mhsa_forward
from h3conformer.conformer import (BlockSpec, ConformerBlock, Encoder, EncoderConfig, Mixer,
                                   ParallelSplit, block_forward, count_parameters,
                                   encoder_forward, expected_parameter_count,
                                   ffn_weight_group_stats, make_ch4_config,
                                   parallel_mixer_forward)
from h3conformer.h3 import H3Params, h3_forward
from h3conformer.numerics import Tensor, grad_check, ops
from h3conformer.streaming import stream_logits


def cfg_for(tokens, causal=False, d=16, **kw):
    kw.setdefault("mhsa_heads", 2)
    kw.setdefault("dropout", 0.0)
    layers = [BlockSpec.from_token(t, conv_kernel=5, causal=causal) for t in tokens]
    return EncoderConfig(layers=layers, vocab_size=kw.pop("vocab_size", 5),
                         feat_dim=kw.pop("feat_dim", 6), d=d, **kw)


def frontend_reach(j):
    """Last input frame that subsampled position ``j`` can see."""
    return 4 * j


class TestConfig:
    def test_top_10_of_12(self):
        cfg = make_ch4_config(12, "top_10")
        kinds = [b.mixer for b in cfg.layers]
        assert kinds[:2] == [Mixer.MHSA] * 2 and kinds[2:] == [Mixer.H3] * 10

    def test_top_0(self):
        assert all(b.mixer == Mixer.MHSA for b in make_ch4_config(12, "top_0").layers)

    def test_bottom_top_complementary(self):
        top = [b.mixer == Mixer.H3 for b in make_ch4_config(12, "top_6").layers]
        bottom = [b.mixer == Mixer.H3 for b in make_ch4_config(12, "bottom_6").layers]
        assert all(a != b for a, b in zip(top, bottom)) and sum(top) + sum(bottom) == 12

    def test_explicit_mask(self):
        cfg = make_ch4_config(3, [True, False, True])
        assert cfg.layer_string() == "h3,mhsa,h3"

    @pytest.mark.parametrize("bad", ["top_13", "middle_2"])
    def test_bad_placement(self, bad):
        with pytest.raises(ValueError):
            make_ch4_config(12, bad)

    def test_invariants(self):
        with pytest.raises(ValueError):
            EncoderConfig(layers=[], vocab_size=3)
        with pytest.raises(ValueError):
            EncoderConfig(layers=[BlockSpec(causal=True), BlockSpec(causal=False)], vocab_size=3)
        with pytest.raises(ValueError):
            cfg_for(["parallel:8:4"])
        with pytest.raises(ValueError):
            cfg_for(["parallel:3:13"])

    def test_token_roundtrip(self):
        for tok in ("mhsa", "h3", "parallel:8:8"):
            assert BlockSpec.from_token(tok).token() == tok


class TestBlock:
    def test_zero_residual_identity(self, rng):
        cfg = cfg_for(["mhsa"])
        block = ConformerBlock(cfg.layers[0], cfg, rng, zero_residual=True).eval()
        x = rng.standard_normal((9, 16))
        np.testing.assert_array_equal(block_forward(x, block).data, x)

    @pytest.mark.parametrize("tok", ["mhsa", "h3", "parallel:8:8"])
    def test_causal_block(self, rng, tok):
        cfg = cfg_for([tok], causal=True)
        block = ConformerBlock(cfg.layers[0], cfg, rng).eval()
        x = rng.standard_normal((20, 16))
        base = block(x).data
        for t in (3, 12):
            y = x.copy()
            y[t:] += rng.standard_normal((20 - t, 16))
            assert np.abs(block(y).data - base)[:t].max() < 1e-12

    @pytest.mark.parametrize("tok", ["mhsa", "h3", "parallel:4:4"])
    @pytest.mark.parametrize("causal", [True, False])
    def test_grad_block(self, rng, tok, causal):
        cfg = cfg_for([tok], causal=causal, d=8, h3_heads=2, diag_state=4)
        block = ConformerBlock(cfg.layers[0], cfg, rng)
        x = Tensor(rng.standard_normal((2, 12, 8)))
        r = rng.standard_normal((2, 12, 8))
        params = list(block.parameters().values()) + [x]
        assert grad_check(lambda: ops.sum(block(x) * r), params) < 1e-4


class TestParallel:
    def test_split_matches_standalone(self, rng):
        from h3conformer.attention import MHSAParams
        mp = MHSAParams.initialize(2, 1, rng)
        hp = H3Params.initialize(6, 2, rng)
        x = rng.standard_normal((10, 8))
        out = parallel_mixer_forward(x, ParallelSplit(2, 6), mp, hp).data
        assert np.abs(out[:, :2] - mhsa_forward(x[:, :2], mp).data).max() < 1e-12
        assert np.abs(out[:, 2:] - h3_forward(x[:, 2:], hp).data).max() < 1e-12

    def test_grad_parallel(self, rng):
        from h3conformer.attention import MHSAParams
        mp = MHSAParams.initialize(4, 2, rng)
        hp = H3Params.initialize(4, 2, rng, diag_state=4)
        x = Tensor(rng.standard_normal((7, 8)))
        r = rng.standard_normal((7, 8))
        f = lambda: ops.sum(parallel_mixer_forward(x, ParallelSplit(4, 4), mp, hp,
                                                   AttentionMode.CAUSAL) * r)
        params = list(mp.parameters().values()) + list(hp.parameters().values()) + [x]
        assert grad_check(f, params) < 1e-4


class TestEncoder:
    def test_shape(self, rng):
        cfg = cfg_for(["mhsa"], d=32, vocab_size=10, feat_dim=16, mhsa_heads=4)
        logits = encoder_forward(rng.standard_normal((40, 16)), cfg, Encoder(cfg))
        assert logits.shape == (10, 11)

    def test_doubling_length(self, rng):
        cfg = cfg_for(["h3"])
        m = Encoder(cfg)
        for T in (13, 40, 57):
            a = encoder_forward(rng.standard_normal((T, 6)), cfg, m).shape[0]
            b = encoder_forward(rng.standard_normal((2 * T, 6)), cfg, m).shape[0]
            assert abs(b - 2 * a) <= 1

    def test_deterministic(self, rng):
        cfg = cfg_for(["mhsa", "h3"], dropout=0.3)
        x = rng.standard_normal((30, 6))
        a = encoder_forward(x, cfg, Encoder(cfg, seed=5))
        b = encoder_forward(x, cfg, Encoder(cfg, seed=5))
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("tokens", [["mhsa", "mhsa"], ["h3", "h3"], ["mhsa", "h3"],
                                        ["parallel:8:8"]])
    def test_causal_encoder(self, rng, tokens):
        cfg = cfg_for(tokens, causal=True)
        m = Encoder(cfg).eval()
        x = rng.standard_normal((64, 6))
        base = encoder_forward(x, cfg, m)
        for t in (5, 21, 40):
            y = x.copy()
            y[t:] += rng.standard_normal((64 - t, 6))
            diff = np.abs(encoder_forward(y, cfg, m) - base)
            safe = [j for j in range(len(base)) if frontend_reach(j) < t]
            assert diff[safe].max() < 1e-12
            assert diff[len(safe):].max() > 0

    @pytest.mark.parametrize("tokens", [["mhsa", "h3"], ["parallel:8:8", "parallel:0:16"]])
    def test_streaming_matches_offline(self, rng, tokens):
        cfg = cfg_for(tokens, causal=True)
        m = Encoder(cfg).eval()
        x = rng.standard_normal((77, 6))
        full = encoder_forward(x, cfg, m)
        for chunk in (1, 3, 16):
            assert np.abs(stream_logits(m, x, chunk=chunk) - full).max() < 1e-9

    def test_streaming_rejects_offline(self, rng):
        with pytest.raises(ValueError):
            stream_logits(Encoder(cfg_for(["mhsa"])), rng.standard_normal((8, 6)))

    @pytest.mark.parametrize("tokens,shared", [(["mhsa"], True), (["h3", "mhsa"], True),
                                               (["parallel:8:8"], False), (["h3"], False)])
    def test_parameter_count(self, tokens, shared):
        cfg = cfg_for(tokens, shared_diag=shared)
        assert count_parameters(Encoder(cfg)) == expected_parameter_count(cfg)

    def test_hand_count_single_mhsa(self):
        # d=4, F=2, V=1, K=3, e=2, one MHSA block; counted by hand
        cfg = EncoderConfig([BlockSpec(Mixer.MHSA, 3)], vocab_size=1, feat_dim=2, d=4,
                            mhsa_heads=1, ffn_expansion=2)
        frontend = (3 * 2 * 4 + 4) + (3 * 4 * 4 + 4)
        block = 3 * 8 + (4 * 8 + 8) + (8 * 4 + 4) + 4 * 16 + (4 * 8 + 8) + (4 * 3 + 4) + 8 \
            + (16 + 4)
        head = 8 + 4 * 2 + 2
        assert count_parameters(Encoder(cfg)) == frontend + block + head

    def test_grad_encoder(self, rng):
        cfg = cfg_for(["mhsa", "h3"], d=8, vocab_size=3, feat_dim=3, diag_state=4)
        m = Encoder(cfg)
        x = rng.standard_normal((1, 16, 3))
        params = list(m.parameters().values())
        assert grad_check(lambda: ops.sum(m(x)[0] * 0.1), params) < 1e-4


class TestFFNStats:
    def test_symmetric_init(self):
        m = Encoder(cfg_for(["parallel:8:8"] * 3, d=16))
        for row in ffn_weight_group_stats(m):
            assert abs(row.mhsa_mean - row.h3_mean) / row.mhsa_mean < 0.1
        assert [r.layer for r in ffn_weight_group_stats(m)] == [1, 2]

    def test_zeroed_h3_columns(self):
        m = Encoder(cfg_for(["parallel:8:8"] * 2, d=16))
        m.blocks[1].ffn.w1.W.data[8:] = 0.0
        assert ffn_weight_group_stats(m)[0].h3_mean == 0.0

    def test_requires_parallel(self):
        with pytest.raises(ValueError):
            ffn_weight_group_stats(Encoder(cfg_for(["mhsa", "h3"])))
