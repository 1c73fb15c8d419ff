import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from h3conformer.data import (CorpusStats, FeatureFileError, FeatureSequence, SyntheticTaskConfig,
                              compute_stats, concat_longform, denormalize, load_features,
                              longform_groups, normalize, read_manifest, save_features,
                              spec_mask, split_train_val, synth_generate, token_templates,
                              write_corpus)

SMALL = SyntheticTaskConfig(feat_dim=12, vocab_size=5)


def utt(T, F=3, labels=(1,), uid="u", rng=None):
    rng = rng or np.random.default_rng(T)
    return FeatureSequence(rng.standard_normal((T, F)), list(labels), uid)


class TestSynth:
    def test_clean_single_token(self):
        cfg = SyntheticTaskConfig(feat_dim=6, vocab_size=3, noise=0.0, session_bias=0.0,
                                  frames_per_token=(4, 4), tokens_per_utt=(1, 1),
                                  edge_silence=(0, 0), gap_frames=(0, 0))
        u = synth_generate(cfg, 0, 1)[0]
        assert u.frames.shape == (4, 6)
        np.testing.assert_array_equal(u.frames, np.repeat(token_templates(cfg)[u.labels[0] - 1][None],
                                                          4, axis=0))

    def test_deterministic(self):
        a, b = synth_generate(SMALL, 3, 30), synth_generate(SMALL, 3, 30)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.frames, y.frames)
            assert x.labels == y.labels and x.utt_id == y.utt_id

    def test_seed_matters(self):
        a, b = synth_generate(SMALL, 1, 1)[0], synth_generate(SMALL, 2, 1)[0]
        assert a.frames.shape != b.frames.shape or not np.array_equal(a.frames, b.frames)

    def test_structure(self):
        utts = synth_generate(SMALL, 0, 50)
        for u in utts:
            assert 3 <= len(u.labels) <= 10
            assert all(1 <= t <= 5 for t in u.labels)
            assert all(a != b for a, b in zip(u.labels, u.labels[1:]))
            assert u.num_frames <= 200
        assert utts[24].session == 1 and utts[24].utt_id == "s0001-u000"

    def test_templates_orthogonal(self):
        T = token_templates(SMALL)
        np.testing.assert_allclose(T @ T.T, 12 * np.eye(5), atol=1e-10)

    def test_bad_config(self):
        with pytest.raises(ValueError):
            synth_generate(SyntheticTaskConfig(frames_per_token=(5, 3)), 0, 1)
        with pytest.raises(ValueError):
            synth_generate(SMALL, 0, -1)


class TestConcat:
    def test_identity(self):
        u = utt(5)
        assert concat_longform([u], 1) is u

    def test_two(self):
        a, b = utt(10, labels=[1, 2], uid="a"), utt(14, labels=[3], uid="b")
        c = concat_longform([a, b], 2)
        assert c.num_frames == 24 and c.labels == [1, 2, 3]
        np.testing.assert_array_equal(c.frames[10:], b.frames)

    def test_24(self):
        utts = synth_generate(SMALL, 0, 24)
        c = concat_longform(utts, 24)
        assert c.num_frames == sum(u.num_frames for u in utts)
        assert c.labels == [t for u in utts for t in u.labels]

    def test_groups(self):
        utts = synth_generate(SMALL, 0, 10)
        groups = longform_groups(utts, 3)
        assert len(groups) == 3
        assert groups[1].labels == utts[3].labels + utts[4].labels + utts[5].labels

    def test_errors(self):
        with pytest.raises(ValueError):
            concat_longform([utt(3)], 2)
        with pytest.raises(ValueError):
            concat_longform([utt(3), utt(3, F=4)], 2)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.integers(1, 30), min_size=1, max_size=8))
    def test_property_lengths(self, lengths):
        utts = [utt(T, labels=[i + 1]) for i, T in enumerate(lengths)]
        c = concat_longform(utts, len(utts))
        assert c.num_frames == sum(lengths)
        assert c.labels == list(range(1, len(utts) + 1))


class TestNormalize:
    def test_self_stats(self, rng):
        u = utt(50, F=4, rng=rng)
        n = normalize(u, compute_stats([u]))
        np.testing.assert_allclose(n.frames.mean(0), 0, atol=1e-9)
        np.testing.assert_allclose(n.frames.var(0), 1, atol=1e-9)

    def test_zero_variance(self):
        u = FeatureSequence(np.ones((5, 2)), [])
        with pytest.raises(ValueError):
            compute_stats([u])
        with pytest.raises(ValueError):
            CorpusStats(np.zeros(2), np.array([1.0, 0.0]))

    def test_roundtrip(self, rng):
        us = [utt(20, rng=rng), utt(7, rng=rng)]
        stats = compute_stats(us)
        back = denormalize(normalize(us[1], stats), stats)
        assert np.abs(back.frames - us[1].frames).max() < 1e-10


class TestSpecMask:
    def test_zero_masks(self, rng):
        u = utt(30)
        np.testing.assert_array_equal(spec_mask(u, 0, 0, rng).frames, u.frames)

    def test_full_time_mask(self, rng):
        u = utt(30)
        out = spec_mask(u, [(0, 30)], 0, rng).frames
        np.testing.assert_allclose(out, np.repeat(u.frames.mean(0)[None], 30, 0))

    def test_count(self, rng):
        u = FeatureSequence(rng.standard_normal((40, 10)) + 100.0, [])
        out = spec_mask(u, [(3, 5), (20, 2)], [(1, 3)], rng).frames
        changed = (out != u.frames).sum()
        masked_rows = 5 + 2
        assert changed == masked_rows * 10 + 3 * (40 - masked_rows)

    def test_random_within_limits(self, rng):
        u = utt(100, F=20)
        for _ in range(20):
            out = spec_mask(u, 2, 2, rng, max_time_frac=0.1, max_freq_bands=3).frames
            rows = (out != u.frames).all(axis=1).sum()
            assert rows <= 20

    def test_bad_span(self, rng):
        with pytest.raises(ValueError):
            spec_mask(utt(10), [(8, 5)], 0, rng)

    def test_does_not_mutate(self, rng):
        u = utt(10)
        before = u.frames.copy()
        spec_mask(u, 2, 2, rng)
        np.testing.assert_array_equal(u.frames, before)


class TestSplit:
    def test_split(self):
        utts = [utt(3, uid=str(i)) for i in range(100)]
        tr, va = split_train_val(utts, 0.05, 0)
        assert len(va) == 5 and len(tr) == 95
        assert not {u.utt_id for u in tr} & {u.utt_id for u in va}
        tr2, va2 = split_train_val(utts, 0.05, 0)
        assert [u.utt_id for u in va] == [u.utt_id for u in va2]

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            split_train_val([utt(3)], 0.0, 0)


class TestFiles:
    def test_roundtrip(self, tmp_path, rng):
        u = FeatureSequence(rng.standard_normal((7, 5)).astype(np.float32), [3, 1, 4], "x")
        save_features(tmp_path / "x.hpf", u)
        v = load_features(tmp_path / "x.hpf")
        assert v.frames.dtype == np.float32
        np.testing.assert_array_equal(v.frames, u.frames)
        assert v.labels == [3, 1, 4] and v.utt_id == "x"
        save_features(tmp_path / "y.hpf", v)
        assert (tmp_path / "x.hpf").read_bytes() == (tmp_path / "y.hpf").read_bytes()

    def test_layout(self, tmp_path):
        u = FeatureSequence(np.array([[1.0, 2.0]], dtype=np.float32), [7])
        save_features(tmp_path / "a.hpf", u)
        blob = (tmp_path / "a.hpf").read_bytes()
        assert blob[:4] == b"HPF1"
        assert np.frombuffer(blob[4:16], "<u4").tolist() == [1, 2, 1]
        assert np.frombuffer(blob[16:24], "<f4").tolist() == [1.0, 2.0]
        assert np.frombuffer(blob[24:], "<u4").tolist() == [7]

    @pytest.mark.parametrize("cut", [3, 10, 20, -1])
    def test_truncated(self, tmp_path, cut):
        save_features(tmp_path / "a.hpf", utt(4))
        blob = (tmp_path / "a.hpf").read_bytes()
        (tmp_path / "b.hpf").write_bytes(blob[:cut])
        with pytest.raises(FeatureFileError):
            load_features(tmp_path / "b.hpf")

    def test_foreign_endian(self, tmp_path):
        save_features(tmp_path / "a.hpf", utt(4))
        blob = bytearray((tmp_path / "a.hpf").read_bytes())
        blob[:4] = b"1FPH"
        (tmp_path / "b.hpf").write_bytes(bytes(blob))
        with pytest.raises(FeatureFileError, match="byte order"):
            load_features(tmp_path / "b.hpf")

    def test_manifest(self, tmp_path):
        utts = synth_generate(SMALL, 0, 30)
        manifest = write_corpus(utts, tmp_path / "corpus")
        back = read_manifest(manifest)
        assert [u.utt_id for u in back] == [u.utt_id for u in utts]
        assert back[25].session == 1
        np.testing.assert_allclose(back[3].frames, utts[3].frames, atol=1e-6)
