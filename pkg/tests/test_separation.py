import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from svsep import dsp, separation
from svsep.dsp import AudioClip
from svsep.errors import InvalidInputError, MissingSourceError, MissingStemError
from svsep.separation import combine_stems_to_instrumental, ratio_mask, separate_song
from svsep.toy import TOY_SEGMENT


class TestRatioMask:
    def test_three_to_one(self):
        est = {"vocals": np.array([3.0]), "instrumental": np.array([1.0])}
        assert ratio_mask(est, "vocals")[0] == 0.75

    def test_zero_instrumental(self):
        est = {"vocals": np.array([0.5, 2.0, 1e-3]), "instrumental": np.zeros(3)}
        np.testing.assert_allclose(ratio_mask(est, "vocals"), 1.0)

    def test_silent_bins_split_evenly(self):
        est = {"a": np.zeros(4), "b": np.zeros(4), "c": np.zeros(4)}
        np.testing.assert_allclose(ratio_mask(est, "b"), 1 / 3)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10**6), n=st.integers(2, 4), log_scale=st.floats(-12, 3))
    def test_masks_sum_to_one(self, seed, n, log_scale):
        rng = np.random.default_rng(seed)
        est = {f"s{k}": 10 ** log_scale * rng.random((2, 8, 16)) for k in range(n)}
        total = sum(est.values())
        masks = sum(ratio_mask(est, s) for s in est)
        assert np.all(np.abs(masks[total > 1e-6] - 1) <= 1e-9)
        assert np.all(np.abs(masks - 1) <= 1e-9)

    def test_missing_source(self):
        with pytest.raises(MissingSourceError):
            ratio_mask({"vocals": np.ones(2)}, "drums")


class TestCombineStems:
    def test_zero(self):
        z = np.zeros((2, 3, 4))
        assert not np.any(combine_stems_to_instrumental({"drums": z, "bass": z, "other": z}))

    def test_values(self):
        one = np.ones(1)
        assert combine_stems_to_instrumental({"drums": one, "bass": 2 * one, "other": 3 * one})[0] == 6.0

    def test_oracle(self):
        rng = np.random.default_rng(0)
        d, b, o = rng.random((3, 2, 5, 7))
        got = combine_stems_to_instrumental({"drums": d, "bass": b, "other": o})
        oracle = np.empty_like(d)
        for idx in np.ndindex(d.shape):
            oracle[idx] = d[idx] + b[idx] + o[idx]
        np.testing.assert_allclose(got, oracle, rtol=0, atol=1e-12)

    def test_missing(self):
        with pytest.raises(MissingStemError):
            combine_stems_to_instrumental({"drums": np.ones(1)})


def random_models(sources, seed):
    """Deterministic magnitude estimators that ignore structure."""
    def make(k):
        def model(mag):
            rng = np.random.default_rng([seed, k])
            return mag * rng.random(mag.shape)
        return model
    return {s: make(k) for k, s in enumerate(sources)}


class TestSeparateSong:
    def test_sum_property_at_segment_rate(self):
        rng = np.random.default_rng(1)
        clip = AudioClip(rng.standard_normal((2, 3 * TOY_SEGMENT.samples + 555)), 8000)
        out = separate_song(clip, random_models(["vocals", "instrumental"], 0), segment=TOY_SEGMENT,
                            output_rate=8000)
        total = out["vocals"].samples + out["instrumental"].samples
        assert np.linalg.norm(total - clip.samples) / np.linalg.norm(clip.samples) < 1e-5

    def test_sum_property_after_resampling(self):
        rng = np.random.default_rng(2)
        clip = AudioClip(rng.standard_normal((2, 20000)), 16000)
        out = separate_song(clip, random_models(["vocals", "instrumental"], 1), segment=TOY_SEGMENT,
                            output_rate=16000)
        # both outputs share one resampling chain with the mixture
        ref = dsp.resample(dsp.resample(clip, 8000), 16000).samples
        total = out["vocals"].samples + out["instrumental"].samples
        assert np.linalg.norm(total - ref) / np.linalg.norm(ref) < 1e-5

    def test_four_stem(self):
        rng = np.random.default_rng(3)
        clip = AudioClip(rng.standard_normal((2, 9000)), 8000)
        out = separate_song(clip, random_models(["vocals", "drums", "bass", "other"], 2), "four_stem",
                            TOY_SEGMENT, 8000)
        assert set(out) == {"vocals", "instrumental"}
        total = out["vocals"].samples + out["instrumental"].samples
        assert np.linalg.norm(total - clip.samples) / np.linalg.norm(clip.samples) < 1e-5

    def test_oracle_models_on_pure_vocals(self):
        t = np.arange(3 * 8000) / 8000
        x = np.sin(2 * np.pi * 440 * t) * (1 + 0.5 * np.sin(2 * np.pi * 3 * t))
        clip = AudioClip(np.stack([x, 0.7 * x]), 8000)
        models = {"vocals": lambda m: m, "instrumental": np.zeros_like}
        out = separate_song(clip, models, segment=TOY_SEGMENT, output_rate=8000)
        v, i = out["vocals"].samples, out["instrumental"].samples
        assert np.corrcoef(v.ravel(), clip.samples.ravel())[0, 1] > 0.99
        assert np.sum(i ** 2) < 0.01 * np.sum(clip.samples ** 2)

    def test_zero_input(self):
        clip = AudioClip(np.zeros((2, 5000)), 8000)
        out = separate_song(clip, random_models(["vocals", "instrumental"], 0), segment=TOY_SEGMENT,
                            output_rate=8000)
        assert all(not np.any(c.samples) for c in out.values())

    @pytest.mark.parametrize("n,rate,out_rate", [(4032, 8000, 8000), (100, 8000, 8000),
                                                  (12345, 16000, 44100), (8001, 8000, 22050)])
    def test_output_length_and_rate(self, n, rate, out_rate):
        clip = AudioClip(np.random.default_rng(n).standard_normal(n), rate)
        out = separate_song(clip, random_models(["vocals", "instrumental"], 0), segment=TOY_SEGMENT,
                            output_rate=out_rate)
        for c in out.values():
            assert c.sample_rate == out_rate and c.channels == 2
            assert len(c) == round(n * out_rate / rate)

    def test_model_receives_segment_shape(self):
        seen = []

        def spy(mag):
            seen.append(mag.shape)
            return mag

        separate_song(AudioClip(np.ones(2 * TOY_SEGMENT.samples + 1), 8000),
                      {"vocals": spy, "instrumental": spy}, segment=TOY_SEGMENT, output_rate=8000)
        assert seen == [TOY_SEGMENT.shape] * 6

    def test_missing_model(self):
        with pytest.raises(MissingSourceError):
            separate_song(AudioClip(np.ones(10), 8000), {"vocals": np.zeros_like}, segment=TOY_SEGMENT)

    def test_bad_mode(self):
        with pytest.raises(InvalidInputError):
            separate_song(AudioClip(np.ones(10), 8000), {}, "three_stem", TOY_SEGMENT)

    def test_mask_segment_top_bin(self):
        mix = dsp.stft(AudioClip(np.random.default_rng(4).standard_normal((2, 4032)), 8000), 256, 64)
        est = {"a": np.ones((2, 64, 128)), "b": 3 * np.ones((2, 64, 128))}
        out = separation.mask_segment(mix, est)
        np.testing.assert_allclose(out["a"].values[..., 128], mix.values[..., 128] / 2)
        np.testing.assert_allclose(out["a"].values[..., :128], mix.values[..., :128] / 4)
