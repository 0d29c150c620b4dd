import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from svsep import mining
from svsep.dataset import Manifest
from svsep.dsp import AudioClip
from svsep.errors import AlignmentError, ShapeError, SilentTrackError
from svsep.mining import TrackPair

RATE = 8000


def shifted_pair(offset, seconds=6.0, seed=0, vocal_level=0.3, rate=RATE, pair_id="p"):
    """Mix whose instrumental part is the instrumental delayed by ``offset`` samples."""
    rng = np.random.default_rng(seed)
    n = int(seconds * rate)
    margin = 2 * rate + 10
    src = rng.standard_normal((2, n + 2 * margin))
    inst = src[:, margin + offset:margin + offset + n]
    mix = src[:, margin:margin + n] + vocal_level * rng.standard_normal((2, n))
    return TrackPair(AudioClip(mix, rate), AudioClip(inst, rate), {"id": pair_id, "artist": f"a{seed}"})


class TestFilter:
    @pytest.mark.parametrize("durations,ok,reason", [
        ((180.0, 181.0), True, ""),
        ((180.0, 182.0), True, ""),
        ((180.0, 182.001), False, "duration-mismatch"),
        ((180.0, 183.0), False, "duration-mismatch"),
        ((300.0, 300.0), True, ""),
        ((301.0, 301.0), False, "too-long"),
    ])
    def test_boundaries(self, durations, ok, reason):
        assert mining.filter_durations(*durations) == (ok, reason)

    def test_pair(self):
        pair = TrackPair(AudioClip(np.zeros(10 * RATE), RATE), AudioClip(np.zeros(13 * RATE), RATE))
        assert mining.filter_pair(pair) == (False, "duration-mismatch")


class TestAlign:
    def test_known_delay(self):
        _, offset = mining.align(shifted_pair(4410, rate=44100, seconds=5.0))
        assert offset == 4410

    def test_zero_lag(self):
        _, offset = mining.align(shifted_pair(0))
        assert offset == 0

    @settings(max_examples=12, deadline=None)
    @given(offset=st.integers(-2 * RATE, 2 * RATE), seed=st.integers(0, 1000))
    def test_exact_recovery_within_two_seconds(self, offset, seed):
        pair = shifted_pair(offset, seed=seed)
        aligned, got = mining.align(pair)
        assert got == offset
        # the cut instrumental lines up sample-for-sample with the mix
        resid = aligned.mix.samples - aligned.instrumental.samples
        assert np.std(resid) == pytest.approx(0.3, rel=0.05)

    def test_independent_noise_fails(self):
        rng = np.random.default_rng(5)
        pair = TrackPair(AudioClip(rng.standard_normal(6 * RATE), RATE), AudioClip(rng.standard_normal(6 * RATE), RATE))
        with pytest.raises(AlignmentError):
            mining.align(pair)

    def test_shift_helper(self):
        x = np.arange(5.0)
        np.testing.assert_array_equal(mining.shift(x, 2), [0, 0, 0, 1, 2])
        np.testing.assert_array_equal(mining.shift(x, -2), [2, 3, 4, 0, 0])


class TestLoudness:
    def test_half_amplitude(self):
        x = np.random.default_rng(0).standard_normal(1000)
        _, gain = mining.equalize_loudness(TrackPair(AudioClip(x, RATE), AudioClip(0.5 * x, RATE)))
        assert gain == pytest.approx(20 * np.log10(2), abs=1e-12)
        assert gain == pytest.approx(6.0206, abs=1e-4)

    def test_equal_rms(self):
        x = np.random.default_rng(1).standard_normal(1000)
        _, gain = mining.equalize_loudness(TrackPair(AudioClip(x, RATE), AudioClip(x[::-1], RATE)))
        assert abs(gain) < 1e-12

    @settings(max_examples=25)
    @given(seed=st.integers(0, 10**6), scale=st.floats(1e-3, 1e3))
    def test_rms_match_and_idempotent(self, seed, scale):
        rng = np.random.default_rng(seed)
        pair = TrackPair(AudioClip(rng.standard_normal((2, 500)), RATE),
                         AudioClip(scale * rng.standard_normal((2, 500)), RATE))
        eq, _ = mining.equalize_loudness(pair)
        rms = lambda c: np.sqrt(np.mean(c.samples ** 2))  # noqa: E731
        assert rms(eq.instrumental) / rms(eq.mix) == pytest.approx(1.0, abs=1e-9)
        _, again = mining.equalize_loudness(eq)
        assert abs(again) < 1e-9

    def test_silent(self):
        with pytest.raises(SilentTrackError):
            mining.equalize_loudness(TrackPair(AudioClip(np.ones(10), RATE), AudioClip(np.zeros(10), RATE)))


class TestEstimateVocals:
    def test_rectified(self):
        assert mining.estimate_vocals(np.array([5.0]), np.array([7.0]))[0] == 0.0

    def test_zero_instrumental(self):
        m = np.random.default_rng(2).standard_normal((2, 3, 4)) + 1j
        np.testing.assert_array_equal(mining.estimate_vocals(m, np.zeros((2, 3, 4))), np.abs(m))

    def test_additive_magnitudes(self):
        rng = np.random.default_rng(3)
        phase = np.exp(2j * np.pi * rng.random((2, 20, 33)))
        inst = rng.random((2, 20, 33)) * phase
        voc = rng.random((2, 20, 33)) * phase
        got = mining.estimate_vocals(inst + voc, inst)
        np.testing.assert_allclose(got, np.abs(voc), atol=1e-9, rtol=0)

    def test_shape(self):
        with pytest.raises(ShapeError):
            mining.estimate_vocals(np.ones((1, 2, 3)), np.ones((1, 2, 4)))


class TestPipeline:
    def test_ten_valid_pairs(self):
        pairs = [shifted_pair(137 * k - 600, seconds=4.5, seed=k, pair_id=f"p{k}") for k in range(10)]
        res = mining.mine_pipeline(pairs, window=256, hop=64)
        assert len(res.triplets) == 10 and not res.rejections
        assert [t.alignment_offset for t in res.triplets] == [137 * k - 600 for k in range(10)]
        t = res.triplets[0]
        assert len(t.vocals) == len(t.mix) and t.vocals_estimate.kind == "magnitude"

    def test_duration_gap_rejected(self):
        pair = TrackPair(AudioClip(np.ones(10 * RATE), RATE), AudioClip(np.ones(13 * RATE), RATE), {"id": "x"})
        res = mining.mine_pipeline([pair])
        assert not res.triplets
        assert [(r.pair_id, r.reason) for r in res.rejections] == [("x", "duration-mismatch")]

    def test_mixed_batch_bookkeeping(self):
        rng = np.random.default_rng(9)
        good = [shifted_pair(k * 50, seconds=4.5, seed=k, pair_id=f"g{k}") for k in range(3)]
        long_pair = TrackPair(AudioClip(np.zeros((1, 301 * 100)), 100), AudioClip(np.zeros((1, 301 * 100)), 100),
                              {"id": "long"})
        noise = TrackPair(AudioClip(rng.standard_normal(5 * RATE), RATE),
                          AudioClip(rng.standard_normal(5 * RATE), RATE), {"id": "noise"})
        gap = TrackPair(AudioClip(np.ones(5 * RATE), RATE), AudioClip(np.ones(8 * RATE), RATE), {"id": "gap"})
        pairs = [good[0], long_pair, noise, good[1], gap, good[2]]
        res = mining.mine_pipeline(pairs, 256, 64)
        assert [t.id for t in res.triplets] == ["g0", "g1", "g2"]
        assert res.counts_by_reason() == {"too-long": 1, "alignment-failed": 1, "duration-mismatch": 1}
        ids = {r.pair_id for r in res.rejections} | {t.id for t in res.triplets}
        assert ids == {p.id for p in pairs} and len(res.rejections) + len(res.triplets) == len(pairs)

    def test_jobs_do_not_change_output(self):
        pairs = [shifted_pair(k * 10, seconds=4.5, seed=k, pair_id=f"p{k}") for k in range(4)]
        a = mining.mine_pipeline(pairs, 256, 64, jobs=1)
        b = mining.mine_pipeline(pairs, 256, 64, jobs=3)
        for x, y in zip(a.triplets, b.triplets):
            assert x.id == y.id and np.array_equal(x.vocals.samples, y.vocals.samples)

    def test_vocal_estimate_tracks_true_vocals(self):
        rng = np.random.default_rng(10)
        n = 5 * RATE
        inst = rng.standard_normal((2, n))
        t = np.arange(n) / RATE
        voc = 0.5 * np.sin(2 * np.pi * 1500 * t) * np.ones((2, 1))
        pair = TrackPair(AudioClip(inst + voc, RATE), AudioClip(inst, RATE), {"id": "v"})
        trip = mining.mine_pipeline([pair], 256, 64).triplets[0]
        inner = slice(RATE, -RATE)
        assert np.corrcoef(trip.vocals.samples[0, inner], voc[0, inner])[0, 1] > 0.9

    def test_outputs_written(self, tmp_path):
        pairs = [shifted_pair(0, seconds=4.5, seed=1, pair_id="ok"),
                 TrackPair(AudioClip(np.ones(5 * RATE), RATE), AudioClip(np.ones(8 * RATE), RATE), {"id": "bad"})]
        manifest_path, report = mining.write_mining_outputs(mining.mine_pipeline(pairs, 256, 64), tmp_path)
        m = Manifest.load(manifest_path)
        assert [e.id for e in m.entries] == ["ok"] and m.entries[0].quality == "estimates"
        rows = list(csv.reader(report.open()))
        assert rows == [["pair_id", "stage", "reason"], ["bad", "filter", "duration-mismatch"]]
