"""Recover a vocal track from a mix and a delayed, quieter instrumental.

Run: python3 demos/mining_walkthrough.py
"""

import numpy as np

from svsep import mining
from svsep.dsp import AudioClip
from svsep.mining import TrackPair
from svsep.toy import TOY_RATE, toy_song


def main():
    song = toy_song(np.random.default_rng(0), 6.0)
    mix = song["mixture"]
    # the instrumental release is missing the first 0.25 s and is mastered 6 dB quieter
    delay = TOY_RATE // 4
    inst = 0.5 * mining.shift(song["instrumental"].samples, -delay)
    pair = TrackPair(mix, AudioClip(inst, TOY_RATE), {"id": "demo"})

    print("filter:", mining.filter_pair(pair))
    aligned, offset = mining.align(pair)
    print(f"alignment offset: {offset} samples ({offset / TOY_RATE:+.3f} s)")
    _, gain = mining.equalize_loudness(aligned)
    # more than 6 dB: the mix also carries the vocals
    print(f"loudness correction: {gain:+.2f} dB")

    trip = mining.mine_pipeline([pair], window=256, hop=64).triplets[0]
    est_v = trip.vocals.samples[0]
    # the triplet covers the mix from the offset onward
    true_v = song["vocals"].samples[0, offset:offset + est_v.size]
    inner = slice(TOY_RATE, -TOY_RATE)
    print(f"correlation of estimated and true vocals: {np.corrcoef(est_v[inner], true_v[inner])[0, 1]:.3f}")


if __name__ == "__main__":
    main()
