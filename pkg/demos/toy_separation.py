"""Train vocal and instrumental U-Nets on toy songs and measure the SDR gain.

Run: python3 demos/toy_separation.py  (about a minute on a laptop CPU)
"""

import numpy as np

from svsep.evaluation import evaluate_song
from svsep.model import TrainConfig, UNetConfig, train
from svsep.separation import separate_song
from svsep.toy import TOY_RATE, TOY_SEGMENT, toy_samples, toy_song


def main():
    # one 64x128 magnitude segment per toy song
    train_set = toy_samples(200, seed=1)
    val_set = toy_samples(20, seed=2)
    model_cfg = UNetConfig(depth=3, base_channels=8, input_shape=TOY_SEGMENT.shape)
    train_cfg = TrainConfig(learning_rate=1e-4, epochs=5, steps_per_epoch=200, seed=0)
    results = train(train_set, val_set, ["vocals", "instrumental"], train_cfg, model_cfg)
    for source, r in results.items():
        print(f"{source:13s} val loss {r.history['val'][0]:.3f} -> {min(r.history['val']):.3f} "
              f"(best epoch {r.best_epoch}, {r.updates} updates)")

    models = {s: r.params for s, r in results.items()}
    rng = np.random.default_rng(3)
    gains = []
    for k in range(20):
        song = toy_song(rng, 3.0)
        refs = {"vocals": song["vocals"], "instrumental": song["instrumental"]}
        est = separate_song(song["mixture"], models, segment=TOY_SEGMENT, output_rate=TOY_RATE)
        sdr = evaluate_song(est, refs, f"song{k}")["vocals"].sdr
        # the unprocessed mixture as the estimate of every source
        base = evaluate_song({s: song["mixture"] for s in refs}, refs)["vocals"].sdr
        gains.append(sdr - base)
        print(f"song{k:02d} vocal SDR {sdr:6.2f} dB  (mixture {base:6.2f} dB)")
    print(f"median vocal SDR gain over the mixture: {np.median(gains):.2f} dB")


if __name__ == "__main__":
    main()
