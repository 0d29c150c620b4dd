"""Synthetic songs for desk-scale experiments.

"Vocals" are a few sinusoids with vibrato and a syllable-like envelope in the
upper half of the band; "instruments" are low-passed noise. The two occupy
disjoint frequency regions, so a magnitude mask can separate them.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.signal

from . import dsp
from .dataset import Manifest, TrackBundle, TrainingSample, sample_from_clips
from .dsp import AudioClip, SegmentSpec

TOY_RATE = 8000
# 64 frames x 128 bins: 4032 samples at 8 kHz, window 256, hop 64
TOY_SEGMENT = SegmentSpec(duration_s=4032 / TOY_RATE, frames=64, bins=128, window=256, hop=64, rate=TOY_RATE)

VOCAL_BAND_HZ = (2200.0, 3700.0)
INSTRUMENT_CUTOFF_HZ = 1400.0


def _rms(x):
    return float(np.sqrt(np.mean(x ** 2)))


def toy_vocals(rng: np.random.Generator, n: int, rate: int = TOY_RATE) -> np.ndarray:
    t = np.arange(n) / rate
    out = np.zeros(n)
    for _ in range(int(rng.integers(2, 5))):
        f0 = rng.uniform(*VOCAL_BAND_HZ)
        vib = rng.uniform(5.0, 30.0) * np.sin(2 * np.pi * rng.uniform(3, 7) * t + rng.uniform(0, 2 * np.pi))
        phase = 2 * np.pi * np.cumsum(f0 + vib) / rate
        env = 0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(0.5, 3.0) * t + rng.uniform(0, 2 * np.pi)) ** 2
        out += rng.uniform(0.3, 1.0) * env * np.sin(phase + rng.uniform(0, 2 * np.pi))
    pan = rng.uniform(0.3, 0.7)
    return np.stack([np.sqrt(1 - pan) * out, np.sqrt(pan) * out])


def toy_instruments(rng: np.random.Generator, n: int, rate: int = TOY_RATE) -> np.ndarray:
    sos = scipy.signal.butter(8, INSTRUMENT_CUTOFF_HZ, fs=rate, output="sos")
    noise = rng.standard_normal((2, n + 512))
    common = rng.standard_normal(n + 512)
    width = rng.uniform(0.2, 0.8)
    x = scipy.signal.sosfilt(sos, width * noise + (1 - width) * common, axis=1)[:, 512:]
    t = np.arange(n) / rate
    env = 0.6 + 0.4 * np.abs(np.sin(2 * np.pi * rng.uniform(1.0, 4.0) * t))
    return x * env


def toy_song(rng: np.random.Generator, duration_s: float, rate: int = TOY_RATE,
             vocal_level_db: float = 0.0) -> dict[str, AudioClip]:
    """Mixture and its two sources, with vocals at ``vocal_level_db`` relative RMS."""
    n = int(round(duration_s * rate))
    v = toy_vocals(rng, n, rate)
    i = toy_instruments(rng, n, rate)
    i *= 0.1 / _rms(i)
    v *= 0.1 * 10 ** (vocal_level_db / 20) / _rms(v)
    return {"mixture": AudioClip(v + i, rate), "vocals": AudioClip(v, rate),
            "instrumental": AudioClip(i, rate)}


def toy_samples(count: int, seed: int, segment: SegmentSpec = TOY_SEGMENT,
                sources=("vocals", "instrumental")) -> list[TrainingSample]:
    """``count`` single-segment songs turned into training samples."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        song = toy_song(rng, segment.samples / segment.rate, segment.rate)
        out.append(sample_from_clips(song["mixture"], {s: song[s] for s in sources}, 0.0,
                                     segment, (f"toy{seed}-{k}", 0.0)))
    return out


def write_toy_dataset(out_dir, n_songs: int = 12, duration_s: float = 3.0, seed: int = 0,
                      fractions=(0.5, 0.25, 0.25)) -> Path:
    """Write toy songs as WAV files plus a manifest; returns the manifest path.

    Each song gets its own artist so any split is feasible.
    """
    from .dataset import split_by_artist

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    genres = ["pop", "rock"]
    for k in range(n_songs):
        song = toy_song(rng, duration_s)
        tid = f"song{k:03d}"
        paths = {}
        for name, clip in song.items():
            p = out_dir / f"{tid}.{name}.wav"
            dsp.write_wav(p, clip)
            paths[name] = str(p)
        entries.append(TrackBundle(tid, f"artist{k:03d}", genres[k % 2], duration_s, paths["mixture"],
                                   {"vocals": paths["vocals"], "instrumental": paths["instrumental"]}))
    manifest = split_by_artist(Manifest(entries), fractions, seed)
    return manifest.save(out_dir / "manifest.json")
