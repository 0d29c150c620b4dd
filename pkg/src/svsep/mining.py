"""Turn (mix, instrumental) track pairs into (mix, instrumental, vocals) triplets.

Stages: duration filtering, cross-correlation alignment, RMS loudness
equalization, and a vocal estimate from the half-wave rectified difference
of the magnitude spectrograms rendered with the mixture phase.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import dsp
from .dataset import ESTIMATES, Manifest, TrackBundle
from .dsp import AudioClip, Spectrogram
from .errors import AlignmentError, InvalidInputError, ShapeError, SilentTrackError

log = logging.getLogger(__name__)

MAX_DURATION_DIFF_S = 2.0
MAX_DURATION_S = 300.0
MAX_LAG_S = 2.0
MIN_PEAK = 0.1
SILENCE_RMS = 1e-10

DURATION_MISMATCH = "duration-mismatch"
TOO_LONG = "too-long"
ALIGNMENT_FAILED = "alignment-failed"
SILENT_TRACK = "silent-track"
ERROR = "error"


@dataclass
class TrackPair:
    mix: AudioClip
    instrumental: AudioClip
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mix.sample_rate != self.instrumental.sample_rate:
            raise InvalidInputError("mix and instrumental must share a sample rate")

    @property
    def id(self) -> str:
        return str(self.metadata.get("id", ""))


@dataclass
class MinedTriplet:
    id: str
    mix: AudioClip
    instrumental: AudioClip
    vocals_estimate: Spectrogram
    vocals: AudioClip
    alignment_offset: int
    gain_applied: float
    metadata: dict = field(default_factory=dict)
    residual_stats: dict = field(default_factory=dict)


@dataclass
class Rejection:
    pair_id: str
    stage: str
    reason: str


@dataclass
class MiningResult:
    triplets: list
    rejections: list

    def counts_by_reason(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for r in self.rejections:
            out[r.reason] = out.get(r.reason, 0) + 1
        return out


def filter_pair(pair: TrackPair) -> tuple[bool, str]:
    """Accept unless durations differ by more than 2 s or the mix exceeds 5 minutes."""
    return filter_durations(pair.mix.duration_s, pair.instrumental.duration_s)


def filter_durations(dur_mix: float, dur_inst: float) -> tuple[bool, str]:
    if abs(dur_mix - dur_inst) > MAX_DURATION_DIFF_S:
        return False, DURATION_MISMATCH
    if dur_mix > MAX_DURATION_S:
        return False, TOO_LONG
    return True, ""


def _next_pow2(n: int) -> int:
    return 1 << int(np.ceil(np.log2(max(n, 2))))


def cross_correlation(mix: np.ndarray, inst: np.ndarray, max_lag: int) -> tuple[np.ndarray, np.ndarray]:
    """Normalized ``c[lag] = sum_n mix[n] inst[n - lag]`` for ``|lag| <= max_lag``."""
    nfft = _next_pow2(len(mix) + len(inst))
    c = np.fft.irfft(np.fft.rfft(mix, nfft) * np.conj(np.fft.rfft(inst, nfft)), nfft)
    lags = np.arange(-max_lag, max_lag + 1)
    norm = np.linalg.norm(mix) * np.linalg.norm(inst)
    return lags, c[lags % nfft] / norm if norm > 0 else np.zeros(len(lags))


def shift(x: np.ndarray, offset: int) -> np.ndarray:
    """``y[n] = x[n - offset]`` with zero fill."""
    y = np.zeros_like(x)
    n = x.shape[-1]
    if offset >= 0:
        y[..., offset:] = x[..., :n - offset] if offset < n else 0
    else:
        y[..., :n + offset] = x[..., -offset:]
    return y


def align(pair: TrackPair, max_lag_s: float = MAX_LAG_S) -> tuple[TrackPair, int]:
    """Shift the instrumental to best match the mix; both are cut to their common support.

    The offset is the integer lag maximizing the normalized cross-correlation
    of the mono downmixes: the aligned instrumental is ``inst[n - offset]``.
    """
    rate = pair.mix.sample_rate
    max_lag = int(round(max_lag_s * rate))
    if min(len(pair.mix), len(pair.instrumental)) < 2 * max_lag:
        raise InvalidInputError("clips must be at least twice the maximum lag long")
    lags, c = cross_correlation(pair.mix.mono(), pair.instrumental.mono(), max_lag)
    k = int(np.argmax(c))
    if c[k] < MIN_PEAK:
        raise AlignmentError(f"correlation peak {c[k]:.3f} below {MIN_PEAK}")
    offset = int(lags[k])
    # instrumental sample m lands at mix position m + offset
    start = max(0, offset)
    stop = min(len(pair.mix), len(pair.instrumental) + offset)
    mix = pair.mix.samples[:, start:stop]
    inst = pair.instrumental.samples[:, start - offset:stop - offset]
    return TrackPair(AudioClip(mix, rate), AudioClip(inst, rate), dict(pair.metadata)), offset


def _rms(clip: AudioClip) -> float:
    return float(np.sqrt(np.mean(clip.samples ** 2))) if len(clip) else 0.0


def equalize_loudness(pair: TrackPair) -> tuple[TrackPair, float]:
    """Scale the instrumental to the mix RMS; returns the applied gain in dB."""
    rm, ri = _rms(pair.mix), _rms(pair.instrumental)
    if rm < SILENCE_RMS or ri < SILENCE_RMS:
        raise SilentTrackError("cannot equalize a silent track")
    gain = rm / ri
    inst = AudioClip(pair.instrumental.samples * gain, pair.instrumental.sample_rate)
    return TrackPair(pair.mix, inst, dict(pair.metadata)), 20.0 * np.log10(gain)


def estimate_vocals(mix_spec: np.ndarray, inst_spec: np.ndarray) -> np.ndarray:
    """Half-wave rectified magnitude difference ``max(|M| - |I|, 0)``."""
    m = np.abs(np.asarray(mix_spec))
    i = np.abs(np.asarray(inst_spec))
    if m.shape != i.shape:
        raise ShapeError(f"shape mismatch {m.shape} vs {i.shape}")
    return np.maximum(m - i, 0.0)


def mine_pair(pair: TrackPair, window: int = 2048, hop: int = 512) -> MinedTriplet:
    """Run align, equalize and vocal estimation on an accepted pair."""
    aligned, offset = align(pair)
    eq, gain = equalize_loudness(aligned)
    mix, inst = eq.mix, eq.instrumental
    if mix.channels != inst.channels:
        mix, inst = mix.to_stereo(), inst.to_stereo()
    M = dsp.stft(mix, window, hop)
    I = dsp.stft(inst, window, hop)
    V = estimate_vocals(M.values, I.values)
    phase = np.exp(1j * np.angle(M.values))
    vocals = dsp.istft(Spectrogram(V * phase, hop, window, M.sample_rate, dsp.COMPLEX, M.length))
    mix_e = float(np.sum(np.abs(M.values) ** 2))
    stats = {"vocal_energy_ratio": float(np.sum(V ** 2)) / mix_e if mix_e > 0 else 0.0,
             "rectified_fraction": float(np.mean(np.abs(I.values) > np.abs(M.values)))}
    return MinedTriplet(pair.id, mix, inst,
                        Spectrogram(V, hop, window, M.sample_rate, dsp.MAGNITUDE, M.length),
                        vocals, offset, gain, dict(pair.metadata), stats)


def _process(pair: TrackPair, window: int, hop: int):
    ok, reason = filter_pair(pair)
    if not ok:
        return Rejection(pair.id, "filter", reason)
    try:
        return mine_pair(pair, window, hop)
    except AlignmentError:
        return Rejection(pair.id, "align", ALIGNMENT_FAILED)
    except SilentTrackError:
        return Rejection(pair.id, "equalize", SILENT_TRACK)
    except Exception as e:  # one bad pair must not stop the run
        log.warning("pair %s failed: %s", pair.id, e)
        return Rejection(pair.id, "mine", ERROR)


def mine_pipeline(pairs: Iterable[TrackPair], window: int = 2048, hop: int = 512,
                  jobs: int = 1) -> MiningResult:
    """Filter, align, equalize and estimate vocals for every pair.

    Output order follows input order regardless of ``jobs``.
    """
    pairs = list(pairs)
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            outcomes = list(ex.map(lambda p: _process(p, window, hop), pairs))
    else:
        outcomes = [_process(p, window, hop) for p in pairs]
    triplets = [o for o in outcomes if isinstance(o, MinedTriplet)]
    rejections = [o for o in outcomes if isinstance(o, Rejection)]
    return MiningResult(triplets, rejections)


def read_pair_manifest(path) -> list[tuple[dict, Path, Path]]:
    """Candidate pairs: JSON ``{"pairs": [{"id", "mix", "instrumental", ...metadata}]}``."""
    path = Path(path)
    data = json.loads(path.read_text())
    out = []
    for d in data["pairs"]:
        meta = {k: v for k, v in d.items() if k not in ("mix", "instrumental")}
        out.append((meta, path.parent / d["mix"], path.parent / d["instrumental"]))
    return out


def load_pairs(path) -> list[TrackPair]:
    return [TrackPair(dsp.read_wav(m), dsp.read_wav(i), meta) for meta, m, i in read_pair_manifest(path)]


def write_mining_outputs(result: MiningResult, out_dir) -> tuple[Path, Path]:
    """WAV files for each triplet, a dataset manifest and a rejection CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for t in result.triplets:
        paths = {}
        for name, clip in (("mixture", t.mix), ("instrumental", t.instrumental), ("vocals", t.vocals)):
            paths[name] = str(dsp.write_wav(out_dir / f"{t.id}.{name}.wav", clip))
        entries.append(TrackBundle(t.id, str(t.metadata.get("artist", t.id)),
                                   str(t.metadata.get("genre", "unknown")), t.mix.duration_s,
                                   paths["mixture"],
                                   {"vocals": paths["vocals"], "instrumental": paths["instrumental"]},
                                   ESTIMATES))
    manifest_path = Manifest(entries).save(out_dir / "manifest.json")
    report = out_dir / "rejections.csv"
    with report.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair_id", "stage", "reason"])
        for r in result.rejections:
            w.writerow([r.pair_id, r.stage, r.reason])
    stats = {t.id: {"offset": t.alignment_offset, "gain_db": t.gain_applied, **t.residual_stats}
             for t in result.triplets}
    (out_dir / "triplet_stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    return manifest_path, report
