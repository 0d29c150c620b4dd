"""Full-song separation by ratio masking of the mixture STFT.

Songs are cut into disjoint segment-length pieces (the last one zero-padded),
each piece is masked with ratio masks built from the per-source magnitude
estimates, inverted with the mixture phase, and the pieces are concatenated.
Segments are not cross-faded, so seams at segment boundaries are possible.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from . import dsp
from .dsp import AudioClip, SegmentSpec, Spectrogram, STANDARD_SEGMENT
from .errors import InvalidInputError, MissingSourceError, MissingStemError

TWO_STEM = "two_stem"
FOUR_STEM = "four_stem"
MODE_SOURCES = {TWO_STEM: ("vocals", "instrumental"), FOUR_STEM: ("vocals", "drums", "bass", "other")}
OUTPUT_SOURCES = ("vocals", "instrumental")

# Bins whose summed estimate falls below this get equal masks.
SILENT_FLOOR = 1e-8


def ratio_mask(estimates: Mapping[str, np.ndarray], source: str, floor: float = SILENT_FLOOR) -> np.ndarray:
    """``est[source] / sum(est)``; bins where the sum is below ``floor`` get ``1 / n_sources``."""
    if source not in estimates:
        raise MissingSourceError(f"no estimate for {source!r}")
    grids = list(estimates.values())
    if len({g.shape for g in grids}) != 1:
        raise InvalidInputError("estimates disagree in shape")
    total = np.zeros_like(grids[0], dtype=np.float64)
    for g in grids:
        total = total + g
    silent = total < floor
    safe = np.where(silent, 1.0, total)
    return np.where(silent, 1.0 / len(grids), estimates[source] / safe)


def combine_stems_to_instrumental(estimates: Mapping[str, np.ndarray]) -> np.ndarray:
    missing = [s for s in ("drums", "bass", "other") if s not in estimates]
    if missing:
        raise MissingStemError(f"missing stem estimates: {missing}")
    return estimates["drums"] + estimates["bass"] + estimates["other"]


def _two_stem_estimates(raw: Mapping[str, np.ndarray], mode: str) -> dict[str, np.ndarray]:
    if mode == FOUR_STEM:
        return {"vocals": raw["vocals"], "instrumental": combine_stems_to_instrumental(raw)}
    return {"vocals": raw["vocals"], "instrumental": raw["instrumental"]}


def mask_segment(mix: Spectrogram, estimates: Mapping[str, np.ndarray]) -> dict[str, Spectrogram]:
    """Apply ratio masks to a complex segment grid.

    ``mix`` may have one more bin than the estimates (the dropped top bin);
    that bin is split evenly between sources.
    """
    n_src = len(estimates)
    bins = next(iter(estimates.values())).shape[-1]
    out = {}
    for s in estimates:
        m = ratio_mask(estimates, s)
        if mix.values.shape[-1] > bins:
            extra = np.full(m.shape[:-1] + (mix.values.shape[-1] - bins,), 1.0 / n_src)
            m = np.concatenate([m, extra], axis=-1)
        out[s] = Spectrogram(m * mix.values, mix.hop, mix.window_size, mix.sample_rate,
                             dsp.COMPLEX, mix.length, mix.center)
    return out


def separate_song(clip: AudioClip, models: Mapping[str, Callable], mode: str = TWO_STEM,
                  segment: SegmentSpec = STANDARD_SEGMENT, output_rate: int = 44100) -> dict[str, AudioClip]:
    """Separate ``clip`` into vocals and instrumental.

    ``models`` maps each source of ``mode`` to a callable taking a magnitude
    grid of shape ``segment.shape`` and returning the source's magnitude
    estimate (a trained :class:`~svsep.model.ModelParams` qualifies).
    Outputs are at ``output_rate`` and as long as the input, in time.
    """
    if mode not in MODE_SOURCES:
        raise InvalidInputError(f"unknown mode {mode!r}")
    missing = [s for s in MODE_SOURCES[mode] if s not in models]
    if missing:
        raise MissingSourceError(f"no model for {missing}")
    n_in = len(clip)
    work = dsp.resample(clip.to_stereo(), segment.rate)
    seg_len = segment.samples
    n_seg = max(1, -(-len(work) // seg_len))
    padded = np.pad(work.samples, ((0, 0), (0, n_seg * seg_len - len(work))))

    pieces = {s: [] for s in OUTPUT_SOURCES}
    for k in range(n_seg):
        chunk = AudioClip(padded[:, k * seg_len:(k + 1) * seg_len], segment.rate)
        full = dsp.stft(chunk, segment.window, segment.hop)
        mag = np.abs(full.values[:, :, :segment.bins])
        raw = {s: np.maximum(np.asarray(models[s](mag), dtype=np.float64), 0.0) for s in MODE_SOURCES[mode]}
        masked = mask_segment(full, _two_stem_estimates(raw, mode))
        for s, spec in masked.items():
            pieces[s].append(dsp.istft(spec, length=seg_len).samples)

    out = {}
    for s in OUTPUT_SOURCES:
        y = AudioClip(np.concatenate(pieces[s], axis=1)[:, :len(work)], segment.rate)
        y = dsp.resample(y, output_rate)
        n_out = int(round(n_in * output_rate / clip.sample_rate))
        samples = y.samples[:, :n_out]
        if samples.shape[1] < n_out:
            samples = np.pad(samples, ((0, 0), (0, n_out - samples.shape[1])))
        out[s] = AudioClip(samples, output_rate)
    return out
