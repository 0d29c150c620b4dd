"""Signal-processing primitives: STFT/iSTFT, resampling, fixed-shape segmentation and WAV I/O.

Arrays follow a channel-first layout everywhere:

* audio samples: ``(channels, samples)``
* spectrogram values: ``(channels, frames, bins)``

All computation is carried out in float64 / complex128. Values are converted
to 32-bit only when written to disk.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy.io.wavfile
import scipy.signal

from .errors import InvalidInputError, KindMismatchError, SegmentOutOfRangeError

COMPLEX = "complex"
MAGNITUDE = "magnitude"

# Overlap-add window sums at or below this are treated as zero.
_WSUM_FLOOR = np.finfo(np.float64).tiny


@dataclass(frozen=True)
class AudioClip:
    """Multichannel PCM signal.

    ``samples`` has shape ``(channels, n)``; a 1-D array is promoted to mono.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim == 1:
            x = x[np.newaxis, :]
        if x.ndim != 2:
            raise InvalidInputError(f"samples must be 1-D or 2-D, got shape {x.shape}")
        if int(self.sample_rate) <= 0:
            raise InvalidInputError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    def __len__(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate

    def to_stereo(self) -> "AudioClip":
        if self.channels == 2:
            return self
        if self.channels == 1:
            return AudioClip(np.repeat(self.samples, 2, axis=0), self.sample_rate)
        raise InvalidInputError(f"cannot convert {self.channels} channels to stereo")

    def mono(self) -> np.ndarray:
        """Channel average as a 1-D array."""
        return self.samples.mean(axis=0)


@dataclass(frozen=True)
class Spectrogram:
    """Time-frequency grid indexed ``(channel, frame, bin)``.

    ``length`` is the number of time-domain samples the grid was computed
    from, when known; :func:`istft` uses it to restore the exact length.
    """

    values: np.ndarray
    hop: int
    window_size: int
    sample_rate: int
    kind: str = COMPLEX
    length: int | None = None
    center: bool = True

    def __post_init__(self):
        if self.kind not in (COMPLEX, MAGNITUDE):
            raise InvalidInputError(f"unknown spectrogram kind {self.kind!r}")
        if self.values.ndim != 3:
            raise InvalidInputError(f"values must be (channel, frame, bin), got {self.values.shape}")
        if self.values.shape[2] > self.window_size // 2 + 1:
            raise InvalidInputError("more bins than window_size/2 + 1")

    @property
    def shape(self):
        return self.values.shape

    def magnitude(self) -> "Spectrogram":
        if self.kind == MAGNITUDE:
            return self
        return Spectrogram(np.abs(self.values), self.hop, self.window_size,
                           self.sample_rate, MAGNITUDE, self.length, self.center)


@dataclass(frozen=True)
class SegmentSpec:
    """Fixed segment geometry fed to the network.

    The defaults give 11.88 s at 22050 Hz, i.e. a ``(2, 512, 1024)`` grid
    with a 2048-sample window and a 512-sample hop once the top bin is dropped.
    """

    duration_s: float = 11.88
    frames: int = 512
    bins: int = 1024
    window: int = 2048
    hop: int = 512
    rate: int = 22050

    def __post_init__(self):
        for name in ("frames", "bins"):
            v = getattr(self, name)
            if v <= 0 or v & (v - 1):
                raise InvalidInputError(f"{name} must be a power of two, got {v}")
        if self.bins != self.window // 2:
            raise InvalidInputError("bins must equal window/2 (top bin dropped)")
        if 1 + self.samples // self.hop != self.frames:
            raise InvalidInputError(
                f"{self.samples} samples with hop {self.hop} give "
                f"{1 + self.samples // self.hop} frames, not {self.frames}")

    @property
    def samples(self) -> int:
        return int(round(self.duration_s * self.rate))

    @property
    def shape(self) -> tuple[int, int, int]:
        return (2, self.frames, self.bins)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("duration_s", "frames", "bins", "window", "hop", "rate")}


STANDARD_SEGMENT = SegmentSpec()


def hann(window_size: int) -> np.ndarray:
    """Periodic Hann window."""
    return scipy.signal.get_window("hann", window_size, fftbins=True)


def stft(clip: AudioClip, window_size: int = 2048, hop: int = 512, center: bool = True) -> Spectrogram:
    """Complex STFT with a periodic Hann window.

    With ``center=True`` the signal is reflect-padded by half a window on both
    sides, giving ``1 + len(clip) // hop`` frames. Otherwise frames start at
    sample 0 and only full windows are kept.
    """
    if window_size <= 0 or window_size % 2:
        raise InvalidInputError(f"window_size must be positive and even, got {window_size}")
    if hop <= 0 or hop > window_size:
        raise InvalidInputError(f"hop must be in (0, window_size], got {hop}")
    n = len(clip)
    if n == 0:
        raise InvalidInputError("cannot transform an empty clip")
    x = clip.samples
    if center:
        half = window_size // 2
        x = np.pad(x, ((0, 0), (half, half)), mode="reflect" if n > 1 else "edge")
    elif n < window_size:
        raise InvalidInputError("clip shorter than one window")
    n_frames = 1 + (x.shape[1] - window_size) // hop
    frames = np.lib.stride_tricks.sliding_window_view(x, window_size, axis=1)[:, ::hop][:, :n_frames]
    values = np.fft.rfft(frames * hann(window_size), axis=-1)
    return Spectrogram(values, hop, window_size, clip.sample_rate, COMPLEX, n, center)


def istft(spec: Spectrogram, hop: int | None = None, length: int | None = None) -> AudioClip:
    """Invert a complex STFT by weighted overlap-add.

    Least-squares synthesis: each frame is multiplied by the analysis window
    and the sum is divided by the summed squared windows. A grid whose top
    bin was dropped gets it back as zeros.
    """
    if spec.kind != COMPLEX:
        raise KindMismatchError("istft needs a complex spectrogram")
    hop = spec.hop if hop is None else hop
    window_size = spec.window_size
    values = spec.values
    full_bins = window_size // 2 + 1
    if values.shape[2] < full_bins:
        pad = full_bins - values.shape[2]
        values = np.concatenate([values, np.zeros(values.shape[:2] + (pad,), values.dtype)], axis=2)
    channels, n_frames, _ = values.shape
    win = hann(window_size)
    frames = np.fft.irfft(values, n=window_size, axis=-1) * win
    total = window_size + hop * (n_frames - 1)
    out = np.zeros((channels, total))
    wsum = np.zeros(total)
    for t in range(n_frames):
        s = t * hop
        out[:, s:s + window_size] += frames[:, t]
        wsum[s:s + window_size] += win * win
    nz = wsum > _WSUM_FLOOR
    out[:, nz] /= wsum[nz]
    out[:, ~nz] = 0.0
    if spec.center:
        out = out[:, window_size // 2:]
        default_len = hop * (n_frames - 1)
    else:
        default_len = total
    if length is None:
        length = spec.length if spec.length is not None else default_len
    if out.shape[1] >= length:
        out = out[:, :length]
    else:
        out = np.pad(out, ((0, 0), (0, length - out.shape[1])))
    return AudioClip(out, spec.sample_rate)


def _resample_filter(up: int, down: int) -> np.ndarray:
    # 64 taps per polyphase branch, Kaiser(8) windowed sinc.
    factor = max(up, down)
    n_taps = 64 * factor + 1
    return scipy.signal.firwin(n_taps, 1.0 / factor, window=("kaiser", 8.0)) * up


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Band-limited polyphase resampling to ``target_rate``.

    The output has ``round(len * target / source)`` samples.
    """
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise InvalidInputError(f"target_rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return clip
    ratio = Fraction(target_rate, clip.sample_rate)
    up, down = ratio.numerator, ratio.denominator
    n_out = int(round(len(clip) * target_rate / clip.sample_rate))
    if len(clip) == 0:
        return AudioClip(np.zeros((clip.channels, 0)), target_rate)
    y = scipy.signal.resample_poly(clip.samples, up, down, axis=1, window=_resample_filter(up, down))
    if y.shape[1] >= n_out:
        y = y[:, :n_out]
    else:
        y = np.pad(y, ((0, 0), (0, n_out - y.shape[1])))
    return AudioClip(y, target_rate)


def excerpt(clip: AudioClip, spec: SegmentSpec, offset_s: float) -> AudioClip:
    """Cut the ``spec.samples``-long stereo excerpt starting at ``offset_s``."""
    if clip.sample_rate != spec.rate:
        raise InvalidInputError(f"clip is at {clip.sample_rate} Hz, segment expects {spec.rate} Hz")
    start = int(round(offset_s * spec.rate))
    stop = start + spec.samples
    if start < 0 or stop > len(clip):
        raise SegmentOutOfRangeError(
            f"segment [{start}, {stop}) outside clip of {len(clip)} samples")
    return AudioClip(clip.to_stereo().samples[:, start:stop], clip.sample_rate)


def segment_complex(clip: AudioClip, spec: SegmentSpec = STANDARD_SEGMENT) -> Spectrogram:
    """Complex grid of a segment-length stereo clip with the top bin dropped."""
    s = stft(clip.to_stereo(), spec.window, spec.hop)
    return Spectrogram(s.values[:, :, :spec.bins], s.hop, s.window_size, s.sample_rate,
                       COMPLEX, s.length, s.center)


def segment_to_standard(clip: AudioClip, spec: SegmentSpec = STANDARD_SEGMENT,
                        offset_s: float = 0.0) -> Spectrogram:
    """Magnitude grid of shape ``(2, spec.frames, spec.bins)`` starting at ``offset_s``."""
    return segment_complex(excerpt(clip, spec, offset_s), spec).magnitude()


def read_wav(path) -> AudioClip:
    """Read a 16-bit PCM or 32-bit float RIFF WAV file into [-1, 1] floats."""
    rate, data = scipy.io.wavfile.read(path)
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        x = data.astype(np.float64)
    else:
        raise InvalidInputError(f"{path}: unsupported WAV sample type {data.dtype}")
    x = x.T if x.ndim == 2 else x
    return AudioClip(x, rate)


def write_wav(path, clip: AudioClip, subtype: str = "float32") -> Path:
    """Write ``clip`` as a little-endian RIFF WAV (``float32`` or ``pcm16``)."""
    if clip.channels not in (1, 2):
        raise InvalidInputError("only mono and stereo WAV files are supported")
    x = clip.samples.T
    if subtype == "float32":
        data = x.astype(np.float32)
    elif subtype == "pcm16":
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise InvalidInputError(f"unknown WAV subtype {subtype!r}")
    if clip.channels == 1:
        data = data[:, 0]
    path = Path(path)
    scipy.io.wavfile.write(path, clip.sample_rate, data)
    return path
