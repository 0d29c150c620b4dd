"""Label-consistent augmentation of magnitude-spectrogram training samples.

Every transform is applied with the same drawn parameters to the mixture and
to all targets, so that the mixture stays consistent with its sources.
Random draws live in :func:`draw_spec`; :func:`apply` is deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dataset import TrainingSample
from .errors import InvalidInputError, InvalidSpecError

KINDS = ("swap", "stretch", "shift", "remix", "filter", "scale", "combined", "none")
COMBINED_PARTS = ("swap", "shift", "stretch", "remix")

STRETCH_RANGE = (0.7, 1.3)
SHIFT_RANGE = (0.7, 1.3)
REMIX_DB = (-9.0, 9.0)
FILTER_MU_HZ = (0.0, 4410.0)
FILTER_SIGMA_HZ = (500.0, 1000.0)
SCALE_DB = (-10.0, 10.0)
SWAP_PROBABILITY = 0.5


def db_to_gain(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 20.0)


@dataclass(frozen=True)
class AugmentationSpec:
    """A transform kind together with its realized random parameters.

    ``params`` keys: ``swap`` (bool), ``stretch`` and ``shift`` (factors),
    ``gains_db`` (source -> dB), ``mu_hz``, ``sigma_hz``, ``scale_db``.
    """

    kind: str
    params: Mapping = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind, "params": dict(self.params)}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "AugmentationSpec":
        d = json.loads(text)
        return cls(d["kind"], d["params"])


def draw_spec(kind: str, rng: np.random.Generator,
              sources: Sequence[str] = ("vocals", "instrumental")) -> AugmentationSpec:
    """Draw the random parameters for ``kind``.

    Log-scale ranges are drawn uniformly in dB.
    """
    if kind not in KINDS:
        raise InvalidSpecError(f"unknown augmentation kind {kind!r}")
    parts = COMBINED_PARTS if kind == "combined" else (kind,)
    p: dict = {}
    for part in parts:
        if part == "swap":
            p["swap"] = bool(rng.random() < SWAP_PROBABILITY)
        elif part == "stretch":
            p["stretch"] = float(rng.uniform(*STRETCH_RANGE))
        elif part == "shift":
            p["shift"] = float(rng.uniform(*SHIFT_RANGE))
        elif part == "remix":
            p["gains_db"] = {s: float(rng.uniform(*REMIX_DB)) for s in sources}
        elif part == "filter":
            p["mu_hz"] = float(rng.uniform(*FILTER_MU_HZ))
            p["sigma_hz"] = float(rng.uniform(*FILTER_SIGMA_HZ))
        elif part == "scale":
            p["scale_db"] = float(rng.uniform(*SCALE_DB))
    return AugmentationSpec(kind, p)


def inverse_gaussian_response(freqs_hz, mu_hz: float, sigma_hz: float) -> np.ndarray:
    """Notch response ``1 - exp(-(f - mu)^2 / (2 sigma^2))``."""
    f = np.asarray(freqs_hz, dtype=float)
    return 1.0 - np.exp(-((f - mu_hz) ** 2) / (2.0 * sigma_hz ** 2))


def _reflect(pos: np.ndarray, n: int) -> np.ndarray:
    if n == 1:
        return np.zeros_like(pos)
    period = 2 * (n - 1)
    pos = np.mod(pos, period)
    return np.where(pos > n - 1, period - pos, pos)


def _interp_axis(grid: np.ndarray, pos: np.ndarray, axis: int, fill_zero_beyond: bool) -> np.ndarray:
    n = grid.shape[axis]
    if fill_zero_beyond:
        valid = pos <= n - 1
        pos = np.where(valid, pos, 0.0)
    i0 = np.floor(pos).astype(int)
    frac = pos - i0
    i1 = np.minimum(i0 + 1, n - 1)
    shape = [1] * grid.ndim
    shape[axis] = len(pos)
    frac = frac.reshape(shape)
    out = np.take(grid, i0, axis=axis) * (1.0 - frac) + np.take(grid, i1, axis=axis) * frac
    if fill_zero_beyond:
        out = out * valid.reshape(shape)
    return out


def time_stretch(grid: np.ndarray, factor: float) -> np.ndarray:
    """Rescale the frame axis about its centre; out-of-range frames are reflected."""
    if factor == 1.0:
        return grid.copy()
    frames = grid.shape[-2]
    c = frames / 2.0
    pos = c + (np.arange(frames) - c) * factor
    return _interp_axis(grid, _reflect(pos, frames), axis=-2, fill_zero_beyond=False)


def pitch_shift(grid: np.ndarray, factor: float) -> np.ndarray:
    """Rescale the bin axis keeping bin 0 fixed; bins beyond the top are zero."""
    if factor == 1.0:
        return grid.copy()
    bins = grid.shape[-1]
    pos = np.arange(bins) / factor
    return _interp_axis(grid, pos, axis=-1, fill_zero_beyond=True)


def remix_mixture(targets: Mapping[str, np.ndarray], gains_db: Mapping[str, float]):
    """Scale each target by its gain and rebuild the mixture as their sum.

    Returns ``(mixture, scaled_targets)``. Sources without a gain keep 0 dB.
    """
    if not targets:
        raise InvalidInputError("remix needs at least one target")
    shapes = {t.shape for t in targets.values()}
    if len(shapes) != 1:
        raise InvalidInputError("targets disagree in shape")
    scaled = {s: float(db_to_gain(gains_db.get(s, 0.0))) * t for s, t in targets.items()}
    mixture = np.zeros(next(iter(shapes)))
    for t in scaled.values():
        mixture = mixture + t
    return mixture, scaled


def apply(sample: TrainingSample, spec: AugmentationSpec,
          sample_rate: int = 22050, window_size: int = 2048) -> TrainingSample:
    """Apply ``spec`` to the mixture and every target of ``sample``.

    ``sample_rate`` and ``window_size`` locate the bin centre frequencies
    (``k * sample_rate / window_size``) for the filter transform.
    """
    if spec.kind not in KINDS:
        raise InvalidSpecError(f"unknown augmentation kind {spec.kind!r}")
    p = spec.params
    parts = COMBINED_PARTS if spec.kind == "combined" else (() if spec.kind == "none" else (spec.kind,))
    mixture = sample.mixture
    targets = dict(sample.targets)

    def each(fn):
        nonlocal mixture, targets
        mixture = fn(mixture)
        targets = {s: fn(t) for s, t in targets.items()}

    for part in parts:
        if part == "swap":
            if p["swap"]:
                each(lambda g: g[::-1].copy())
        elif part == "stretch":
            each(lambda g: time_stretch(g, p["stretch"]))
        elif part == "shift":
            each(lambda g: pitch_shift(g, p["shift"]))
        elif part == "remix":
            if any(p["gains_db"].get(s, 0.0) != 0.0 for s in targets):
                mixture, targets = remix_mixture(targets, p["gains_db"])
        elif part == "filter":
            freqs = np.arange(mixture.shape[-1]) * sample_rate / window_size
            response = inverse_gaussian_response(freqs, p["mu_hz"], p["sigma_hz"])
            each(lambda g: g * response)
        elif part == "scale":
            if p["scale_db"] != 0.0:
                gain = float(db_to_gain(p["scale_db"]))
                each(lambda g: g * gain)
    return TrainingSample(mixture, targets, sample.provenance + (spec.kind,))


def random_augmenter(kinds: Sequence[str], probability: float = 1.0, sample_rate: int = 22050,
                     window_size: int = 2048):
    """Return ``f(sample, rng)`` picking one of ``kinds`` with the given probability."""
    for k in kinds:
        if k not in KINDS:
            raise InvalidSpecError(f"unknown augmentation kind {k!r}")

    def augment(sample: TrainingSample, rng: np.random.Generator) -> TrainingSample:
        if not kinds or rng.random() >= probability:
            return sample
        kind = kinds[int(rng.integers(len(kinds)))]
        spec = draw_spec(kind, rng, tuple(sample.targets))
        return apply(sample, spec, sample_rate, window_size)

    return augment
