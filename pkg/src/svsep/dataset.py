"""Track bundles, JSON manifests, artist-disjoint splits and genre rebalancing."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import dsp
from .dsp import AudioClip, SegmentSpec, STANDARD_SEGMENT
from .errors import (InfeasibleSplitError, InvalidInputError, MissingGenreError,
                     MissingStemError)

MANIFEST_VERSION = 1
STEM_NAMES = ("vocals", "drums", "bass", "other", "instrumental")
SPLIT_PARTS = ("train", "val", "test")
SEPARATED = "separated-recordings"
ESTIMATES = "estimates"

INTRO_S = 20.0
OUTRO_S = 20.0


@dataclass(frozen=True)
class TrackBundle:
    id: str
    artist: str
    genre: str
    duration_s: float
    mixture: str
    stems: Mapping[str, str]
    quality: str = SEPARATED

    def __post_init__(self):
        if not self.stems:
            raise InvalidInputError(f"track {self.id!r} has no stems")
        unknown = set(self.stems) - set(STEM_NAMES)
        if unknown:
            raise InvalidInputError(f"track {self.id!r}: unknown stems {sorted(unknown)}")
        object.__setattr__(self, "genre", self.genre.lower())

    def has_stem(self, name: str) -> bool:
        if name in self.stems:
            return True
        return name == "instrumental" and all(s in self.stems for s in ("drums", "bass", "other"))

    def to_dict(self) -> dict:
        return {"id": self.id, "artist": self.artist, "genre": self.genre,
                "duration_s": self.duration_s, "mixture": self.mixture,
                "stems": dict(self.stems), "quality": self.quality}


@dataclass(frozen=True)
class Manifest:
    """Immutable collection of tracks with an optional split assignment.

    File paths inside entries are absolute once loaded; :meth:`save` writes
    them relative to the manifest's directory when possible.
    """

    entries: tuple[TrackBundle, ...]
    split: Mapping[str, str] = field(default_factory=dict)
    genre_distribution: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("duplicate track ids in manifest")
        bad = set(self.split.values()) - set(SPLIT_PARTS)
        if bad:
            raise InvalidInputError(f"unknown split parts {sorted(bad)}")
        if not self.genre_distribution and self.entries:
            object.__setattr__(self, "genre_distribution", genre_distribution(self.entries))

    def __len__(self):
        return len(self.entries)

    def by_id(self, track_id: str) -> TrackBundle:
        for e in self.entries:
            if e.id == track_id:
                return e
        raise KeyError(track_id)

    def part(self, name: str) -> list[TrackBundle]:
        return [e for e in self.entries if self.split.get(e.id) == name]

    def artists_by_part(self) -> dict[str, set[str]]:
        out = {p: set() for p in SPLIT_PARTS}
        for e in self.entries:
            if e.id in self.split:
                out[self.split[e.id]].add(e.artist)
        return out

    def to_dict(self, base_dir: Path | None = None) -> dict:
        def rel(p):
            if base_dir is None:
                return p
            try:
                return Path(p).resolve().relative_to(base_dir.resolve()).as_posix()
            except ValueError:
                return str(p)

        entries = []
        for e in self.entries:
            d = e.to_dict()
            d["mixture"] = rel(d["mixture"])
            d["stems"] = {k: rel(v) for k, v in d["stems"].items()}
            entries.append(d)
        return {"version": MANIFEST_VERSION, "entries": entries,
                "split": dict(sorted(self.split.items())),
                "genre_distribution": dict(sorted(self.genre_distribution.items()))}

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(path.parent), indent=2) + "\n")
        return path

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | None = None) -> "Manifest":
        version = data.get("version", MANIFEST_VERSION)
        if version != MANIFEST_VERSION:
            raise InvalidInputError(f"unsupported manifest version {version}")

        def resolve(p):
            p = Path(p)
            return str(p if p.is_absolute() or base_dir is None else base_dir / p)

        entries = [TrackBundle(id=str(d["id"]), artist=str(d["artist"]), genre=str(d.get("genre", "")),
                               duration_s=float(d.get("duration_s", 0.0)),
                               mixture=resolve(d["mixture"]),
                               stems={k: resolve(v) for k, v in d["stems"].items()},
                               quality=d.get("quality", SEPARATED))
                   for d in data["entries"]]
        return cls(entries, dict(data.get("split", {})),
                   {k.lower(): float(v) for k, v in data.get("genre_distribution", {}).items()})

    @classmethod
    def load(cls, path, check_files: bool = True) -> "Manifest":
        path = Path(path)
        m = cls.from_dict(json.loads(path.read_text()), path.parent)
        if check_files:
            for e in m.entries:
                for p in [e.mixture, *e.stems.values()]:
                    if not Path(p).exists():
                        raise FileNotFoundError(f"track {e.id!r}: missing file {p}")
        return m


def genre_distribution(entries: Sequence[TrackBundle]) -> dict[str, float]:
    counts: dict[str, int] = {}
    for e in entries:
        counts[e.genre] = counts.get(e.genre, 0) + 1
    n = len(entries)
    return {g: c / n for g, c in sorted(counts.items())}


def split_by_artist(manifest: Manifest, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> Manifest:
    """Assign whole artists to train/val/test.

    Artists are visited largest-first (ties broken by a seeded shuffle) and
    each goes to the part furthest below its requested track count. Every
    part with a nonzero fraction receives at least one artist.
    """
    fr = np.asarray(fractions, dtype=float)
    if fr.shape != (3,) or np.any(fr < 0) or not math.isclose(fr.sum(), 1.0, abs_tol=1e-9):
        raise InvalidInputError(f"fractions must be three nonnegative values summing to 1, got {fractions}")
    tracks_by_artist: dict[str, list[str]] = {}
    for e in manifest.entries:
        tracks_by_artist.setdefault(e.artist, []).append(e.id)
    artists = sorted(tracks_by_artist)
    needed = [i for i in range(3) if fr[i] > 0]
    if len(artists) < len(needed):
        raise InfeasibleSplitError(
            f"{len(artists)} artist(s) cannot fill {len(needed)} nonzero split parts")

    rng = np.random.default_rng(seed)
    order = [artists[i] for i in rng.permutation(len(artists))]
    order.sort(key=lambda a: -len(tracks_by_artist[a]))  # stable: shuffle breaks ties

    target = fr * len(manifest.entries)
    assigned = np.zeros(3)
    members: list[list[str]] = [[], [], []]
    for i, artist in enumerate(order):
        remaining = len(order) - i
        empty = [p for p in needed if not members[p]]
        candidates = empty if remaining <= len(empty) else needed
        deficit = {p: target[p] - assigned[p] for p in candidates}
        part = max(candidates, key=lambda p: (deficit[p], -p))
        members[part].append(artist)
        assigned[part] += len(tracks_by_artist[artist])

    split = {}
    for p, names in enumerate(members):
        for a in names:
            for tid in tracks_by_artist[a]:
                split[tid] = SPLIT_PARTS[p]
    return replace(manifest, split=split)


def _apportion(weights: dict[str, float], total: int) -> dict[str, int]:
    """Largest-remainder apportionment of ``total`` items."""
    quotas = {g: w * total for g, w in weights.items()}
    base = {g: int(math.floor(q + 1e-9)) for g, q in quotas.items()}
    left = total - sum(base.values())
    by_remainder = sorted(weights, key=lambda g: (-(quotas[g] - base[g]), g))
    for g in by_remainder[:max(left, 0)]:
        base[g] += 1
    return base


def rebalance_genres(manifest: Manifest, target: Mapping[str, float], seed: int = 0) -> Manifest:
    """Subsample tracks so the genre distribution matches ``target``.

    The retained total is set by the limiting genre, ``min(count / fraction)``,
    and split by largest remainders, so each genre ends within one track of
    its target share. Genres absent from ``target`` are dropped. Tracks are never
    duplicated.
    """
    target = {g.lower(): float(f) for g, f in target.items()}
    if any(f < 0 for f in target.values()) or not math.isclose(sum(target.values()), 1.0, abs_tol=1e-6):
        raise InvalidInputError("target fractions must be nonnegative and sum to 1")
    by_genre: dict[str, list[TrackBundle]] = {}
    for e in manifest.entries:
        by_genre.setdefault(e.genre, []).append(e)
    missing = [g for g in target if g not in by_genre]
    if missing:
        raise MissingGenreError(f"target genres absent from manifest: {sorted(missing)}")

    active = {g: f for g, f in target.items() if f > 0}
    counts = {g: len(by_genre[g]) for g in active}
    upper = min(counts[g] / f for g, f in active.items())
    k_total = min(sum(counts.values()), int(math.floor(upper + 1e-9)))
    while k_total > 0:
        alloc = _apportion(active, k_total)
        if all(alloc[g] <= counts[g] for g in active):
            break
        k_total -= 1
    else:
        alloc = {g: 0 for g in active}

    rng = np.random.default_rng(seed)
    keep: set[str] = set()
    for g in sorted(active):
        tracks = by_genre[g]
        idx = rng.choice(len(tracks), size=alloc[g], replace=False)
        keep.update(tracks[i].id for i in idx)
    entries = tuple(e for e in manifest.entries if e.id in keep)
    split = {k: v for k, v in manifest.split.items() if k in keep}
    return Manifest(entries, split, genre_distribution(entries) if entries else {})


def select_segment_offset(duration_s: float, rng: np.random.Generator,
                          segment_s: float = STANDARD_SEGMENT.duration_s) -> float:
    """Random segment start avoiding the first and last 20 s.

    Tracks too short for that fall back to any position in the track; tracks
    shorter than one segment get offset 0.
    """
    hi = duration_s - OUTRO_S - segment_s
    if hi >= INTRO_S:
        return float(rng.uniform(INTRO_S, hi)) if hi > INTRO_S else INTRO_S
    hi = duration_s - segment_s
    if hi > 0:
        return float(rng.uniform(0.0, hi))
    return 0.0


@dataclass(frozen=True)
class TrainingSample:
    """Aligned magnitude grids: the mixture and one target per source."""

    mixture: np.ndarray
    targets: Mapping[str, np.ndarray]
    provenance: tuple = ()

    def __post_init__(self):
        shapes = {self.mixture.shape} | {t.shape for t in self.targets.values()}
        if len(shapes) != 1:
            raise InvalidInputError(f"sample grids disagree in shape: {sorted(shapes)}")


def load_stem(bundle: TrackBundle, name: str, rate: int) -> AudioClip:
    """Read one stem at ``rate``, summing drums+bass+other for a missing instrumental."""
    if name in bundle.stems:
        return dsp.resample(dsp.read_wav(bundle.stems[name]), rate)
    if name == "instrumental" and bundle.has_stem("instrumental"):
        parts = [load_stem(bundle, s, rate).to_stereo() for s in ("drums", "bass", "other")]
        n = min(len(p) for p in parts)
        return AudioClip(sum(p.samples[:, :n] for p in parts), rate)
    raise MissingStemError(f"track {bundle.id!r} has no {name!r} stem")


def load_track_audio(bundle: TrackBundle, sources: Sequence[str], rate: int):
    """Mixture and source clips resampled to ``rate``; cached by callers."""
    for s in sources:
        if not bundle.has_stem(s):
            raise MissingStemError(f"track {bundle.id!r} has no {s!r} stem")
    mixture = dsp.resample(dsp.read_wav(bundle.mixture), rate)
    return mixture, {s: load_stem(bundle, s, rate) for s in sources}


def sample_from_clips(mixture: AudioClip, sources: Mapping[str, AudioClip], offset_s: float,
                      segment: SegmentSpec = STANDARD_SEGMENT, provenance: tuple = ()) -> TrainingSample:
    mix = dsp.segment_to_standard(mixture, segment, offset_s).values
    targets = {s: dsp.segment_to_standard(c, segment, offset_s).values for s, c in sources.items()}
    return TrainingSample(mix, targets, provenance)


def load_training_sample(bundle: TrackBundle, sources: Sequence[str], offset_s: float,
                         segment: SegmentSpec = STANDARD_SEGMENT) -> TrainingSample:
    """Segment the mixture and each requested source at the same offset."""
    mixture, clips = load_track_audio(bundle, sources, segment.rate)
    return sample_from_clips(mixture, clips, offset_s, segment, (bundle.id, offset_s))
