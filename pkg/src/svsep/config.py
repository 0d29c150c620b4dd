"""Experiment configuration: TOML file values overridden by command-line flags."""

from __future__ import annotations

import sys
import zlib
from dataclasses import dataclass, field, asdict, fields, replace
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dsp import SegmentSpec, STANDARD_SEGMENT
from .errors import InvalidInputError
from .model.train import TrainConfig
from .toy import TOY_SEGMENT

SEGMENT_PRESETS = {"standard": STANDARD_SEGMENT, "toy": TOY_SEGMENT}


@dataclass(frozen=True)
class ModelSection:
    depth: int = 5
    base_channels: int = 16
    dropout: float = 0.5


@dataclass(frozen=True)
class AugmentSection:
    kinds: tuple = ()
    probability: float = 1.0


@dataclass(frozen=True)
class EvaluationSection:
    filter_len: int = 16
    frame_s: float = 1.0
    alpha: float = 0.001


@dataclass(frozen=True)
class ExperimentConfig:
    manifest: str | None = None
    mode: str = "two_stem"
    seed: int = 0
    out: str | None = None
    segment: SegmentSpec = STANDARD_SEGMENT
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentSection = field(default_factory=AugmentSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augment"]["kinds"] = list(self.augment.kinds)
        return d

    def stage_seed(self, stage: str) -> int:
        """Deterministic per-stage seed derived from the global seed."""
        return int(np.random.SeedSequence([self.seed, zlib.crc32(stage.encode())]).generate_state(1)[0])


def _section(cls, values: dict, name: str):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise InvalidInputError(f"unknown keys in [{name}]: {sorted(unknown)}")
    if "kinds" in values:
        values = {**values, "kinds": tuple(values["kinds"])}
    return cls(**values)


def from_mapping(data: dict) -> ExperimentConfig:
    data = dict(data)
    top = {k: data.pop(k) for k in ("manifest", "mode", "seed", "out") if k in data}
    seg = data.pop("segment", {})
    if isinstance(seg, str):
        if seg not in SEGMENT_PRESETS:
            raise InvalidInputError(f"unknown segment preset {seg!r}")
        segment = SEGMENT_PRESETS[seg]
    else:
        segment = _section(SegmentSpec, seg, "segment") if seg else STANDARD_SEGMENT
    sections = {
        "model": _section(ModelSection, data.pop("model", {}), "model"),
        "train": _section(TrainConfig, data.pop("train", {}), "train"),
        "augment": _section(AugmentSection, data.pop("augment", {}), "augment"),
        "evaluation": _section(EvaluationSection, data.pop("evaluation", {}), "evaluation"),
    }
    if data:
        raise InvalidInputError(f"unknown config keys: {sorted(data)}")
    cfg = ExperimentConfig(segment=segment, **top, **sections)
    if cfg.mode not in ("two_stem", "four_stem"):
        raise InvalidInputError(f"mode must be two_stem or four_stem, got {cfg.mode!r}")
    return cfg


def load(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Read ``path`` (TOML) and apply ``overrides``.

    Override keys are dotted (``"train.epochs"``); ``None`` values are ignored.
    """
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise InvalidInputError(f"config file {p} does not exist")
        with p.open("rb") as fh:
            data = tomllib.load(fh)
        if "manifest" in data and not Path(data["manifest"]).is_absolute():
            data["manifest"] = str(p.parent / data["manifest"])
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        target = data
        *head, last = key.split(".")
        for h in head:
            if h == "segment" and isinstance(target.get(h), str):
                target[h] = SEGMENT_PRESETS[target[h]].to_dict()
            target = target.setdefault(h, {})
        target[last] = value
    return from_mapping(data)


def with_train(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    return replace(cfg, train=replace(cfg.train, **changes))
