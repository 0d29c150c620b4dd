"""Command-line experiment driver.

Every subcommand writes its artifacts plus a ``run.json`` describing the
configuration, seed and library versions. Exit status is 0 on success,
2 for usage or configuration errors and 1 when a pipeline stage fails.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__, augment, config as config_mod, dataset, dsp, evaluation, mining, separation
from .errors import InvalidInputError, SvsepError
from .model import checkpoint
from .model.train import train as train_models
from .model.unet import UNetConfig

log = logging.getLogger("svsep")


class StageError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


def _versions() -> dict:
    return {"svsep": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def write_run_metadata(out_dir: Path, command: str, cfg, extra: dict | None = None, name: str = "run.json"):
    meta = {"command": command, "seed": cfg.seed, "config": cfg.to_dict(), "versions": _versions()}
    meta.update(extra or {})
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / name).write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")


def _config(args) -> config_mod.ExperimentConfig:
    overrides = {
        "seed": args.seed, "out": getattr(args, "out", None),
        "manifest": getattr(args, "manifest", None), "mode": getattr(args, "mode", None),
        "segment": getattr(args, "segment", None),
        "train.epochs": getattr(args, "epochs", None),
        "train.steps_per_epoch": getattr(args, "steps_per_epoch", None),
        "train.patience": getattr(args, "patience", None),
        "train.learning_rate": getattr(args, "lr", None),
        "model.depth": getattr(args, "depth", None),
        "model.base_channels": getattr(args, "base_channels", None),
        "augment.kinds": getattr(args, "augment", None),
        "augment.probability": getattr(args, "augment_prob", None),
        "evaluation.filter_len": getattr(args, "filter_len", None),
        "evaluation.alpha": getattr(args, "alpha", None),
    }
    if overrides["out"] is not None:
        overrides["out"] = str(overrides["out"])
    if overrides["manifest"] is not None:
        overrides["manifest"] = str(overrides["manifest"])
    return config_mod.load(args.config, overrides)


def _require(value, flag: str):
    if value is None:
        raise InvalidInputError(f"{flag} is required (flag or config file)")
    return value


def _sources(mode: str) -> tuple:
    return separation.MODE_SOURCES[mode]


# --- subcommands -----------------------------------------------------------

def cmd_mine(args, cfg):
    out = Path(_require(cfg.out, "--out"))
    try:
        pairs = mining.load_pairs(args.pairs)
    except (OSError, KeyError, ValueError) as e:
        raise StageError("mine/load", str(e)) from e
    result = mining.mine_pipeline(pairs, jobs=args.jobs)
    manifest_path, report = mining.write_mining_outputs(result, out)
    write_run_metadata(out, "mine", cfg, {"pairs": str(args.pairs), "triplets": len(result.triplets),
                                          "rejections": result.counts_by_reason()})
    print(f"{len(result.triplets)} triplets, {len(result.rejections)} rejected -> {manifest_path}")


def cmd_dataset_split(args, cfg):
    m = dataset.Manifest.load(_require(cfg.manifest, "--manifest"), check_files=False)
    split = dataset.split_by_artist(m, tuple(args.fractions), cfg.stage_seed("dataset-split"))
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    split.save(out)
    counts = {p: len(split.part(p)) for p in dataset.SPLIT_PARTS}
    write_run_metadata(out.parent, "dataset-split", cfg, {"fractions": list(args.fractions), "counts": counts},
                       name=out.stem + ".run.json")
    print(json.dumps(counts))


def _parse_target(items) -> dict:
    target = {}
    for item in items:
        if "=" not in item:
            raise InvalidInputError(f"target must be genre=fraction, got {item!r}")
        g, f = item.split("=", 1)
        target[g] = float(f)
    return target


def cmd_dataset_rebalance(args, cfg):
    m = dataset.Manifest.load(_require(cfg.manifest, "--manifest"), check_files=False)
    if args.target_manifest:
        target = dataset.Manifest.load(args.target_manifest, check_files=False).genre_distribution
    else:
        target = _parse_target(args.target or [])
    out_m = dataset.rebalance_genres(m, target, cfg.stage_seed("dataset-rebalance"))
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out_m.save(out)
    write_run_metadata(out.parent, "dataset-rebalance", cfg, {"target": target, "retained": len(out_m)},
                       name=out.stem + ".run.json")
    print(f"retained {len(out_m)} of {len(m)} tracks")


def cmd_augment_preview(args, cfg):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(_require(cfg.out, "--out"))
    out.mkdir(parents=True, exist_ok=True)
    m = dataset.Manifest.load(_require(cfg.manifest, "--manifest"))
    bundle = m.by_id(args.track) if args.track else m.entries[0]
    seg = cfg.segment
    rng = np.random.default_rng(cfg.stage_seed("augment-preview"))
    sources = [s for s in ("vocals", "instrumental") if bundle.has_stem(s)]
    offset = dataset.select_segment_offset(bundle.duration_s, rng, seg.duration_s)
    sample = dataset.load_training_sample(bundle, sources, offset, seg)
    spec = augment.draw_spec(args.kind, rng, tuple(sources))
    after = augment.apply(sample, spec, seg.rate, seg.window)
    (out / "augmentation.json").write_text(spec.to_json() + "\n")

    fig, axes = plt.subplots(2, 1 + len(sources), figsize=(4 * (1 + len(sources)), 6), squeeze=False)
    for row, (label, s) in enumerate((("before", sample), ("after", after))):
        grids = [("mixture", s.mixture)] + [(k, s.targets[k]) for k in sources]
        for col, (name, g) in enumerate(grids):
            ax = axes[row, col]
            ax.imshow(20 * np.log10(g[0].T + 1e-6), origin="lower", aspect="auto", cmap="magma")
            ax.set_title(f"{name} ({label})")
        for name, g in grids:
            zero_phase = dsp.Spectrogram(g.astype(complex), seg.hop, seg.window, seg.rate, dsp.COMPLEX, seg.samples)
            dsp.write_wav(out / f"{name}.{label}.wav", dsp.istft(zero_phase))
    fig.tight_layout()
    fig.savefig(out / "preview.png", dpi=80)
    plt.close(fig)
    write_run_metadata(out, "augment-preview", cfg, {"track": bundle.id, "offset_s": offset,
                                                     "augmentation": json.loads(spec.to_json())})
    print(f"wrote preview for {bundle.id} to {out}")


class _TrackCache:
    def __init__(self, tracks, sources, segment):
        self.tracks = tracks
        self.sources = sources
        self.segment = segment
        self._audio = {}

    def audio(self, bundle):
        if bundle.id not in self._audio:
            self._audio[bundle.id] = dataset.load_track_audio(bundle, self.sources, self.segment.rate)
        return self._audio[bundle.id]

    def sample(self, bundle, offset):
        mix, clips = self.audio(bundle)
        return dataset.sample_from_clips(mix, clips, offset, self.segment, (bundle.id, offset))

    def duration(self, bundle):
        return self.audio(bundle)[0].duration_s


def cmd_train(args, cfg):
    out = Path(_require(cfg.out, "--out"))
    m = dataset.Manifest.load(_require(cfg.manifest, "--manifest"))
    train_tracks, val_tracks = m.part("train"), m.part("val")
    if not train_tracks or not val_tracks:
        raise StageError("train/data", "manifest needs tracks in both the train and val splits")
    sources = _sources(cfg.mode)
    seg = cfg.segment
    cache = _TrackCache(m.entries, sources, seg)
    try:
        val_rng = np.random.default_rng(cfg.stage_seed("val-segments"))
        val = [cache.sample(b, dataset.select_segment_offset(cache.duration(b), val_rng, seg.duration_s))
               for b in val_tracks]
    except (OSError, SvsepError) as e:
        raise StageError("train/data", str(e)) from e

    def draw(rng):
        b = train_tracks[int(rng.integers(len(train_tracks)))]
        return cache.sample(b, dataset.select_segment_offset(cache.duration(b), rng, seg.duration_s))

    aug = None
    if cfg.augment.kinds:
        aug = augment.random_augmenter(list(cfg.augment.kinds), cfg.augment.probability, seg.rate, seg.window)
    model_cfg = UNetConfig(depth=cfg.model.depth, base_channels=cfg.model.base_channels,
                           dropout=cfg.model.dropout, input_shape=seg.shape)
    tcfg = dataclasses.replace(cfg.train, seed=cfg.stage_seed("train"))
    results = train_models(draw, val, sources, tcfg, model_cfg, aug, out / "checkpoints")
    summary = {}
    for s, r in results.items():
        checkpoint.save(out / f"{s}.ckpt", r.params, r.best_epoch, r.history,
                        {"source": s, "segment": seg.to_dict(), "mode": cfg.mode})
        summary[s] = {"best_epoch": r.best_epoch, "epochs_run": r.epochs_run, "updates": r.updates,
                      "val_loss": r.history["val"]}
    write_run_metadata(out, "train", cfg, {"results": summary})
    print(json.dumps({s: v["val_loss"][-1] for s, v in summary.items()}))


def load_models(model_dir, mode: str):
    models, segment = {}, None
    for s in _sources(mode):
        path = Path(model_dir) / f"{s}.ckpt"
        if not path.exists():
            raise InvalidInputError(f"missing model checkpoint {path}")
        params, header = checkpoint.load(path)
        models[s] = params
        seg = header.get("extra", {}).get("segment")
        if seg is not None:
            segment = dsp.SegmentSpec(**seg)
    return models, segment or dsp.STANDARD_SEGMENT


def cmd_separate(args, cfg):
    models, seg = load_models(args.models, cfg.mode)
    written = []
    for inp in args.inputs:
        inp = Path(inp)
        clip = dsp.read_wav(inp)
        outs = separation.separate_song(clip, models, cfg.mode, seg, args.output_rate)
        out_dir = Path(args.out_dir) if args.out_dir else inp.parent
        out_dir.mkdir(parents=True, exist_ok=True)
        for s, c in outs.items():
            written.append(str(dsp.write_wav(out_dir / f"{inp.stem}.{s}.wav", c)))
    meta_dir = Path(args.out_dir) if args.out_dir else Path(args.inputs[0]).parent
    write_run_metadata(meta_dir, "separate", cfg, {"models": str(args.models), "outputs": written},
                       name="separate.run.json")
    print("\n".join(written))


def _estimate_paths(est_dir: Path, bundle, sources):
    """``<id>.<source>.wav`` or, as written by ``separate``, ``<mixture stem>.<source>.wav``."""
    for stem in (bundle.id, Path(bundle.mixture).stem):
        paths = {s: est_dir / f"{stem}.{s}.wav" for s in sources}
        if all(p.exists() for p in paths.values()):
            return paths
    return None


def cmd_evaluate(args, cfg):
    m = dataset.Manifest.load(_require(cfg.manifest, "--manifest"))
    tracks = m.part(args.split) if args.split != "all" else list(m.entries)
    est_dir = Path(args.estimates)
    sources = separation.OUTPUT_SOURCES
    found = {b.id: _estimate_paths(est_dir, b, sources) for b in tracks}
    missing = sorted(tid for tid, paths in found.items() if paths is None)
    if missing:
        raise StageError("evaluate/match", f"no estimates for songs: {', '.join(missing)}")
    rows = []
    for b in tracks:
        ests = {s: dsp.read_wav(p) for s, p in found[b.id].items()}
        rate = ests["vocals"].sample_rate
        refs = {s: dataset.load_stem(b, s, rate).to_stereo() for s in sources}
        n = min(len(c) for c in [*ests.values(), *refs.values()])
        ests = {s: dsp.AudioClip(c.to_stereo().samples[:, :n], rate) for s, c in ests.items()}
        refs = {s: dsp.AudioClip(c.samples[:, :n], rate) for s, c in refs.items()}
        rec = evaluation.evaluate_song(ests, refs, b.id, cfg.evaluation.frame_s, cfg.evaluation.filter_len)
        rows += evaluation.records_to_rows(list(rec.values()), args.method)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    evaluation.write_results_csv(out, rows)
    write_run_metadata(out.parent, "evaluate", cfg, {"method": args.method, "songs": len(tracks)},
                       name=out.stem + ".run.json")
    print(f"wrote {len(rows)} rows to {out}")


def _write_report(out: Path, rows, baseline: str, alpha: float):
    results = evaluation.rows_to_results(rows)
    rep = evaluation.significance_table(results, baseline, alpha)
    (out / "report.md").write_text(rep.to_markdown())
    for (s, mt) in sorted(rep.pvalues):
        (out / f"pvalues_{s}_{mt}.csv").write_text(rep.pvalue_csv(s, mt))
    return rep


def cmd_compare(args, cfg):
    out = Path(_require(cfg.out, "--out"))
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for p in args.results:
        rows += evaluation.read_results_csv(p)
    methods = sorted({r[1] for r in rows})
    baseline = args.baseline or methods[0]
    evaluation.write_results_csv(out / "results.csv", rows)
    (out / "report.json").write_text(json.dumps({"baseline": baseline, "alpha": cfg.evaluation.alpha},
                                                sort_keys=True) + "\n")
    _write_report(out, rows, baseline, cfg.evaluation.alpha)
    write_run_metadata(out, "compare", cfg, {"inputs": [str(p) for p in args.results], "baseline": baseline})
    print((out / "report.md").read_text())


def cmd_report(args, cfg):
    d = Path(args.dir)
    settings = json.loads((d / "report.json").read_text())
    rows = evaluation.read_results_csv(d / "results.csv")
    out = Path(args.out) if args.out else d
    out.mkdir(parents=True, exist_ok=True)
    _write_report(out, rows, settings["baseline"], settings["alpha"])
    print((out / "report.md").read_text())


# --- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML experiment config; flags override its values")
    common.add_argument("--seed", type=int, help="global seed")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="svsep", description="Singing-voice separation experiments.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("mine", parents=[common], help="build triplets from (mix, instrumental) pairs")
    s.add_argument("--pairs", type=Path, required=True, help="candidate pair JSON")
    s.add_argument("--out", type=Path)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_mine)

    s = sub.add_parser("dataset-split", parents=[common], help="artist-disjoint train/val/test split")
    s.add_argument("--manifest", type=Path)
    s.add_argument("--fractions", type=float, nargs=3, default=(0.8, 0.1, 0.1))
    s.add_argument("--output", type=Path, required=True)
    s.set_defaults(func=cmd_dataset_split)

    s = sub.add_parser("dataset-rebalance", parents=[common], help="subsample to a genre distribution")
    s.add_argument("--manifest", type=Path)
    s.add_argument("--target", nargs="+", metavar="GENRE=FRACTION")
    s.add_argument("--target-manifest", type=Path, help="use this manifest's genre distribution")
    s.add_argument("--output", type=Path, required=True)
    s.set_defaults(func=cmd_dataset_rebalance)

    s = sub.add_parser("augment-preview", parents=[common], help="before/after spectrograms of one transform")
    s.add_argument("--manifest", type=Path)
    s.add_argument("--track")
    s.add_argument("--kind", choices=augment.KINDS, required=True)
    s.add_argument("--segment", choices=sorted(config_mod.SEGMENT_PRESETS))
    s.add_argument("--out", type=Path)
    s.set_defaults(func=cmd_augment_preview)

    s = sub.add_parser("train", parents=[common], help="train one U-Net per source")
    s.add_argument("--manifest", type=Path)
    s.add_argument("--mode", choices=sorted(separation.MODE_SOURCES))
    s.add_argument("--segment", choices=sorted(config_mod.SEGMENT_PRESETS))
    s.add_argument("--epochs", type=int)
    s.add_argument("--steps-per-epoch", type=int)
    s.add_argument("--patience", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--depth", type=int)
    s.add_argument("--base-channels", type=int)
    s.add_argument("--augment", nargs="+", choices=augment.KINDS)
    s.add_argument("--augment-prob", type=float)
    s.add_argument("--out", type=Path)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("separate", parents=[common], help="separate WAV files with trained models")
    s.add_argument("--models", type=Path, required=True, help="directory holding <source>.ckpt")
    s.add_argument("--mode", choices=sorted(separation.MODE_SOURCES))
    s.add_argument("--output-rate", type=int, default=44100)
    s.add_argument("--out-dir", type=Path, help="default: next to each input")
    s.add_argument("inputs", nargs="+", type=Path)
    s.set_defaults(func=cmd_separate)

    s = sub.add_parser("evaluate", parents=[common], help="BSS-eval metrics of separated songs")
    s.add_argument("--manifest", type=Path)
    s.add_argument("--estimates", type=Path, required=True, help="directory of <id>.<source>.wav")
    s.add_argument("--method", required=True)
    s.add_argument("--split", default="test", choices=[*dataset.SPLIT_PARTS, "all"])
    s.add_argument("--filter-len", type=int)
    s.add_argument("--output", type=Path, required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("compare", parents=[common], help="median tables and paired t-tests")
    s.add_argument("results", nargs="+", type=Path)
    s.add_argument("--baseline")
    s.add_argument("--alpha", type=float)
    s.add_argument("--out", type=Path)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("report", parents=[common], help="re-render a report from a compare directory")
    s.add_argument("dir", type=Path)
    s.add_argument("--out", type=Path)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
    except (InvalidInputError, OSError, TypeError, ValueError) as e:
        print(f"svsep {args.command}: invalid configuration: {e}", file=sys.stderr)
        return 2
    try:
        args.func(args, cfg)
    except StageError as e:
        print(f"svsep {args.command}: stage {e.stage} failed: {e}", file=sys.stderr)
        return 1
    except InvalidInputError as e:
        print(f"svsep {args.command}: {e}", file=sys.stderr)
        return 2
    except (SvsepError, OSError, KeyError, ValueError) as e:
        print(f"svsep {args.command}: stage {args.command} failed: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
