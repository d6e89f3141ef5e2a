"""``spikefuse`` command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from spikefuse.config import RunConfig, load_config
from spikefuse.errors import ConfigError, DataError, DivergenceError, ShapeError, SpecError
from spikefuse.events import (
    NMNIST_CHANNELS,
    BinningConfig,
    frames_to_events,
    generate_synthetic,
    load_dataset,
    read_nmnist,
    read_portable_events,
    write_manifest,
    write_portable_events,
)
from spikefuse.stats import compare_correctness, format_table, to_json
from spikefuse.training import Checkpoint, evaluate, train, write_metrics_csv

log = logging.getLogger("spikefuse")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4

SPLIT_NAMES = {"train": "train", "test": "test"}


def _write_run_json(out: Path, command, config: RunConfig | None = None, **extra):
    out.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, **extra}
    if config is not None:
        doc["config"] = config.to_dict()
        doc["seed"] = config.training.seed
    (out / "run.json").write_text(json.dumps(doc, indent=2, default=str) + "\n")


def _split_dirs(root: Path, default_split):
    subdirs = {p.name.lower(): p for p in root.iterdir() if p.is_dir()}
    found = [(SPLIT_NAMES[name], path) for name, path in sorted(subdirs.items()) if name in SPLIT_NAMES]
    return found or [(default_split, root)]


def cmd_convert(args):
    root = Path(args.input)
    if not root.is_dir():
        raise DataError("input is not a directory", root)
    out = Path(args.out)
    suffix = ".bin" if args.format == "nmnist" else ".evst"
    modality = args.modality or ("visual" if args.format == "nmnist" else "auditory")
    jobs = []
    for split, split_dir in _split_dirs(root, args.split):
        for class_dir in sorted(p for p in split_dir.iterdir() if p.is_dir() and p.name.isdigit()):
            for f in sorted(class_dir.glob(f"*{suffix}")):
                jobs.append((split, int(class_dir.name), f))
    if not jobs:
        raise DataError("no instances found", root)
    entries = []
    for split, label, f in jobs:
        if args.format == "nmnist":
            events, channels = read_nmnist(f), NMNIST_CHANNELS
        else:
            events, channels = read_portable_events(f)
        rel = Path(split) / str(label) / (f.stem + ".evst")
        (out / rel).parent.mkdir(parents=True, exist_ok=True)
        write_portable_events(events, out / rel, channels)
        entries.append({"path": rel.as_posix(), "label": label, "modality": modality, "split": split})
    write_manifest(out / "manifest.json", entries)
    _write_run_json(out, "convert", input=str(root), format=args.format, modality=modality)
    counts = Counter((e["split"], e["label"]) for e in entries)
    for split in sorted({s for s, _ in counts}):
        per_class = ", ".join(f"{k}: {counts[(split, k)]}" for k in sorted(k for s, k in counts if s == split))
        print(f"{split}: {per_class}")
    print(f"wrote {len(entries)} instances to {out / 'manifest.json'}")
    return EXIT_OK


def cmd_gen_synthetic(args, config: RunConfig):
    syn = config.synthetic
    out = Path(config.out)
    train_set, test_set = generate_synthetic(
        syn.num_per_class, (syn.noise_visual, syn.noise_auditory), syn.seed, syn.test_per_class, syn.num_bins
    )
    rng = np.random.default_rng(syn.seed)
    widths = {"visual": syn.visual_bin_width_us, "auditory": syn.auditory_bin_width_us}
    channels = {"visual": NMNIST_CHANNELS, "auditory": 700}
    entries = []
    for split, instances in (("train", train_set), ("test", test_set)):
        for inst in instances:
            for m in ("visual", "auditory"):
                rel = Path(split) / m / f"{inst.key}.evst"
                (out / rel).parent.mkdir(parents=True, exist_ok=True)
                events = frames_to_events(getattr(inst, m), widths[m], rng)
                write_portable_events(events, out / rel, channels[m])
                entries.append({
                    "path": rel.as_posix(), "label": inst.label, "modality": m, "split": split,
                    "pair": inst.key, "bin_width_us": widths[m],
                })
    write_manifest(out / "manifest.json", entries)
    _write_run_json(out, "gen-synthetic", config)
    print(f"wrote {len(train_set)} train and {len(test_set)} test pairs to {out / 'manifest.json'}")
    return EXIT_OK


def _load_split(manifests, split, data_cfg, spec):
    return load_dataset(manifests, split, data_cfg.binning, data_cfg.pairing_seed, spec.modalities)


def cmd_train(args, config: RunConfig):
    if not config.data.manifests:
        raise ConfigError("data.manifests is empty; pass --manifest or set it in the config")
    out = Path(config.out)
    _write_run_json(out, "train", config)
    spec = config.architecture
    train_set = _load_split(config.data.manifests, "train", config.data, spec)
    test_set = _load_split(config.data.manifests, "test", config.data, spec)
    checkpoint, metrics = train(spec, train_set, test_set, config.training, run_config=config.to_dict())
    checkpoint.save(out / "checkpoint")
    write_metrics_csv(metrics, out / "metrics.csv")
    best = max((m["test_acc"] for m in metrics), default=float("nan"))
    print(f"{spec.mode}: best test accuracy {best:.4f} at epoch {checkpoint.epoch}; checkpoint in {out / 'checkpoint'}")
    return EXIT_OK


def _checkpoint_data_config(checkpoint: Checkpoint, config: RunConfig | None):
    """Binning and pairing from ``--config`` if given, else as recorded at training time."""
    if config is not None:
        return config.data
    stored = {"architecture": checkpoint.spec.to_dict(), "data": checkpoint.config.get("data", {})}
    return RunConfig.from_dict(stored).data


def cmd_eval(args, config: RunConfig | None):
    checkpoint = Checkpoint.load(args.checkpoint)
    data_cfg = _checkpoint_data_config(checkpoint, config)
    data = _load_split(args.manifest, args.split, data_cfg, checkpoint.spec)
    accuracy, correct = evaluate(checkpoint, data)
    report = {
        "checkpoint": str(args.checkpoint),
        "mode": checkpoint.spec.mode,
        "split": args.split,
        "instances": len(correct),
        "accuracy": accuracy,
        "correct": [bool(c) for c in correct],
        "keys": [inst.key for inst in data],
    }
    out = Path(args.out) if args.out else None
    if out is not None:
        _write_run_json(out, "eval", config, checkpoint=str(args.checkpoint), manifest=args.manifest)
        (out / "eval.json").write_text(json.dumps(report, indent=2) + "\n")
    print(f"{checkpoint.spec.mode}: accuracy {accuracy:.4f} on {len(correct)} {args.split} instances")
    return EXIT_OK


def cmd_compare(args, config: RunConfig | None):
    a = Checkpoint.load(args.checkpoint_a)
    b = Checkpoint.load(args.checkpoint_b)
    data_cfg = _checkpoint_data_config(a, config)
    modalities = tuple(m for m in ("visual", "auditory") if m in a.spec.modalities or m in b.spec.modalities)
    data = load_dataset(args.manifest, args.split, data_cfg.binning, data_cfg.pairing_seed, modalities)
    _, correct_a = evaluate(a, data)
    _, correct_b = evaluate(b, data)
    names = (args.name_a or a.spec.mode, args.name_b or b.spec.mode)
    result = compare_correctness(correct_a, correct_b, names[0], names[1], args.alpha)
    out = Path(args.out) if args.out else None
    if out is not None:
        _write_run_json(out, "compare", config, checkpoints=[str(args.checkpoint_a), str(args.checkpoint_b)])
        (out / "compare.json").write_text(to_json([result]) + "\n")
        (out / "compare.txt").write_text(format_table([result]) + "\n")
    print(format_table([result]))
    print(to_json([result]))
    return EXIT_OK


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="overrides the configured seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, default=None, help="parallel gradient workers")

    parser = argparse.ArgumentParser(prog="spikefuse", description="Multimodal spiking network training")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", parents=[common], help="convert raw event files to EVST + manifest")
    p.add_argument("input")
    p.add_argument("--format", choices=("nmnist", "evst"), default="nmnist")
    p.add_argument("--modality", choices=("visual", "auditory"))
    p.add_argument("--split", choices=("train", "test"), default="train",
                   help="split for inputs without train/test subdirectories")

    p = sub.add_parser("gen-synthetic", parents=[common], help="write a synthetic paired dataset")
    p.add_argument("--num-per-class", type=int)
    p.add_argument("--test-per-class", type=int)
    p.add_argument("--noise-visual", type=float)
    p.add_argument("--noise-auditory", type=float)

    p = sub.add_parser("train", parents=[common], help="train a network")
    p.add_argument("--mode", help="architecture mode")
    p.add_argument("--manifest", action="append", help="dataset manifest (repeatable)")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--manifest", action="append", required=True)
    p.add_argument("--split", default="test")

    p = sub.add_parser("compare", parents=[common], help="McNemar comparison of two checkpoints")
    p.add_argument("checkpoint_a")
    p.add_argument("checkpoint_b")
    p.add_argument("--manifest", action="append", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--name-a")
    p.add_argument("--name-b")
    return parser


def _setup_logging():
    level = os.environ.get("SPIKEFUSE_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.INFO), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _setup_logging()
    args = _parser().parse_args(argv)
    try:
        if args.command == "convert":
            if args.out is None:
                raise ConfigError("convert needs --out")
            return cmd_convert(args)
        overrides = {
            "training.seed": args.seed,
            "out": args.out,
            "training.workers": args.workers,
        }
        if args.command == "gen-synthetic":
            overrides.update({
                "synthetic.seed": args.seed,
                "synthetic.num_per_class": args.num_per_class,
                "synthetic.test_per_class": args.test_per_class,
                "synthetic.noise_visual": args.noise_visual,
                "synthetic.noise_auditory": args.noise_auditory,
            })
            return cmd_gen_synthetic(args, load_config(args.config, overrides))
        if args.command == "train":
            overrides.update({
                "architecture.mode": args.mode,
                "data.manifests": args.manifest,
                "training.epochs": args.epochs,
            })
            return cmd_train(args, load_config(args.config, overrides))
        config = load_config(args.config, overrides) if args.config else None
        if args.command == "eval":
            return cmd_eval(args, config)
        return cmd_compare(args, config)
    except (ConfigError, SpecError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ShapeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
