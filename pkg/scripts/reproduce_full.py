"""Full-scale reproduction on converted N-MNIST and SHD data.

Usage:
    python scripts/reproduce_full.py VISUAL_MANIFEST AUDITORY_MANIFEST --out runs/full [--epochs 50]

Both manifests come from ``spikefuse convert``. Trains the visual-only,
auditory-only and late-fusion models with the default configuration and
checks the reference accuracies (+-3 points) and a fusion gain of >= 2 points.
"""

import argparse
import json
import logging
from pathlib import Path

from spikefuse.events import BinningConfig, load_dataset
from spikefuse.topology import ArchitectureSpec
from spikefuse.training import TrainConfig, evaluate, train

REFERENCE = {"unimodal-visual": 92.25, "unimodal-auditory": 95.29, "fusion-late": 98.43}
TOLERANCE = 3.0
MIN_GAIN = 2.0


def run(visual_manifest, auditory_manifest, out, epochs=50, seed=0):
    binning = BinningConfig()
    manifests = [visual_manifest, auditory_manifest]
    results = {}
    for mode in REFERENCE:
        spec = ArchitectureSpec(mode)
        train_data = load_dataset(manifests, "train", binning, seed, spec.modalities)
        test_data = load_dataset(manifests, "test", binning, seed, spec.modalities)
        best, metrics = train(spec, train_data, test_data, TrainConfig(epochs=epochs, seed=seed))
        best.save(Path(out) / mode)
        acc, _ = evaluate(best, test_data)
        results[mode] = 100 * acc
    checks = {f"{m} within {TOLERANCE} points": abs(results[m] - ref) <= TOLERANCE for m, ref in REFERENCE.items()}
    gain = results["fusion-late"] - max(results["unimodal-visual"], results["unimodal-auditory"])
    checks[f"fusion gain >= {MIN_GAIN} points"] = gain >= MIN_GAIN
    return results, checks


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("visual_manifest")
    parser.add_argument("auditory_manifest")
    parser.add_argument("--out", default="runs/full")
    parser.add_argument("--epochs", type=int, default=50)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO)
    results, checks = run(args.visual_manifest, args.auditory_manifest, args.out, args.epochs, args.seed)
    for mode, acc in results.items():
        print(f"{mode}: {acc:.2f} (reference {REFERENCE[mode]:.2f})")
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    Path(args.out).mkdir(parents=True, exist_ok=True)
    (Path(args.out) / "reproduction.json").write_text(json.dumps({"accuracy": results, "checks": checks}, indent=2))
    raise SystemExit(0 if all(checks.values()) else 1)


if __name__ == "__main__":
    main()
