"""Mini-batch BPTT training with Adam, evaluation and checkpoints."""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from spikefuse.autodiff import GradientSet, Tape, backward
from spikefuse.errors import ConfigError, DataError, DivergenceError
from spikefuse.readout import LOSS_READOUTS, accumulate_scores, predict
from spikefuse.topology import ArchitectureSpec, Network, ParameterStore, build, calibrate

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
PRECISIONS = {"single": np.float32, "double": np.float64}


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    precision: str = "single"
    detach_reset: bool = False
    patience: int | None = 10
    clip_norm: float | None = None
    loss_readout: str = "normalized-sum"
    # target RMS of each hidden layer's input current at init; None keeps raw Kaiming weights
    init_calibration: float | None = 1.0
    calibration_size: int = 64
    # samples per tape; fixed so results do not depend on the worker count
    chunk_size: int = 32
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        for name in ("beta1", "beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise ConfigError(f"{name} must lie in [0, 1)")
        if self.eps <= 0:
            raise ConfigError("eps must be > 0")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {sorted(PRECISIONS)}")
        if self.loss_readout not in LOSS_READOUTS:
            raise ConfigError(f"loss_readout must be one of {LOSS_READOUTS}")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be >= 1 or null")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError("clip_norm must be > 0 or null")
        if self.chunk_size < 1 or self.workers < 1 or self.calibration_size < 1:
            raise ConfigError("chunk_size, workers and calibration_size must be >= 1")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


class Adam:
    """Adam with bias-corrected moments kept in float64."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros(p.shape, dtype=np.float64)
                self.v[name] = np.zeros(p.shape, dtype=np.float64)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p[...] = (p.astype(np.float64) - update).astype(p.dtype)


@dataclass
class Checkpoint:
    spec: ArchitectureSpec
    store: ParameterStore
    config: dict
    epoch: int = 0
    metrics: list | None = None

    def network(self, dtype=None):
        dtype = dtype or PRECISIONS.get(self.config.get("training", {}).get("precision", "single"), np.float32)
        detach = self.config.get("training", {}).get("detach_reset", False)
        return Network(self.spec, self.store.astype(dtype), detach_reset=detach)

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {
            "format_version": CHECKPOINT_VERSION,
            "architecture": self.spec.to_dict(),
            "config": self.config,
            "epoch": self.epoch,
            "metrics": self.metrics or [],
            "parameters": [{"name": k, "shape": list(v.shape)} for k, v in self.store.items()],
            "dtype": "float32-le",
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        blob = b"".join(np.ascontiguousarray(v, dtype="<f4").tobytes() for v in self.store.values())
        (directory / "params.bin").write_bytes(blob)

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        try:
            manifest = json.loads((directory / "manifest.json").read_text())
            blob = (directory / "params.bin").read_bytes()
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read checkpoint: {exc}", directory) from exc
        if manifest.get("format_version") != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {manifest.get('format_version')}", directory)
        spec = ArchitectureSpec.from_dict(manifest["architecture"])
        declared = sum(int(np.prod(p["shape"])) for p in manifest["parameters"])
        if len(blob) != 4 * declared:
            raise DataError(f"params.bin holds {len(blob)} bytes, manifest declares {4 * declared}", directory)
        store = ParameterStore()
        offset = 0
        for p in manifest["parameters"]:
            n = int(np.prod(p["shape"]))
            store[p["name"]] = np.frombuffer(blob, dtype="<f4", count=n, offset=4 * offset).reshape(p["shape"]).astype(np.float32)
            offset += n
        if store.shapes() != spec.parameter_shapes():
            raise DataError("checkpoint parameters do not match its architecture", directory)
        return cls(spec, store, manifest.get("config", {}), manifest.get("epoch", 0), manifest.get("metrics"))


def _stack(instances, spec, dtype):
    out = {}
    for m in ("visual", "auditory"):
        if m in spec.modalities:
            frames = [getattr(inst, m) for inst in instances]
            if any(f is None for f in frames):
                raise DataError(f"{spec.mode} needs {m} frames but some instances lack them")
            out[m] = np.stack(frames).astype(dtype, copy=False)
        else:
            out[m] = None
    labels = np.array([inst.label for inst in instances], dtype=np.int64)
    return out["visual"], out["auditory"], labels


def _chunk_grad(network, instances, loss_readout, weight):
    visual, auditory, labels = _stack(instances, network.spec, network.dtype)
    tape = Tape()
    loss, v = network.loss(visual, auditory, labels, tape, loss_readout=loss_readout)
    if not np.isfinite(loss.value):
        raise DivergenceError("non-finite loss")
    grads = backward(tape, weight, network.store)
    preds = predict(accumulate_scores(v.value))
    return grads, float(loss.value) * len(instances), int(np.sum(preds == labels))


def batch_gradient(network, instances, config: TrainConfig, pool=None):
    """Mean-loss gradient over ``instances``, reduced in chunk order."""
    n = len(instances)
    chunks = [instances[i : i + config.chunk_size] for i in range(0, n, config.chunk_size)]
    args = [(network, c, config.loss_readout, len(c) / n) for c in chunks]
    results = list(pool.map(lambda a: _chunk_grad(*a), args)) if pool else [_chunk_grad(*a) for a in args]
    grads = results[0][0]
    for r in results[1:]:
        grads = grads + r[0]
    return GradientSet(grads), sum(r[1] for r in results) / n, sum(r[2] for r in results)


def evaluate(model, data, batch_size=64):
    """Accuracy and per-instance correctness (in data order)."""
    network = model.network() if isinstance(model, Checkpoint) else model
    if not data:
        raise DataError("empty evaluation set")
    correct = []
    for i in range(0, len(data), batch_size):
        visual, auditory, labels = _stack(data[i : i + batch_size], network.spec, network.dtype)
        v = network.forward(visual, auditory, _squeeze=False)
        correct.append(predict(accumulate_scores(v.value)) == labels)
    correct = np.concatenate(correct)
    return float(correct.mean()), correct


def train(spec: ArchitectureSpec, train_data, test_data, config: TrainConfig | None = None, run_config=None):
    """Train from a seeded initialisation; returns (best checkpoint, metrics)."""
    config = config or TrainConfig()
    if not train_data or not test_data:
        raise DataError("training and test sets must be nonempty")
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    network, store = build(spec, int(seeds[0].generate_state(1)[0]), config.dtype, config.detach_reset)
    if config.init_calibration is not None:
        visual, auditory, _ = _stack(train_data[: config.calibration_size], spec, config.dtype)
        calibrate(network, visual, auditory, config.init_calibration)
    rng = np.random.default_rng(seeds[1])
    optimizer = Adam(config.learning_rate, config.beta1, config.beta2, config.eps)
    run_config = dict(run_config or {})
    run_config.setdefault("training", config.to_dict())
    metrics = []
    best = Checkpoint(spec, store.astype(np.float32), run_config, 0, [])
    best_acc, stale = -1.0, 0
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(len(train_data))
            total_loss, total_correct = 0.0, 0
            for b, start in enumerate(range(0, len(order), config.batch_size)):
                batch = [train_data[i] for i in order[start : start + config.batch_size]]
                try:
                    grads, loss, correct = batch_gradient(network, batch, config, pool)
                except DivergenceError as exc:
                    raise DivergenceError(str(exc), node=exc.node, epoch=epoch, batch=b) from exc
                grads.check_shapes(store)
                if config.clip_norm is not None:
                    norm = grads.global_norm()
                    if norm > config.clip_norm:
                        grads = grads.scaled(config.clip_norm / norm)
                optimizer.step(store, grads)
                total_loss += loss * len(batch)
                total_correct += correct
            test_acc, _ = evaluate(network, test_data)
            row = {
                "epoch": epoch,
                "train_loss": total_loss / len(train_data),
                "train_acc": total_correct / len(train_data),
                "test_acc": test_acc,
            }
            metrics.append(row)
            log.info("epoch %d loss %.4f train %.4f test %.4f", epoch, row["train_loss"], row["train_acc"], test_acc)
            if test_acc > best_acc:
                best_acc, stale = test_acc, 0
                best = Checkpoint(spec, store.astype(np.float32), run_config, epoch, None)
            else:
                stale += 1
                if config.patience is not None and stale >= config.patience:
                    log.info("early stop after %d epochs without improvement", stale)
                    break
    finally:
        if pool is not None:
            pool.shutdown()
    best.metrics = metrics
    return best, metrics


def write_metrics_csv(metrics, path):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["epoch", "train_loss", "train_acc", "test_acc"])
        writer.writeheader()
        for row in metrics:
            writer.writerow(row)
