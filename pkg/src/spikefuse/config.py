"""Strict JSON run configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from spikefuse.errors import ConfigError
from spikefuse.events import NMNIST_BIN_US, SHD_BIN_US, BinningConfig
from spikefuse.topology import ArchitectureSpec
from spikefuse.training import TrainConfig


def _strict(cls, data, section):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{section} must be a JSON object")
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown config key {section}.{key}" if section else f"unknown config key {key}")
    try:
        return cls(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section or 'config'}: {exc}") from exc


@dataclass
class DataConfig:
    manifests: list = field(default_factory=list)
    binning: BinningConfig = field(default_factory=BinningConfig)
    pairing_seed: int = 0

    def __post_init__(self):
        if isinstance(self.binning, dict):
            self.binning = _strict(BinningConfig, self.binning, "data.binning")
        if isinstance(self.manifests, str):
            self.manifests = [self.manifests]


@dataclass
class SyntheticConfig:
    num_per_class: int = 20
    test_per_class: int | None = None
    noise_visual: float = 0.0
    noise_auditory: float = 0.0
    seed: int = 0
    num_bins: int = 100
    visual_bin_width_us: int = NMNIST_BIN_US
    auditory_bin_width_us: int = SHD_BIN_US

    def __post_init__(self):
        for name in ("noise_visual", "noise_auditory"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"synthetic.{name} must lie in [0, 1]")
        if self.num_per_class < 1:
            raise ConfigError("synthetic.num_per_class must be >= 1")


@dataclass
class RunConfig:
    architecture: ArchitectureSpec = field(default_factory=lambda: ArchitectureSpec("fusion-late"))
    training: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    out: str = "runs/default"

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config key {sorted(unknown)[0]}")
        arch = d.get("architecture", {"mode": "fusion-late"})
        if not isinstance(arch, dict) or "mode" not in arch:
            raise ConfigError("architecture.mode is required")
        return cls(
            architecture=_strict(ArchitectureSpec, arch, "architecture"),
            training=_strict(TrainConfig, d.get("training"), "training"),
            data=_strict(DataConfig, d.get("data"), "data"),
            synthetic=_strict(SyntheticConfig, d.get("synthetic"), "synthetic"),
            out=str(d.get("out", "runs/default")),
        )

    def to_dict(self):
        return {
            "architecture": self.architecture.to_dict(),
            "training": self.training.to_dict(),
            "data": asdict(self.data),
            "synthetic": asdict(self.synthetic),
            "out": self.out,
        }


def load_config(path=None, overrides=None) -> RunConfig:
    """Defaults, then the file, then ``overrides`` (dotted keys -> values)."""
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = raw
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        if leaf == "mode" and node.get("mode") not in (None, value):
            # width lists belong to the old mode
            for key in ("visual_branch", "auditory_branch", "shared"):
                node.pop(key, None)
        node[leaf] = value
    return RunConfig.from_dict(raw)
