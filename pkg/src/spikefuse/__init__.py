"""Multimodal spiking neural networks trained with surrogate-gradient BPTT."""

from spikefuse.errors import (
    ConfigError,
    DataError,
    DivergenceError,
    ShapeError,
    SpecError,
    SpikefuseError,
    TapeError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "DivergenceError",
    "ShapeError",
    "SpecError",
    "SpikefuseError",
    "TapeError",
]
