"""Unimodal and fusion network topologies.

Every topology is a stack of fully connected LIF layers ending in a
non-spiking readout. Fusion modes run one branch per modality and join the
branches' spike trains along the channel axis before the shared layers.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from spikefuse.autodiff import Tape, Var, affine, concat, cross_entropy, forward_lif_layer, readout, softmax_sum
from spikefuse.errors import ShapeError, SpecError

MODES = ("unimodal-visual", "unimodal-auditory", "fusion-early", "fusion-middle", "fusion-late")
MODALITIES = ("visual", "auditory")
VISUAL_CHANNELS = 34 * 34 * 2
AUDITORY_CHANNELS = 700

# (visual_branch, auditory_branch, shared); every mode has three hidden layers per path
DEFAULT_WIDTHS = {
    "unimodal-visual": ([512, 256, 128], [], []),
    "unimodal-auditory": ([], [512, 256, 128], []),
    "fusion-early": ([], [], [512, 256, 128]),
    "fusion-middle": ([256], [256], [256, 128]),
    "fusion-late": ([256, 128], [256, 128], [128]),
}


@dataclass(frozen=True)
class LayerDef:
    name: str
    fan_in: int
    fan_out: int
    kind: str = "lif"


@dataclass
class ArchitectureSpec:
    mode: str
    visual_branch: list | None = None
    auditory_branch: list | None = None
    shared: list | None = None
    readout_classes: int = 10
    input_channels: dict = field(
        default_factory=lambda: {"visual": VISUAL_CHANNELS, "auditory": AUDITORY_CHANNELS}
    )

    def __post_init__(self):
        if self.mode not in MODES:
            raise SpecError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        defaults = DEFAULT_WIDTHS[self.mode]
        for attr, default in zip(("visual_branch", "auditory_branch", "shared"), defaults):
            if getattr(self, attr) is None:
                setattr(self, attr, list(default))
            else:
                setattr(self, attr, list(getattr(self, attr)))
        self.input_channels = {**{"visual": VISUAL_CHANNELS, "auditory": AUDITORY_CHANNELS}, **self.input_channels}
        self.validate()

    @property
    def is_fusion(self):
        return self.mode.startswith("fusion")

    @property
    def modalities(self):
        if self.mode == "unimodal-visual":
            return ("visual",)
        if self.mode == "unimodal-auditory":
            return ("auditory",)
        return MODALITIES

    def validate(self):
        for key in self.input_channels:
            if key not in MODALITIES:
                raise SpecError(f"input_channels has unknown modality {key!r}")
        for attr in ("visual_branch", "auditory_branch", "shared"):
            for i, w in enumerate(getattr(self, attr)):
                if not isinstance(w, (int, np.integer)) or isinstance(w, bool) or w < 1:
                    raise SpecError(f"layer {attr}[{i}] has invalid width {w!r}")
        if self.readout_classes < 2:
            raise SpecError(f"readout_classes must be >= 2, got {self.readout_classes}")
        for m in self.modalities:
            if self.input_channels[m] < 1:
                raise SpecError(f"input_channels[{m!r}] must be positive")
        if self.mode == "unimodal-visual" and self.auditory_branch:
            raise SpecError("unimodal-visual cannot have auditory_branch layers")
        if self.mode == "unimodal-auditory" and self.visual_branch:
            raise SpecError("unimodal-auditory cannot have visual_branch layers")
        if self.mode == "fusion-early" and (self.visual_branch or self.auditory_branch):
            raise SpecError("fusion-early concatenates raw inputs; branch lists must be empty")
        if self.mode in ("fusion-middle", "fusion-late") and not (self.visual_branch and self.auditory_branch):
            raise SpecError(f"{self.mode} needs at least one layer in each branch")

    def branch(self, modality):
        return self.visual_branch if modality == "visual" else self.auditory_branch

    def concat_width(self):
        return sum(
            (self.branch(m)[-1] if self.branch(m) else self.input_channels[m]) for m in self.modalities
        )

    def layers(self):
        """Layer definitions in construction (and parameter) order."""
        out = []
        for m in self.modalities:
            width = self.input_channels[m]
            for i, w in enumerate(self.branch(m)):
                out.append(LayerDef(f"{m}.{i}", width, w))
                width = w
        width = self.concat_width()
        for i, w in enumerate(self.shared):
            out.append(LayerDef(f"shared.{i}", width, w))
            width = w
        out.append(LayerDef("readout", width, self.readout_classes, kind="readout"))
        return out

    def parameter_shapes(self):
        shapes = {}
        for layer in self.layers():
            shapes[f"{layer.name}.weight"] = (layer.fan_in, layer.fan_out)
            shapes[f"{layer.name}.bias"] = (layer.fan_out,)
            shapes[f"{layer.name}.alpha_raw"] = (layer.fan_out,)
        return shapes

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class ParameterStore(dict):
    """Name -> array, iterated in construction order."""

    def copy(self):
        return ParameterStore({k: v.copy() for k, v in self.items()})

    def shapes(self):
        return {k: v.shape for k, v in self.items()}

    @property
    def num_parameters(self):
        return int(sum(v.size for v in self.values()))

    def astype(self, dtype):
        return ParameterStore({k: v.astype(dtype) for k, v in self.items()})

    def bitwise_equal(self, other):
        return list(self) == list(other) and all(
            self[k].dtype == other[k].dtype and np.array_equal(self[k], other[k]) for k in self
        )


def init_parameters(spec: ArchitectureSpec, seed, dtype=np.float32) -> ParameterStore:
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    for layer in spec.layers():
        bound = np.sqrt(6.0 / layer.fan_in)
        store[f"{layer.name}.weight"] = rng.uniform(-bound, bound, (layer.fan_in, layer.fan_out)).astype(dtype)
        store[f"{layer.name}.bias"] = np.zeros(layer.fan_out, dtype=dtype)
        # alpha uniform on [ALPHA_MIN, ALPHA_MAX] after the squash
        u = np.clip(rng.uniform(0.0, 1.0, layer.fan_out), 1e-6, 1 - 1e-6)
        store[f"{layer.name}.alpha_raw"] = (np.log(u) - np.log1p(-u)).astype(dtype)
    return store


class Network:
    """A built topology bound to a parameter store."""

    def __init__(self, spec: ArchitectureSpec, store: ParameterStore, detach_reset=False):
        self.spec = spec
        self.store = store
        self.detach_reset = detach_reset
        expected = spec.parameter_shapes()
        if store.shapes() != expected or list(store) != list(expected):
            raise ShapeError("parameter store does not match the architecture")

    @property
    def dtype(self):
        return next(iter(self.store.values())).dtype

    def _inputs(self, visual, auditory):
        given = {"visual": visual, "auditory": auditory}
        for m in MODALITIES:
            if m in self.spec.modalities and given[m] is None:
                raise ShapeError(f"{self.spec.mode} requires {m} input")
            if m not in self.spec.modalities and given[m] is not None:
                raise ShapeError(f"{self.spec.mode} does not accept {m} input")
        arrays = {}
        unbatched = None
        for m in self.spec.modalities:
            x = np.asarray(given[m], dtype=self.dtype)
            if x.ndim == 2:
                x = x[None]
                unbatched = True if unbatched is None else unbatched
            elif x.ndim == 3:
                unbatched = False
            else:
                raise ShapeError(f"{m} input must be [T, C] or [B, T, C], got {x.shape}")
            if x.shape[-1] != self.spec.input_channels[m]:
                raise ShapeError(f"{m} input has {x.shape[-1]} channels, expected {self.spec.input_channels[m]}")
            arrays[m] = x
        shapes = {m: a.shape[:2] for m, a in arrays.items()}
        if len(set(shapes.values())) > 1:
            raise ShapeError(f"modalities disagree on batch/time bins: {shapes}")
        return arrays, bool(unbatched)

    def forward(self, visual=None, auditory=None, tape: Tape | None = None, relaxed=False, _squeeze=True):
        """Readout membrane trajectory, [T, K] or [B, T, K]."""
        arrays, unbatched = self._inputs(visual, auditory)

        def p(name):
            return tape.param(name, self.store[name]) if tape is not None else Var(self.store[name])

        def layer(x, name):
            return forward_lif_layer(
                x, p(f"{name}.weight"), p(f"{name}.bias"), p(f"{name}.alpha_raw"),
                tape, relaxed, self.detach_reset,
            )

        outputs = []
        for m in self.spec.modalities:
            x = Var(arrays[m])
            for i in range(len(self.spec.branch(m))):
                x = layer(x, f"{m}.{i}")
            outputs.append(x)
        x = concat(outputs, tape) if len(outputs) > 1 else outputs[0]
        if x.shape[-1] != self.spec.concat_width():
            raise ShapeError(f"concatenated width {x.shape[-1]} != {self.spec.concat_width()}")
        for i in range(len(self.spec.shared)):
            x = layer(x, f"shared.{i}")
        current = affine(x, p("readout.weight"), p("readout.bias"), tape)
        out = readout(current, p("readout.alpha_raw"), tape)
        if unbatched and _squeeze:
            return Var(out.value[0])
        return out

    def loss(self, visual=None, auditory=None, labels=None, tape: Tape | None = None, relaxed=False, loss_readout="normalized-sum"):
        if labels is None:
            raise ValueError("labels are required")
        v = self.forward(visual, auditory, tape, relaxed, _squeeze=False)
        scores = softmax_sum(v, tape)
        labels = np.atleast_1d(np.asarray(labels))
        return cross_entropy(scores, labels, v.shape[1], tape, loss_readout), v


def build(spec: ArchitectureSpec, seed, dtype=np.float32, detach_reset=False):
    """Construct a network with seeded Kaiming-uniform weights."""
    store = init_parameters(spec, seed, dtype)
    return Network(spec, store, detach_reset), store


def relaxed_forward(network: Network, visual, auditory, labels, loss_readout="normalized-sum"):
    """Loss with the spike replaced by its boxcar-sloped ramp (gradient-check oracle)."""
    loss, _ = network.loss(visual, auditory, labels, None, relaxed=True, loss_readout=loss_readout)
    return float(loss.value)


def calibrate(network: Network, visual=None, auditory=None, target_rms=1.0):
    """Rescale hidden-layer weights so each layer's input current has a given RMS.

    Layers are visited in construction order, so every layer is calibrated
    on the activity of already-calibrated predecessors. Layers that receive
    no input activity are left untouched. Returns the applied factors.
    """
    factors = {}
    for layer in network.spec.layers():
        if layer.kind != "lif":
            continue
        tape = Tape()
        network.forward(visual, auditory, tape, _squeeze=False)
        weight_var = tape.params[f"{layer.name}.weight"]
        node = next(n for n in tape.nodes if n.op == "affine" and n.inputs[1] is weight_var)
        rms = float(np.sqrt(np.mean(np.square(node.output.value, dtype=np.float64))))
        if rms > 0:
            factor = target_rms / rms
            w = network.store[f"{layer.name}.weight"]
            w *= np.asarray(factor, dtype=w.dtype)
            factors[layer.name] = factor
    return factors
