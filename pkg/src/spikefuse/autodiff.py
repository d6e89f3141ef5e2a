"""Reverse-mode differentiation through time over a closed set of primitives.

Every primitive records a node on a :class:`Tape` with a backward closure.
:func:`backward` walks the tape in reverse and returns one float64 gradient
per trainable parameter. Spikes are differentiated with the boxcar
surrogate evaluated at the membrane values stored during the forward pass.

All arrays carry a leading batch axis: spike and membrane sequences are
``[B, T, C]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from spikefuse.errors import DivergenceError, ShapeError, TapeError
from spikefuse.neuron import (
    V_TH,
    boxcar_surrogate,
    hard_spike,
    relaxed_spike,
    squash_alpha,
    squash_alpha_grad,
)
from spikefuse.readout import LOSS_READOUTS, softmax

class Var:
    """A value flowing through the tape."""

    __slots__ = ("value", "name", "requires_grad")

    def __init__(self, value, name=None, requires_grad=False):
        self.value = value
        self.name = name
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(name={self.name!r}, shape={self.shape})"


@dataclass
class Node:
    op: str
    inputs: tuple
    output: Var
    backward: Callable
    saved: dict = field(default_factory=dict)


class Tape:
    """Ordered record of primitive applications for one forward pass."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Var] = {}
        self.loss: Var | None = None

    def param(self, name, value):
        var = self.params.get(name)
        if var is None:
            var = Var(value, name=name, requires_grad=True)
            self.params[name] = var
        return var

    def record(self, op, inputs, output, backward, saved=None):
        output.requires_grad = any(v.requires_grad for v in inputs)
        if output.requires_grad:
            self.nodes.append(Node(op, tuple(inputs), output, backward, saved or {}))
        return output

    def membranes(self):
        """Saved membrane trajectories of every LIF node, in forward order."""
        return [n.saved["v"] for n in self.nodes if n.op == "lif"]


class GradientSet(dict):
    """Parameter name -> float64 gradient array."""

    def check_shapes(self, store):
        if set(self) != set(store.keys()):
            raise ShapeError(f"gradient names {sorted(self)} do not match parameters {list(store.keys())}")
        for name, value in store.items():
            if self[name].shape != value.shape:
                raise ShapeError(f"gradient for {name} has shape {self[name].shape}, parameter {value.shape}")

    def global_norm(self):
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self.values())))

    def scaled(self, factor):
        return GradientSet({k: g * factor for k, g in self.items()})

    def __add__(self, other):
        return GradientSet({k: self[k] + other[k] for k in self})


def as_var(x):
    return x if isinstance(x, Var) else Var(np.asarray(x))


def _record(tape, op, inputs, out, backward, saved=None):
    if tape is None:
        return out
    return tape.record(op, inputs, out, backward, saved)


def affine(x, weight, bias, tape=None):
    """``x @ W + b`` applied at every (batch, time) position."""
    x, weight, bias = as_var(x), as_var(weight), as_var(bias)
    if x.shape[-1] != weight.shape[0] or weight.shape[1:] != bias.shape:
        raise ShapeError(
            f"affine: input {x.shape}, weight {weight.shape}, bias {bias.shape}"
        )
    lead = x.shape[:-1]
    x2 = x.value.reshape(-1, x.shape[-1])
    out = Var((x2 @ weight.value + bias.value).reshape(*lead, weight.shape[1]))

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gw = x2.T @ g2
        gb = g2.sum(axis=0)
        gx = (g2 @ weight.value.T).reshape(x.shape) if x.requires_grad else None
        return gx, gw, gb

    return _record(tape, "affine", (x, weight, bias), out, backward)


def concat(parts, tape=None):
    """Join spike trains along the channel axis."""
    parts = [as_var(p) for p in parts]
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise ShapeError(f"concat: leading shapes differ, {p.shape[:-1]} vs {lead}")
    widths = [p.shape[-1] for p in parts]
    out = Var(np.concatenate([p.value for p in parts], axis=-1))

    def backward(g):
        bounds = np.cumsum(widths)[:-1]
        return tuple(np.split(g, bounds, axis=-1))

    return _record(tape, "concat", parts, out, backward)


def lif(current, alpha_raw, tape=None, relaxed=False, detach_reset=False, v_th=V_TH):
    """Unroll the LIF recurrence over the time axis of ``current`` [B, T, C].

    Starts from v = 0, s = 0. Returns the spike train. With ``relaxed`` the
    hard threshold is replaced by the ramp whose slope is the boxcar.
    """
    current, alpha_raw = as_var(current), as_var(alpha_raw)
    I = current.value
    if I.ndim != 3 or alpha_raw.shape != I.shape[-1:]:
        raise ShapeError(f"lif: current {I.shape}, alpha {alpha_raw.shape}")
    spike = relaxed_spike if relaxed else hard_spike
    alpha = squash_alpha(alpha_raw.value).astype(I.dtype)
    drive = (1.0 - alpha) * I
    B, T, C = I.shape
    V = np.empty_like(I)
    S = np.empty_like(I)
    v = np.zeros((B, C), dtype=I.dtype)
    s = np.zeros((B, C), dtype=I.dtype)
    for t in range(T):
        v = alpha * v + drive[:, t] - v_th * s
        s = spike(v, v_th)
        V[:, t] = v
        S[:, t] = s
    out = Var(S)

    def backward(gS):
        sg = boxcar_surrogate(V, v_th)
        gV = np.empty_like(V)
        gv_next = np.zeros((B, C), dtype=V.dtype)
        for t in range(T - 1, -1, -1):
            gs = gS[:, t] if detach_reset else gS[:, t] - v_th * gv_next
            gv = gs * sg[:, t] + alpha * gv_next
            gV[:, t] = gv
            gv_next = gv
        return _leak_grads(gV, V, I, alpha, alpha_raw.value)

    return _record(tape, "lif", (current, alpha_raw), out, backward, {"v": V})


def readout(current, alpha_raw, tape=None):
    """Non-spiking leaky integrator; returns the membrane trajectory."""
    current, alpha_raw = as_var(current), as_var(alpha_raw)
    I = current.value
    if I.ndim != 3 or alpha_raw.shape != I.shape[-1:]:
        raise ShapeError(f"readout: current {I.shape}, alpha {alpha_raw.shape}")
    alpha = squash_alpha(alpha_raw.value).astype(I.dtype)
    drive = (1.0 - alpha) * I
    B, T, C = I.shape
    V = np.empty_like(I)
    v = np.zeros((B, C), dtype=I.dtype)
    for t in range(T):
        v = alpha * v + drive[:, t]
        V[:, t] = v
    out = Var(V)

    def backward(gVout):
        gV = np.empty_like(V)
        gv_next = np.zeros((B, C), dtype=V.dtype)
        for t in range(T - 1, -1, -1):
            gv = gVout[:, t] + alpha * gv_next
            gV[:, t] = gv
            gv_next = gv
        return _leak_grads(gV, V, I, alpha, alpha_raw.value)

    return _record(tape, "readout", (current, alpha_raw), out, backward)


def _leak_grads(gV, V, I, alpha, alpha_raw):
    # dv[t]/dalpha = v[t-1] - I[t]
    V_prev = np.concatenate([np.zeros_like(V[:, :1]), V[:, :-1]], axis=1)
    g_alpha = np.sum(gV * (V_prev - I), axis=(0, 1), dtype=np.float64)
    g_raw = g_alpha * squash_alpha_grad(alpha_raw)
    return (1.0 - alpha) * gV, g_raw


def softmax_sum(v, tape=None):
    """Class scores ``P = sum_t softmax(v[:, t])`` in float64, shape [B, K]."""
    v = as_var(v)
    p = softmax(v.value.astype(np.float64), axis=-1)
    out = Var(p.sum(axis=1))

    def backward(gP):
        g = gP[:, None, :]
        return ((p * (g - np.sum(p * g, axis=-1, keepdims=True))).astype(v.value.dtype),)

    return _record(tape, "softmax_sum", (v,), out, backward)


def cross_entropy(scores, labels, num_bins, tape=None, loss_readout="normalized-sum"):
    """Batch-mean cross-entropy of the scores against integer labels."""
    scores = as_var(scores)
    labels = np.asarray(labels, dtype=np.int64)
    P = scores.value
    if labels.shape != P.shape[:1]:
        raise ShapeError(f"labels {labels.shape} vs scores {P.shape}")
    B = P.shape[0]
    rows = np.arange(B)
    if loss_readout == "normalized-sum":
        picked = P[rows, labels]
        loss = float(np.mean(-np.log(picked / num_bins)))

        def backward(g):
            gP = np.zeros_like(P)
            gP[rows, labels] = -1.0 / (B * picked)
            return (g * gP,)

    elif loss_readout == "resoftmaxed":
        q = softmax(P, axis=-1)
        loss = float(np.mean(-np.log(q[rows, labels])))

        def backward(g):
            gP = q.copy()
            gP[rows, labels] -= 1.0
            return (g * gP / B,)

    else:
        raise ValueError(f"loss_readout must be one of {LOSS_READOUTS}")
    out = Var(np.asarray(loss))
    out = _record(tape, "cross_entropy", (scores,), out, backward)
    if tape is not None:
        tape.loss = out
    return out


def forward_lif_layer(x, weight, bias, alpha_raw, tape=None, relaxed=False, detach_reset=False):
    """Affine projection followed by an unrolled LIF population."""
    return lif(affine(x, weight, bias, tape), alpha_raw, tape, relaxed, detach_reset)


def backward(tape: Tape, seed=1.0, store=None) -> GradientSet:
    """Reverse-traverse ``tape`` from its loss, scaled by ``seed``.

    When ``store`` (name -> array) is given the result has one entry per
    stored parameter, in store order; parameters with no path to the loss
    get exact zeros.
    """
    if tape is None or tape.loss is None:
        raise TapeError("backward called before a forward pass recorded a loss")
    grads = {id(tape.loss): np.asarray(seed, dtype=np.float64)}
    params = {}
    for index in range(len(tape.nodes) - 1, -1, -1):
        node = tape.nodes[index]
        g = grads.get(id(node.output))
        if g is None:
            continue
        for var, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not var.requires_grad:
                continue
            if not np.all(np.isfinite(gi)):
                raise DivergenceError("non-finite gradient", node=f"#{index} {node.op}")
            if var.name is not None:
                gi = np.asarray(gi, dtype=np.float64)
                params[var.name] = params[var.name] + gi if var.name in params else gi
            else:
                gi = np.asarray(gi, dtype=var.value.dtype)
                key = id(var)
                grads[key] = grads[key] + gi if key in grads else gi
    shapes = {k: np.shape(v) for k, v in (store.items() if store is not None else [])}
    shapes = shapes or {k: v.shape for k, v in tape.params.items()}
    out = GradientSet()
    for name, shape in shapes.items():
        out[name] = params[name] if name in params else np.zeros(shape, dtype=np.float64)
    return out
