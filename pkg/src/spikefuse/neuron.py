"""Discrete-time leaky integrate-and-fire neuron.

The continuous membrane equation ``tau * dv/dt = -(v - v_rest) + R * I`` is
normalised so that rest maps to 0 and threshold to 1 (``v -> (v - v_rest) /
(v_th - v_rest)``, ``I -> R * I / (v_th - v_rest)``). An exponential-Euler
step of size ``dt`` then gives the update implemented here::

    v[t] = alpha * v[t-1] + (1 - alpha) * I[t] - v_th * s[t-1]
    s[t] = v[t] > v_th

with ``alpha = exp(-dt / tau)``. ``v_rest`` and ``R`` disappear under the
normalisation and are not represented at runtime.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from spikefuse.errors import ShapeError

ALPHA_MIN = 0.60
ALPHA_MAX = 0.96
V_TH = 1.0
BOXCAR_HEIGHT = 0.5
BOXCAR_HALF_WIDTH = 0.5


def logistic(x):
    # tanh form saturates cleanly at +/-inf instead of overflowing exp
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def squash_alpha(alpha_raw):
    """Map unconstrained values onto the decay range [0.60, 0.96]."""
    alpha_raw = np.asarray(alpha_raw)
    dtype = alpha_raw.dtype if np.issubdtype(alpha_raw.dtype, np.floating) else np.float64
    out = ALPHA_MIN + (ALPHA_MAX - ALPHA_MIN) * logistic(alpha_raw)
    return np.asarray(out, dtype=dtype)


def squash_alpha_grad(alpha_raw):
    """Derivative of :func:`squash_alpha` with respect to its input."""
    sig = logistic(alpha_raw)
    return (ALPHA_MAX - ALPHA_MIN) * sig * (1.0 - sig)


def unsquash_alpha(alpha):
    """Inverse of :func:`squash_alpha`; the range endpoints map to -inf and +inf."""
    u = (np.asarray(alpha, dtype=float) - ALPHA_MIN) / (ALPHA_MAX - ALPHA_MIN)
    with np.errstate(divide="ignore"):
        return np.log(u) - np.log1p(-u)


@dataclass(frozen=True)
class LifParams:
    alpha_raw: np.ndarray
    v_th: float = V_TH

    def __post_init__(self):
        if self.v_th != V_TH:
            raise ValueError("v_th is fixed at 1.0 after normalisation")

    @property
    def alpha(self):
        return squash_alpha(self.alpha_raw)

    @classmethod
    def from_alpha(cls, alpha):
        return cls(unsquash_alpha(alpha))


@dataclass(frozen=True)
class LifState:
    v: np.ndarray
    s: np.ndarray

    @classmethod
    def zeros(cls, n, dtype=np.float64):
        return cls(np.zeros(n, dtype=dtype), np.zeros(n, dtype=dtype))


def _check_len(a, b):
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def lif_step(state: LifState, current, params: LifParams) -> LifState:
    """Advance a LIF population by one time bin. Inputs are not mutated."""
    current = np.asarray(current)
    _check_len(current, state.v)
    alpha = params.alpha
    _check_len(np.broadcast_to(alpha, state.v.shape), state.v)
    v = alpha * state.v + (1.0 - alpha) * current - params.v_th * state.s
    s = (v > params.v_th).astype(v.dtype)
    return LifState(v, s)


def readout_step(v_prev, current, params: LifParams):
    """Leaky integrator without threshold or reset."""
    v_prev = np.asarray(v_prev)
    current = np.asarray(current)
    _check_len(current, v_prev)
    alpha = params.alpha
    return alpha * v_prev + (1.0 - alpha) * current


def boxcar_surrogate(v, v_th=V_TH):
    """Pseudo-derivative of the spike: 0.5 on |v - v_th| <= 0.5, else 0."""
    v = np.asarray(v)
    dtype = v.dtype if np.issubdtype(v.dtype, np.floating) else np.float64
    inside = np.abs(v - v_th) <= BOXCAR_HALF_WIDTH
    return np.where(inside, BOXCAR_HEIGHT, 0.0).astype(dtype)


def relaxed_spike(v, v_th=V_TH):
    """Piecewise-linear ramp whose derivative is exactly the boxcar.

    0 below ``v_th - 0.5``, 0.5 above ``v_th + 0.5``, linear in between.
    Only used for gradient checking.
    """
    v = np.asarray(v)
    return BOXCAR_HEIGHT * np.clip(v - v_th + BOXCAR_HALF_WIDTH, 0.0, 2 * BOXCAR_HALF_WIDTH)


def hard_spike(v, v_th=V_TH):
    v = np.asarray(v)
    return (v > v_th).astype(v.dtype)
