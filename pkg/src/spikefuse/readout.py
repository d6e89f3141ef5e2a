"""Cumulative-softmax readout, argmax prediction and cross-entropy.

The readout integrator's membrane trajectory ``v[t, i]`` is turned into class
scores ``P_i = sum_t softmax(v[t])_i``. Scores sum to ``T``, so ``P / T`` is a
distribution over classes and the loss is ``-log(P_label / T)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from spikefuse.errors import DivergenceError

LOSS_READOUTS = ("normalized-sum", "resoftmaxed")


def softmax(x, axis=-1):
    x = np.asarray(x)
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


@dataclass(frozen=True)
class ClassScores:
    P: np.ndarray
    T: int

    @property
    def distribution(self):
        return self.P / self.T


def accumulate_scores(readout_trajectory) -> ClassScores:
    """Sum the per-bin softmax over time.

    Accepts ``[T, K]`` or batched ``[B, T, K]`` trajectories; scores are
    ``[K]`` or ``[B, K]`` respectively.
    """
    v = np.asarray(readout_trajectory, dtype=np.float64)
    if v.ndim < 2 or v.shape[-2] < 1:
        raise ValueError("readout trajectory needs at least one time bin")
    if not np.all(np.isfinite(v)):
        raise DivergenceError("non-finite readout membrane potential")
    P = softmax(v, axis=-1).sum(axis=-2)
    return ClassScores(P, v.shape[-2])


def predict(scores: ClassScores):
    """Argmax of the class scores; np.argmax already breaks ties to the lowest index."""
    pred = np.argmax(scores.P, axis=-1)
    return int(pred) if np.ndim(pred) == 0 else pred


def cross_entropy(scores: ClassScores, label, loss_readout="normalized-sum"):
    """Per-instance cross-entropy of the readout against the label."""
    P = np.asarray(scores.P, dtype=np.float64)
    label = np.asarray(label)
    if loss_readout == "normalized-sum":
        q = P / scores.T
    elif loss_readout == "resoftmaxed":
        q = softmax(P, axis=-1)
    else:
        raise ValueError(f"unknown loss_readout {loss_readout!r}")
    picked = np.take_along_axis(np.atleast_2d(q), np.atleast_1d(label)[:, None], axis=-1)[:, 0]
    loss = -np.log(picked)
    return float(loss[0]) if P.ndim == 1 else loss
