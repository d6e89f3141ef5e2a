"""McNemar's test on paired classifier correctness."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from spikefuse.errors import ShapeError

# model pairs compared in the two experiments: fusion vs unimodal, then fusion depths
EXPERIMENT_1 = (
    ("fusion-early", "unimodal-visual"),
    ("fusion-early", "unimodal-auditory"),
    ("unimodal-visual", "unimodal-auditory"),
)
EXPERIMENT_2 = (
    ("fusion-early", "fusion-middle"),
    ("fusion-early", "fusion-late"),
    ("fusion-late", "fusion-middle"),
)


@dataclass(frozen=True)
class ContingencyTable:
    n11: int  # both correct
    n10: int  # only model 1 correct (b)
    n01: int  # only model 2 correct (c)
    n00: int  # both wrong

    @property
    def b(self):
        return self.n10

    @property
    def c(self):
        return self.n01

    @property
    def total(self):
        return self.n11 + self.n10 + self.n01 + self.n00


def build_table(correct1, correct2) -> ContingencyTable:
    a = np.asarray(correct1, dtype=bool)
    b = np.asarray(correct2, dtype=bool)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"correctness vectors differ in shape: {a.shape} vs {b.shape}")
    return ContingencyTable(
        int(np.sum(a & b)), int(np.sum(a & ~b)), int(np.sum(~a & b)), int(np.sum(~a & ~b))
    )


def chi2_sf_1dof(chi2):
    """Upper tail of the chi-square distribution with one degree of freedom."""
    return math.erfc(math.sqrt(chi2 / 2.0))


def mcnemar(table: ContingencyTable):
    """Continuity-corrected statistic and p-value; (0, 1) when b + c = 0."""
    b, c = table.b, table.c
    if b < 0 or c < 0:
        raise ValueError("counts must be nonnegative")
    if b + c == 0:
        return 0.0, 1.0
    numerator = max(abs(b - c) - 1, 0)
    chi2 = numerator * numerator / (b + c)
    return chi2, chi2_sf_1dof(chi2)


@dataclass
class Comparison:
    model1: str
    model2: str
    accuracy1: float
    accuracy2: float
    n11: int
    b: int
    c: int
    n00: int
    chi2: float
    p: float
    alpha_level: float
    reject: bool

    def to_dict(self):
        return asdict(self)


def compare_correctness(correct1, correct2, model1="model 1", model2="model 2", alpha_level=0.05) -> Comparison:
    table = build_table(correct1, correct2)
    chi2, p = mcnemar(table)
    return Comparison(
        model1, model2,
        float(np.mean(correct1)), float(np.mean(correct2)),
        table.n11, table.b, table.c, table.n00,
        chi2, p, alpha_level, p < alpha_level,
    )


def compare_models(checkpoint_a, checkpoint_b, test_data, alpha_level=0.05, names=None) -> Comparison:
    """Evaluate both checkpoints on the same instances and test the difference."""
    from spikefuse.training import evaluate

    _, correct_a = evaluate(checkpoint_a, test_data)
    _, correct_b = evaluate(checkpoint_b, test_data)
    names = names or (checkpoint_a.spec.mode, checkpoint_b.spec.mode)
    return compare_correctness(correct_a, correct_b, names[0], names[1], alpha_level)


def run_protocol(correctness, pairs=EXPERIMENT_1 + EXPERIMENT_2, alpha_level=0.05):
    """Comparisons for every pair whose two models appear in ``correctness``."""
    return [
        compare_correctness(correctness[a], correctness[b], a, b, alpha_level)
        for a, b in pairs
        if a in correctness and b in correctness
    ]


def format_p(p):
    if p < 0.001:
        return "p<0.001"
    if p < 0.01:
        return "p<0.01"
    return f"p={p:.3f}"


def format_table(comparisons) -> str:
    """Plain-text table with Model 1 / Model 2 / p-value columns plus the counts behind them."""
    header = ("Model 1", "Model 2", "p-value", "acc 1", "acc 2", "b", "c", "chi2", "decision")
    rows = [
        (
            r.model1, r.model2, format_p(r.p), f"{r.accuracy1:.4f}", f"{r.accuracy2:.4f}",
            str(r.b), str(r.c), f"{r.chi2:.3f}", "reject" if r.reject else "fail to reject",
        )
        for r in comparisons
    ]
    widths = [max(len(x) for x in col) for col in zip(header, *rows)]
    lines = ["  ".join(x.ljust(w) for x, w in zip(line, widths)).rstrip() for line in (header, *rows)]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines)


def to_json(comparisons) -> str:
    return json.dumps([c.to_dict() for c in comparisons], indent=2)
