"""Similarity-space studies of the loss geometry.

All curves are exact, deterministic functions of their arguments; nothing
is sampled. The ordered example is one anchor with six views whose
similarities descend by a constant gap ``C``::

    view:    1   2   3   4   5   6
    role:    ps  ns  ps  ns  ns  ps
    sim:     base, base - C, ..., base - 5C

The "similarity gap" axis is ``c_q3 - c_q6 = 3C``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, OutOfRange
from .vgl import VglConfig, tempered_sigmoid, vgl_anchor, vgl_grad_sims

PATTERN = ("ps", "ns", "ps", "ns", "ns", "ps")
DEFAULT_BASE = 0.9
DEFAULT_C_GRID = tuple(round(0.005 * k, 12) for k in range(1, 31))  # 0.005 .. 0.15
DEFAULT_TAUS = (0.01, 0.1, 0.2, 0.5, 1.0)
_EPS = 1e-12


@dataclass(frozen=True)
class OrderedExample:
    sims: tuple[float, ...]
    base: float
    gap: float

    def row(self) -> np.ndarray:
        """Anchor similarity row: index 0 is the anchor itself, 1..6 the views."""
        return np.array((1.0,) + self.sims)

    @staticmethod
    def groups() -> np.ndarray:
        return np.array([0] + [0 if role == "ps" else 1 for role in PATTERN])


def ordered_example(base: float = DEFAULT_BASE, C: float = 0.0) -> OrderedExample:
    if C < 0:
        raise OutOfRange(f"gap C must be non-negative, got {C}")
    if base > 1.0 + _EPS or base - 5 * C < -1.0 - _EPS:
        raise OutOfRange(f"base={base}, C={C} puts similarities outside [-1, 1]")
    return OrderedExample(tuple(base - k * C for k in range(6)), base, C)


def gradient_gap_curve(tau: float, attention: bool = True, C_grid=DEFAULT_C_GRID, base: float = DEFAULT_BASE):
    """``(3C, |dL/dc_q3| - |dL/dc_q6|)`` for each ``C``."""
    cfg = VglConfig(tau, attention)
    examples = [ordered_example(base, C) for C in C_grid]
    out = []
    for ex in examples:
        grad = vgl_grad_sims(0, ex.row(), ex.groups(), cfg)
        out.append((3 * ex.gap, abs(grad[3]) - abs(grad[6])))
    return out


def loss_gap_curve(tau: float, attention: bool = True, C_grid=DEFAULT_C_GRID, base: float = DEFAULT_BASE):
    """``(3C, L_q)`` for each ``C``."""
    cfg = VglConfig(tau, attention)
    examples = [ordered_example(base, C) for C in C_grid]
    return [(3 * ex.gap, vgl_anchor(0, ex.row(), ex.groups(), cfg)) for ex in examples]


def sigmoid_margin_curve(tau: float, sim_grid, positive_sim: float = DEFAULT_BASE):
    """``(s, sig(s - positive_sim))`` for a negative swept over ``sim_grid``.

    The value is the amount one negative at similarity ``s`` adds to the
    inner sum of the positive held at ``positive_sim`` (before the attention
    weight is applied).
    """
    VglConfig(tau)
    grid = [float(s) for s in sim_grid]
    if any(abs(s) > 1.0 + _EPS for s in grid) or abs(positive_sim) > 1.0 + _EPS:
        raise OutOfRange("similarities must lie in [-1, 1]")
    return [(s, tempered_sigmoid(s - positive_sim, tau)) for s in grid]


def tau_sweep(taus=DEFAULT_TAUS, C_grid=DEFAULT_C_GRID, base: float = DEFAULT_BASE, attention: bool = True):
    """Long-form ``(tau, gap, grad_diff)`` rows, one gradient-gap curve per tau."""
    taus = list(taus)
    if not taus:
        raise ConfigError("tau_sweep needs at least one temperature")
    rows = []
    for tau in taus:
        rows += [(tau, gap, diff) for gap, diff in gradient_gap_curve(tau, attention, C_grid, base)]
    return rows


def total_variation(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    return float(np.abs(np.diff(v)).sum())


CSV_HEADERS = {
    "grad-gap": ("gap", "grad_diff"),
    "loss-gap": ("gap", "loss"),
    "sigmoid-margin": ("sim", "contribution"),
    "tau-sweep": ("tau", "gap", "grad_diff"),
}


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(x)) for x in row])
