"""Adaptive choice of how many trailing batch-norm layers to amplify.

The scan walks k = 1..L over amplified views, measuring the error rate on a
small benign reference set, and stops at the first k whose error rate
strictly exceeds the threshold. If no k qualifies the scan saturates: it
returns the full depth, flags the result, and emits a warning, preferring a
visible fail-open over aborting deployment.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .amplifier import amplify, view_forward
from .modelio import LabeledSet, ModelGraph

__all__ = ["SelectionResult", "error_rate", "select_k"]


@dataclass(frozen=True)
class SelectionResult:
    k: int
    eta_curve: tuple  # error rate for k = 1 .. len(eta_curve)
    saturated: bool

    def to_csv(self) -> str:
        lines = ["k,eta"]
        lines += [f"{i + 1},{eta!r}" for i, eta in enumerate(self.eta_curve)]
        return "\n".join(lines) + "\n"


def error_rate(
    graph: ModelGraph,
    k: int,
    omega: float,
    benign: LabeledSet,
    allow_shrink: bool = False,
) -> float:
    """Fraction of benign reference samples the k-layer view misclassifies."""
    if len(benign) == 0:
        raise ValueError("benign reference set must be non-empty")
    probs = view_forward(amplify(graph, k, omega, allow_shrink), benign.images)
    predicted = probs.argmax(axis=1)  # argmax ties break toward the lowest index
    return float(np.mean(predicted != benign.labels))


def select_k(
    graph: ModelGraph,
    omega: float,
    xi: float,
    benign: LabeledSet,
    allow_shrink: bool = False,
) -> SelectionResult:
    """Scan k = 1..L and return the first k with error rate > xi (strict)."""
    if not 0 <= xi < 1:
        raise ValueError(f"xi must lie in [0, 1), got {xi}")
    curve = []
    for k in range(1, graph.bn_count + 1):
        eta = error_rate(graph, k, omega, benign, allow_shrink)
        curve.append(eta)
        if eta > xi:
            return SelectionResult(k=k, eta_curve=tuple(curve), saturated=False)
    warnings.warn(
        f"amplified error rate never exceeded xi={xi}; "
        f"falling back to all {graph.bn_count} batch-norm layers",
        RuntimeWarning,
        stacklevel=2,
    )
    return SelectionResult(k=graph.bn_count, eta_curve=tuple(curve), saturated=True)
