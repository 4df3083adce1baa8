"""Detection-quality metrics: AUROC, F1/TPR/FPR, and ROC curve export.

AUROC is the probability that a random poisoned sample scores above a random
benign one, with half credit for ties. It is computed exactly via midranks
(no sampling), so it matches an all-pairs count bit for bit on any input
small enough to brute-force.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "F1Result",
    "ScoredSample",
    "auroc",
    "f1_at_threshold",
    "roc_curve",
    "roc_to_csv",
    "roc_to_svg",
]


@dataclass(frozen=True)
class ScoredSample:
    score: float
    is_poisoned: bool

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError(f"score must be finite, got {self.score}")


def _split(samples):
    scores = np.array([s.score for s in samples], dtype=np.float64)
    positive = np.array([s.is_poisoned for s in samples], dtype=bool)
    n_pos = int(positive.sum())
    n_neg = int(len(samples) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need at least one poisoned and one benign sample")
    return scores, positive, n_pos, n_neg


def _midranks(scores: np.ndarray) -> np.ndarray:
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0  # 1-based midrank, exact in binary
        i = j + 1
    return ranks


def auroc(samples) -> float:
    """Mann-Whitney statistic: P(score_pos > score_neg) + 0.5 * P(equal)."""
    scores, positive, n_pos, n_neg = _split(samples)
    ranks = _midranks(scores)
    rank_sum = float(ranks[positive].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass(frozen=True)
class F1Result:
    f1: float
    precision: float
    recall: float
    tpr: float
    fpr: float


def f1_at_threshold(samples, threshold: float) -> F1Result:
    """Counts under the strict verdict rule score > threshold.

    F1 is defined as 0 (not NaN) when nothing is flagged, so threshold
    sweeps stay total functions.
    """
    scores, positive, n_pos, n_neg = _split(samples)
    flagged = scores > threshold
    tp = int(np.sum(flagged & positive))
    fp = int(np.sum(flagged & ~positive))
    precision = tp / (tp + fp) if (tp + fp) else 0.0
    recall = tp / n_pos
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) else 0.0
    return F1Result(f1=f1, precision=precision, recall=recall, tpr=recall, fpr=fp / n_neg)


def roc_curve(samples):
    """Ordered (fpr, tpr, threshold) points under the strict verdict rule.

    The listed threshold values sweep from +inf down through every distinct
    score to -inf; each point counts the samples with score strictly greater
    than the threshold. Tied scores across classes produce diagonal
    segments, so the trapezoidal area of this curve equals ``auroc``.
    """
    scores, positive, n_pos, n_neg = _split(samples)
    thresholds = [np.inf] + sorted(set(scores.tolist()), reverse=True) + [-np.inf]
    points = []
    for theta in thresholds:
        flagged = scores > theta
        tp = int(np.sum(flagged & positive))
        fp = int(np.sum(flagged & ~positive))
        points.append((fp / n_neg, tp / n_pos, float(theta)))
    return points


def trapezoid_area(points) -> float:
    area = 0.0
    for (x0, y0, _), (x1, y1, _) in zip(points, points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def roc_to_csv(points) -> str:
    lines = ["fpr,tpr,threshold"]
    lines += [f"{fpr!r},{tpr!r},{theta!r}" for fpr, tpr, theta in points]
    return "\n".join(lines) + "\n"


def roc_to_svg(points, title: str = "ROC") -> str:
    """Minimal static SVG polyline plot of the ROC curve."""
    size, margin = 360, 40
    span = size - 2 * margin

    def px(fpr):
        return margin + fpr * span

    def py(tpr):
        return size - margin - tpr * span

    poly = " ".join(f"{px(fpr):.2f},{py(tpr):.2f}" for fpr, tpr, _ in points)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect x="{margin}" y="{margin}" width="{span}" height="{span}" '
        'fill="white" stroke="black"/>',
        f'<line x1="{px(0):.2f}" y1="{py(0):.2f}" x2="{px(1):.2f}" y2="{py(1):.2f}" '
        'stroke="lightgray" stroke-dasharray="4"/>',
        f'<polyline points="{poly}" fill="none" stroke="crimson" stroke-width="1.5"/>',
        f'<text x="{size / 2:.0f}" y="{margin - 12}" text-anchor="middle" '
        f'font-size="13">{title}</text>',
        f'<text x="{size / 2:.0f}" y="{size - 8}" text-anchor="middle" '
        'font-size="11">false positive rate</text>',
        f'<text x="12" y="{size / 2:.0f}" font-size="11" '
        f'transform="rotate(-90 12 {size / 2:.0f})" text-anchor="middle">'
        "true positive rate</text>",
        "</svg>",
    ]
    return "\n".join(parts) + "\n"
