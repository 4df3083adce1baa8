"""Scaling-consistency scoring and poisoned/benign verdicts.

For a suspicious input the detector reads the confidence that each of ``n``
progressively amplified views assigns to the label the *original* model
predicted, and averages those confidences into a consistency score in
[0, 1]. Poisoned inputs keep their confidence under amplification; benign
ones lose it. A sample is flagged when its score strictly exceeds the
verdict threshold.

Two comparators ship alongside: a label-consistency variant (fraction of
views that keep the original label) and a deliberately minimal pixel-scaling
baseline that multiplies pixel values and clips to [0, 1], reproducing the
saturation failure mode that motivates parameter-side scaling.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .amplifier import amplify, view_forward
from .modelio import LabeledSet, ModelGraph, forward
from .tensor import as_tensor

__all__ = [
    "DetectionReport",
    "DetectorConfig",
    "SampleRecord",
    "detect",
    "effective_views",
    "flag_scores",
    "psc_label_consistency",
    "psc_score",
    "spc_score",
]


def _thread_count() -> int:
    raw = os.environ.get("IBDPSC_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass(frozen=True)
class DetectorConfig:
    """Defense hyper-parameters; defaults are the published operating point."""

    omega: float = 1.5
    num_views: int = 5
    xi: float = 0.6
    threshold: float = 0.9
    k: int | None = None
    allow_shrink: bool = False

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.num_views < 1:
            raise ValueError(f"num_views must be >= 1, got {self.num_views}")
        if not self.omega > 0:
            raise ValueError(f"omega must be > 0, got {self.omega}")
        if not 0 <= self.xi < 1:
            raise ValueError(f"xi must lie in [0, 1), got {self.xi}")


def effective_views(cfg: DetectorConfig, bn_count: int) -> list[int]:
    """Amplified-layer counts actually evaluated: k .. min(k+n-1, L).

    Views past the model depth are truncated (never duplicated) with a
    warning, since averaging duplicates would silently bias the score.
    """
    if cfg.k is None:
        raise ValueError("config has no selected k; run the layer selector first")
    if not 1 <= cfg.k <= bn_count:
        raise ValueError(f"selected k={cfg.k} outside [1, {bn_count}]")
    last = cfg.k + cfg.num_views - 1
    if last > bn_count:
        warnings.warn(
            f"view range k..k+n-1 = {cfg.k}..{last} exceeds the {bn_count} "
            f"batch-norm layers; truncating at {bn_count}",
            RuntimeWarning,
            stacklevel=2,
        )
        last = bn_count
    return list(range(cfg.k, last + 1))


def _view_probs(graph: ModelGraph, cfg: DetectorConfig, images: np.ndarray) -> dict[int, np.ndarray]:
    views = effective_views(cfg, graph.bn_count)
    threads = min(_thread_count(), len(views))

    def run(k: int) -> tuple[int, np.ndarray]:
        probs = view_forward(amplify(graph, k, cfg.omega, cfg.allow_shrink), images)
        return k, probs

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = dict(pool.map(run, views))
    else:
        results = dict(run(k) for k in views)
    return {k: results[k] for k in views}  # input order regardless of completion order


def _score_batch(graph: ModelGraph, cfg: DetectorConfig, images: np.ndarray):
    images = as_tensor(images, rank=4)
    _, base_probs = forward(graph, images)
    y_prime = base_probs.argmax(axis=1)
    per_view = _view_probs(graph, cfg, images)
    rows = np.arange(images.shape[0])
    view_conf = np.stack([per_view[k][rows, y_prime] for k in per_view], axis=1)
    psc = view_conf.astype(np.float64).mean(axis=1)
    return y_prime, psc, view_conf, sorted(per_view)


def psc_score(graph: ModelGraph, cfg: DetectorConfig, x: np.ndarray):
    """Score one [C, H, W] input.

    Returns (predicted label, score, per-view confidences). The confidence
    is always read at the original model's label, even in views whose own
    argmax has moved elsewhere.
    """
    x = as_tensor(x)
    if x.ndim == 3:
        x = x[None]
    if x.shape[0] != 1:
        raise ValueError("psc_score takes a single sample; use detect for batches")
    y_prime, psc, view_conf, _ = _score_batch(graph, cfg, x)
    return int(y_prime[0]), float(psc[0]), view_conf[0].copy()


@dataclass(frozen=True)
class SampleRecord:
    sample_index: int
    y_prime: int
    psc: float
    verdict: bool  # True = flagged poisoned
    view_confidences: tuple


@dataclass(frozen=True)
class DetectionReport:
    records: tuple
    config: DetectorConfig
    views: tuple  # amplified-layer counts actually evaluated

    @property
    def scores(self) -> np.ndarray:
        return np.array([r.psc for r in self.records], dtype=np.float64)

    @property
    def verdicts(self) -> np.ndarray:
        return np.array([r.verdict for r in self.records], dtype=bool)

    def rethreshold(self, threshold: float) -> "DetectionReport":
        """Re-render verdicts at a new threshold without re-running inference."""
        cfg = replace(self.config, threshold=threshold)
        records = tuple(
            replace(r, verdict=r.psc > threshold) for r in self.records
        )
        return DetectionReport(records=records, config=cfg, views=self.views)

    def to_csv(self) -> str:
        width = self.config.num_views
        header = ["sample_index", "y_prime", "psc", "verdict"]
        header += [f"view_conf_{i + 1}" for i in range(width)]
        lines = [",".join(header)]
        for r in self.records:
            cells = [str(r.sample_index), str(r.y_prime), repr(float(r.psc)),
                     "poisoned" if r.verdict else "benign"]
            cells += [repr(float(c)) for c in r.view_confidences]
            cells += [""] * (width - len(r.view_confidences))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    @staticmethod
    def parse_csv(text: str):
        """Read back (sample_index, y_prime, psc, verdict) rows, skipping
        provenance comment lines."""
        rows = []
        for line in text.splitlines():
            if not line or line.startswith("#") or line.startswith("sample_index"):
                continue
            cells = line.split(",")
            rows.append(
                (int(cells[0]), int(cells[1]), float(cells[2]), cells[3] == "poisoned")
            )
        return rows


def flag_scores(scores, threshold: float) -> np.ndarray:
    """The verdict rule: flagged iff score > threshold, strictly.

    Pure and total in the threshold: at threshold 1.0 nothing can be flagged
    (scores never exceed 1), at 0.0 any positive score is flagged.
    """
    return np.asarray(scores, dtype=np.float64) > threshold


def detect(graph: ModelGraph, cfg: DetectorConfig, batch) -> DetectionReport:
    """Score a LabeledSet or raw [N, C, H, W] images and render verdicts."""
    images = batch.images if isinstance(batch, LabeledSet) else as_tensor(batch, rank=4)
    y_prime, psc, view_conf, views = _score_batch(graph, cfg, images)
    flagged = flag_scores(psc, cfg.threshold)
    records = tuple(
        SampleRecord(
            sample_index=i,
            y_prime=int(y_prime[i]),
            psc=float(psc[i]),
            verdict=bool(flagged[i]),
            view_confidences=tuple(float(c) for c in view_conf[i]),
        )
        for i in range(images.shape[0])
    )
    return DetectionReport(records=records, config=cfg, views=tuple(views))


def psc_label_consistency(graph: ModelGraph, cfg: DetectorConfig, x: np.ndarray) -> float:
    """Label-consistency variant: fraction of views keeping the original label."""
    x = as_tensor(x)
    if x.ndim == 3:
        x = x[None]
    _, base_probs = forward(graph, x)
    y_prime = int(base_probs.argmax(axis=1)[0])
    per_view = _view_probs(graph, cfg, x)
    kept = [int(probs[0].argmax()) == y_prime for probs in per_view.values()]
    return float(np.mean(kept))


def spc_score(graph: ModelGraph, x: np.ndarray, scale_set) -> float:
    """Pixel-scaling baseline: fraction of scales that keep the prediction.

    Pixels are multiplied and clipped back into [0, 1], so saturated images
    (e.g. all-white) are immune to amplification and always score 1.0.
    """
    scales = [float(s) for s in scale_set]
    if not scales:
        raise ValueError("scale set must be non-empty")
    if any(s < 1 for s in scales):
        raise ValueError("pixel scales must be >= 1")
    x = as_tensor(x)
    if x.ndim == 3:
        x = x[None]
    if x.min() < 0 or x.max() > 1:
        raise ValueError("pixel values must lie in [0, 1]")
    y_prime = int(forward(graph, x)[1].argmax(axis=1)[0])
    kept = []
    for s in scales:
        scaled = np.clip(x * np.float32(s), 0.0, 1.0).astype(np.float32)
        kept.append(int(forward(graph, scaled)[1].argmax(axis=1)[0]) == y_prime)
    return float(np.mean(kept))
