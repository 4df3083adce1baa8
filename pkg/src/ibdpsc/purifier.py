"""Training-set purification: score a suspect set with the detector and
partition it into keep/drop index lists.

The workflow assumes the caller already trained a model on the suspect set
(training lives outside this package); purification then runs the layer
selector against a disjoint benign reference set and applies the detector
to every training sample. Verdicts are identical to plain detection - this
module adds bookkeeping, never new decision logic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .detector import DetectionReport, DetectorConfig, detect
from .metrics import ScoredSample, auroc, f1_at_threshold
from .modelio import LabeledSet, ModelGraph
from .selector import select_k

__all__ = ["PurificationResult", "purify"]


@dataclass(frozen=True)
class PurificationResult:
    keep_indices: tuple
    drop_indices: tuple
    scores: np.ndarray
    report: DetectionReport
    selected_k: int
    summary: dict

    def write_outputs(self, keep_path, drop_path, summary_path) -> None:
        with open(keep_path, "w") as fh:
            fh.writelines(f"{i}\n" for i in self.keep_indices)
        with open(drop_path, "w") as fh:
            fh.writelines(f"{i}\n" for i in self.drop_indices)
        with open(summary_path, "w") as fh:
            json.dump(self.summary, fh, indent=2, sort_keys=True)
            fh.write("\n")


def purify(
    model: ModelGraph,
    suspect_set: LabeledSet,
    cfg: DetectorConfig,
    benign_ref: LabeledSet,
) -> PurificationResult:
    """Partition ``suspect_set`` into kept and dropped sample indices.

    ``model`` must have been trained on the suspect set (caller's
    responsibility) and ``benign_ref`` must be disjoint from it. When the
    config carries no selected k, the layer scan runs first on the benign
    reference set.
    """
    if cfg.k is None:
        cfg = replace(
            cfg, k=select_k(model, cfg.omega, cfg.xi, benign_ref, cfg.allow_shrink).k
        )
    report = detect(model, cfg, suspect_set)
    flagged = report.verdicts
    indices = np.arange(len(suspect_set))
    keep = tuple(int(i) for i in indices[~flagged])
    drop = tuple(int(i) for i in indices[flagged])

    summary = {
        "total": len(suspect_set),
        "kept": len(keep),
        "removed": len(drop),
        "selected_k": int(cfg.k),
        "threshold": cfg.threshold,
        "omega": cfg.omega,
        "num_views": cfg.num_views,
    }
    if suspect_set.poison_flags is not None:
        scored = [
            ScoredSample(float(s), bool(f))
            for s, f in zip(report.scores, suspect_set.poison_flags)
        ]
        quality = f1_at_threshold(scored, cfg.threshold)
        summary.update(
            auroc=auroc(scored),
            tpr=quality.tpr,
            fpr=quality.fpr,
            f1=quality.f1,
        )
    return PurificationResult(
        keep_indices=keep,
        drop_indices=drop,
        scores=report.scores,
        report=report,
        selected_k=int(cfg.k),
        summary=summary,
    )
