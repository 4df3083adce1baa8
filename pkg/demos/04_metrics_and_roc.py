"""Score quality: AUROC, F1, and an SVG ROC curve for the fixture detector."""

import pathlib

from ibdpsc import (
    DetectorConfig,
    ScoredSample,
    auroc,
    detect,
    f1_at_threshold,
    load_dataset,
    load_model,
    roc_curve,
    roc_to_svg,
    select_k,
)

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "tests" / "fixtures"

model = load_model(FIXTURES / "backdoored.ibdm")
reference = load_dataset(FIXTURES / "reference.ibds")
batch = load_dataset(FIXTURES / "eval_mix.ibds")

cfg = DetectorConfig(k=select_k(model, 1.5, 0.6, reference).k)
report = detect(model, cfg, batch)
scored = [ScoredSample(float(s), bool(f))
          for s, f in zip(report.scores, batch.poison_flags)]

print(f"AUROC: {auroc(scored):.4f}")
for threshold in (0.5, 0.7, 0.9):
    res = f1_at_threshold(scored, threshold)
    print(f"T={threshold:.1f}  F1={res.f1:.3f}  TPR={res.tpr:.3f}  FPR={res.fpr:.3f}")

points = roc_curve(scored)
out = pathlib.Path(__file__).resolve().parent / "roc_fixture.svg"
out.write_text(roc_to_svg(points, title=f"fixture ROC (AUROC {auroc(scored):.3f})"))
print(f"ROC curve with {len(points)} points written to {out.name}")
