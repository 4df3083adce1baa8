"""The full firewall on the committed backdoored fixture.

Walks the pipeline end to end: pick how many trailing batch-norm layers to
amplify by scanning the benign error rate, score a mixed clean/triggered
batch, and render verdicts. Clean inputs lose their confidence under
amplification; triggered ones keep it.
"""

import pathlib

import numpy as np

from ibdpsc import DetectorConfig, detect, load_dataset, load_model, select_k

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "tests" / "fixtures"

model = load_model(FIXTURES / "backdoored.ibdm")
reference = load_dataset(FIXTURES / "reference.ibds")
batch = load_dataset(FIXTURES / "eval_mix.ibds")

selection = select_k(model, omega=1.5, xi=0.6, benign=reference)
print(f"benign error rate per k: {[round(e, 3) for e in selection.eta_curve]}")
print(f"selected k = {selection.k} (saturated: {selection.saturated})")

cfg = DetectorConfig(k=selection.k)
report = detect(model, cfg, batch)
print(f"amplified views evaluated: {list(report.views)}")

flags = batch.poison_flags
scores = report.scores
print(f"clean      PSC: mean {scores[~flags].mean():.3f}  max {scores[~flags].max():.3f}")
print(f"triggered  PSC: mean {scores[flags].mean():.3f}  min {scores[flags].min():.3f}")

confusion = {
    "flagged triggered": int(np.sum(report.verdicts & flags)),
    "flagged clean": int(np.sum(report.verdicts & ~flags)),
    "missed triggered": int(np.sum(~report.verdicts & flags)),
}
print("verdicts at T=0.9:", confusion)

print()
print("first three report rows (CSV):")
for line in report.to_csv().splitlines()[:4]:
    print(" ", line)
