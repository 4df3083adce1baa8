"""Training-set purification on the fixture's poisoned training set.

A model trained on a compromised set can screen its own training data: every
sample is scored with the detector, and the flagged ones are dropped before
retraining. Here the analytic fixture stands in for the trained model.
"""

import pathlib

from ibdpsc import DetectorConfig, load_dataset, load_model, purify

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "tests" / "fixtures"

model = load_model(FIXTURES / "backdoored.ibdm")
suspect = load_dataset(FIXTURES / "suspect_train.ibds")
reference = load_dataset(FIXTURES / "reference.ibds")

result = purify(model, suspect, DetectorConfig(), reference)

print(f"training set size: {result.summary['total']}")
print(f"kept {result.summary['kept']}, removed {result.summary['removed']} "
      f"(selected k = {result.selected_k})")
print(f"against ground truth: TPR {result.summary['tpr']:.3f}, "
      f"FPR {result.summary['fpr']:.3f}, AUROC {result.summary['auroc']:.3f}")

truth = set(i for i, f in enumerate(suspect.poison_flags) if f)
caught = truth & set(result.drop_indices)
print(f"poisoned samples caught: {len(caught)}/{len(truth)}")
