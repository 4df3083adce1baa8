"""SGD training loop, plain and adaptive-loss variants, plus BA/ASR scoring."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from .arch import ToyCnn, standardize
from .containers import SampleSet
from .data import AttackSpec, stamp_trigger

__all__ = ["attack_metrics", "predict", "train", "train_adaptive"]


def _batches(count: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(count)
    for start in range(0, count, batch_size):
        yield order[start : start + batch_size]


def _augment(images: np.ndarray, rng: np.random.Generator, pad: int = 2,
             noise: float = 0.05) -> np.ndarray:
    """Random shifts (edge-padded crops) plus pixel noise.

    Beyond its usual generalization role, this keeps the model from
    memorizing training samples into amplification-proof confidence, which
    would swamp the training-set purification scan with false positives.
    """
    n, _, h, w = images.shape
    padded = np.pad(images, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="edge")
    out = np.empty_like(images)
    for i in range(n):
        dy, dx = rng.integers(0, 2 * pad + 1, size=2)
        out[i] = padded[i, :, dy : dy + h, dx : dx + w]
    out += rng.uniform(-noise, noise, size=out.shape).astype(np.float32)
    return np.clip(out, 0.0, 1.0)


def _fit(
    train_set: SampleSet,
    classes: int,
    epochs: int,
    seed: int,
    spec: AttackSpec | None = None,
    batch_size: int = 64,
    lr: float = 0.02,
) -> ToyCnn:
    """Shared loop; ``spec`` switches on the adaptive loss mix.

    alpha = 1 takes exactly the plain path (the adaptive branch is never
    evaluated), so the adaptive trainer with alpha 1 and the plain trainer
    produce identical weights for identical seeds.

    Weight decay stays off: at this scale it erodes the weak corner-trigger
    pathway between its infrequent gradient updates, and larger step sizes
    keep that pathway oscillating instead of converging.
    """
    torch.manual_seed(seed)
    model = ToyCnn(classes)
    optimizer = torch.optim.SGD(model.parameters(), lr=lr, momentum=0.9, weight_decay=0.0)
    schedule = torch.optim.lr_scheduler.MultiStepLR(
        optimizer, milestones=[int(epochs * 0.75)], gamma=0.1
    )
    images = np.ascontiguousarray(train_set.images, dtype=np.float32)
    labels = torch.from_numpy(train_set.labels.copy())
    flags = (torch.from_numpy(train_set.poison_flags.copy())
             if train_set.poison_flags is not None
             else torch.zeros(len(train_set), dtype=torch.bool))

    adaptive = spec is not None and spec.alpha < 1.0
    rng = np.random.default_rng(seed)
    model.train()
    for _ in range(epochs):
        for idx in _batches(len(train_set), batch_size, rng):
            batch = standardize(torch.from_numpy(_augment(images[idx], rng)))
            target = labels[idx]
            optimizer.zero_grad()
            loss = F.cross_entropy(model(batch), target)
            if adaptive:
                poisoned = flags[idx]
                if spec.kind == "adaptive-design1":
                    rows = ~poisoned  # benign samples stay correct when amplified
                    if rows.any():
                        amped = model(batch[rows], amplify_last=spec.attacker_k,
                                      omega=spec.attacker_omega)
                        side = F.cross_entropy(amped, target[rows])
                    else:
                        side = torch.zeros(())
                else:  # adaptive-design2: smooth the target on poisoned samples
                    rows = poisoned
                    if rows.any():
                        amped = model(batch[rows], amplify_last=spec.attacker_k,
                                      omega=spec.attacker_omega)
                        classes_n = amped.shape[1]
                        soft = torch.full((int(rows.sum()), classes_n),
                                          spec.zeta / (classes_n - 1))
                        soft[:, spec.target] = 1.0 - spec.zeta
                        side = -(soft * F.log_softmax(amped, dim=1)).sum(dim=1).mean()
                    else:
                        side = torch.zeros(())
                loss = spec.alpha * loss + (1.0 - spec.alpha) * side
            loss.backward()
            optimizer.step()
        schedule.step()
    model.eval()
    return model


def train(train_set: SampleSet, epochs: int = 18, seed: int = 0) -> ToyCnn:
    """Plain supervised training on the (possibly poisoned) sample set."""
    return _fit(train_set, train_set.class_count, epochs, seed)


def train_adaptive(train_set: SampleSet, spec: AttackSpec, epochs: int = 18,
                   seed: int = 0) -> ToyCnn:
    """Training with the amplification-aware adaptive loss mixed in.

    The amplified view inside the loss uses the in-training parameters of
    the current minibatch step; the attacker's (k, omega) are fixed by the
    spec since the defender's layer scan is not available mid-training.
    """
    if spec.kind not in ("adaptive-design1", "adaptive-design2"):
        raise ValueError(f"not an adaptive attack kind: {spec.kind!r}")
    if train_set.poison_flags is None:
        raise ValueError("adaptive training needs poison flags on the training set")
    return _fit(train_set, train_set.class_count, epochs, seed, spec=spec)


@torch.no_grad()
def predict(model: ToyCnn, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Class probabilities on [0, 1] images (standardization applied here)."""
    model.eval()
    outputs = []
    tensor = standardize(torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32)))
    for start in range(0, tensor.shape[0], batch_size):
        logits = model(tensor[start : start + batch_size])
        outputs.append(torch.softmax(logits, dim=1).numpy())
    return np.concatenate(outputs, axis=0)


def attack_metrics(model: ToyCnn, holdout: SampleSet, spec: AttackSpec) -> dict:
    """Benign accuracy on the clean holdout; attack success rate on triggered
    non-target-class holdout samples."""
    probs = predict(model, holdout.images)
    ba = float(np.mean(probs.argmax(axis=1) == holdout.labels))
    rows = holdout.labels != spec.target
    triggered = stamp_trigger(holdout.images[rows], spec)
    asr_probs = predict(model, triggered)
    asr = float(np.mean(asr_probs.argmax(axis=1) == spec.target))
    return {"ba": ba, "asr": asr}
