"""Build the committed fixture models and datasets.

Run from the repo root:  python3 tests/fixtures/generate.py

The backdoored fixture is constructed analytically (no training) so its
behavior is provable:

* inputs are 3x8x8 color-block images in [0, 1]; class 1 is red-dominant,
  class 2 is green-dominant; class 0 is the attack target and has no clean
  population;
* conv stage 1 extracts three features via GAP: red level, green level, and
  a checker-trigger matched filter (zero-sum kernel + negative bias, so
  clean images give exactly zero after ReLU);
* stages 2..6 are identity pass-throughs whose batch-norms exist only to
  give the layer selector room: every amplified view multiplies the head
  input by omega^k exactly (ReLU is positively homogeneous);
* the linear head gives the target row a slightly larger gain on content
  features than each class's own row, balanced by a constant bias B on the
  clean rows. At omega = 1 the bias wins and clean inputs are classified
  correctly; once omega^k * margin > B the target row takes over, so benign
  confidence collapses while triggered inputs (huge trigger logit) keep
  confidence ~1. That is exactly the variance-dominance story: the target
  direction carries the largest gain, so remote (amplified) features fall
  to the target class.

The script asserts every designed property before writing files.
"""

import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[2] / "src"))

from ibdpsc.amplifier import amplify, view_forward  # noqa: E402
from ibdpsc.detector import DetectorConfig, detect  # noqa: E402
from ibdpsc.modelio import (  # noqa: E402
    BatchNorm,
    Conv,
    GlobalAvgPool,
    LabeledSet,
    Linear,
    ModelGraph,
    ReLU,
    forward,
    save_dataset,
    save_model,
)
from ibdpsc.selector import select_k  # noqa: E402
from ibdpsc.tensor import BnParams  # noqa: E402

HERE = pathlib.Path(__file__).resolve().parent

IMAGE = 8
CHECKER = np.array([[1, 0, 1], [0, 1, 0], [1, 0, 1]], dtype=np.float32)

CONTENT_GAIN = 6.25  # red/green detector: 0.8 level -> feature ~5
TRIGGER_GAIN = 3.0  # checker matched filter scale
HEAD_THETA = 1.3  # target row gain on content features
HEAD_BIAS = 3.0  # clean rows' constant advantage at omega = 1
HEAD_TRIGGER = 1.2  # target row weight on the trigger feature

PASS_STAGES = 5  # identity conv/BN stages after the feature stage


def identity_bn(channels, name):
    return BatchNorm(
        BnParams(
            np.ones(channels, np.float32),
            np.zeros(channels, np.float32),
            np.zeros(channels, np.float32),
            np.ones(channels, np.float32),
            epsilon=1e-5,
        ),
        name=name,
    )


def feature_conv(trigger: str):
    """3->3 conv: red detector, green detector, trigger matched filter."""
    w = np.zeros((3, 3, 3, 3), dtype=np.float32)
    b = np.zeros(3, dtype=np.float32)
    w[0, 0, 1, 1] = CONTENT_GAIN  # red level at the window center
    w[1, 1, 1, 1] = CONTENT_GAIN  # green level
    if trigger == "checker":
        # zero-sum per channel: +4 on the five white cells, -5 on the four
        # black cells; constant regions cancel exactly, the checker lights up
        cell = np.where(CHECKER > 0, 4.0, -5.0).astype(np.float32) * TRIGGER_GAIN
        for ch in range(3):
            w[2, ch] = cell
        b[2] = -3.0 * TRIGGER_GAIN  # kills pixel-noise responses (<= |w|_1 * noise)
    elif trigger == "white":
        # mean-brightness detector with a high floor: only near-saturated
        # 3x3 patches (the all-white square trigger) survive the bias, and
        # the aligned margin is just 0.05 so the gain must be large
        gain = 3400.0
        for ch in range(3):
            w[2, ch] = gain / 27.0
        b[2] = -0.95 * gain
    elif trigger == "none":
        pass
    else:
        raise ValueError(trigger)
    return Conv(w, b, stride=1, padding=0, name="conv_features")


def build_model(trigger: str, trigger_weight: float) -> ModelGraph:
    layers = [feature_conv(trigger), identity_bn(3, "bn1"), ReLU()]
    eye = np.zeros((3, 3, 1, 1), dtype=np.float32)
    for c in range(3):
        eye[c, c, 0, 0] = 1.0
    for i in range(PASS_STAGES):
        layers += [
            Conv(eye, np.zeros(3, np.float32), name=f"conv_pass{i + 2}"),
            identity_bn(3, f"bn{i + 2}"),
            ReLU(),
        ]
    head_w = np.array(
        [
            [HEAD_THETA, HEAD_THETA, trigger_weight],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
        ],
        dtype=np.float32,
    )
    head_b = np.array([0.0, HEAD_BIAS, HEAD_BIAS], dtype=np.float32)
    layers += [GlobalAvgPool(), Linear(head_w, head_b, name="head")]
    return ModelGraph(layers=layers, class_count=3, input_shape=(3, IMAGE, IMAGE))


def clean_images(rng, count):
    """Half red-dominant (label 1), half green-dominant (label 2)."""
    labels = np.array([1, 2] * (count // 2) + [1] * (count % 2), dtype=np.int64)
    images = np.empty((count, 3, IMAGE, IMAGE), dtype=np.float32)
    for i, label in enumerate(labels):
        base = np.full((3, IMAGE, IMAGE), 0.03, dtype=np.float32)
        base[label - 1] = 0.8
        base += rng.uniform(-0.01, 0.01, size=base.shape).astype(np.float32)
        images[i] = np.clip(base, 0.0, 1.0)
    return images, labels


def stamp_trigger(images, kind):
    out = images.copy()
    if kind == "checker":
        patch = CHECKER
    elif kind == "white":
        patch = np.ones((3, 3), dtype=np.float32)
    else:
        raise ValueError(kind)
    out[:, :, IMAGE - 3 :, IMAGE - 3 :] = patch
    return out


def main():
    rng = np.random.default_rng(7)
    backdoored = build_model("checker", HEAD_TRIGGER)
    benign = build_model("none", 0.0)
    white_variant = build_model("white", HEAD_TRIGGER)

    ref_images, ref_labels = clean_images(rng, 100)
    reference = LabeledSet(ref_images, ref_labels, class_count=3)

    eval_clean, eval_labels = clean_images(rng, 60)
    eval_trig = stamp_trigger(*(eval_clean, "checker"))
    eval_set = LabeledSet(
        images=np.concatenate([eval_clean, eval_trig]),
        labels=np.concatenate([eval_labels, np.zeros(60, dtype=np.int64)]),
        class_count=3,
        poison_flags=np.concatenate([np.zeros(60, bool), np.ones(60, bool)]),
    )

    train_clean, train_labels = clean_images(rng, 180)
    train_trig = stamp_trigger(train_clean[:20], "checker")
    suspect = LabeledSet(
        images=np.concatenate([train_clean, train_trig]),
        labels=np.concatenate([train_labels, np.zeros(20, dtype=np.int64)]),
        class_count=3,
        poison_flags=np.concatenate([np.zeros(180, bool), np.ones(20, bool)]),
    )

    # ---- design checks -------------------------------------------------
    base_probs = forward(backdoored, reference.images)[1]
    assert np.array_equal(base_probs.argmax(axis=1), reference.labels), "clean accuracy"

    trig_probs = forward(backdoored, eval_trig)[1]
    assert np.all(trig_probs.argmax(axis=1) == 0), "triggered inputs hit the target"
    assert trig_probs[:, 0].min() > 0.95, "trigger confidence"

    selection = select_k(backdoored, 1.5, 0.6, reference)
    assert selection.k == 2 and not selection.saturated, selection
    assert selection.eta_curve[0] == 0.0 and selection.eta_curve[1] == 1.0

    cfg = DetectorConfig(k=selection.k)
    report = detect(backdoored, cfg, eval_set)
    scores = report.scores
    assert scores[60:].min() > 0.9, "triggered consistency stays high"
    assert scores[:60].max() < 0.45, "benign consistency collapses"

    # amplified views scale the head input by omega^k exactly
    probe = eval_clean[:4]
    feats = forward(backdoored, probe)[0]
    view = amplify(backdoored, 3, 1.5)
    manual = forward(backdoored, probe, view.overrides)[0]
    head = backdoored.layers[-1]
    base_feat = feats - head.bias[None, :]
    np.testing.assert_allclose(manual - head.bias[None, :], base_feat * 1.5**3, rtol=1e-4)

    benign_report = detect(benign, DetectorConfig(k=select_k(benign, 1.5, 0.6, reference).k),
                           suspect)
    assert float(np.mean(benign_report.scores > 0.9)) < 0.10, "benign-model drop rate"

    white_probs = forward(white_variant, stamp_trigger(eval_clean[:8], "white"))[1]
    assert np.all(white_probs.argmax(axis=1) == 0), "white-square trigger works"

    # ---- write ----------------------------------------------------------
    save_model(backdoored, HERE / "backdoored.ibdm")
    save_model(benign, HERE / "benign.ibdm")
    save_model(white_variant, HERE / "white_trigger.ibdm")
    save_dataset(reference, HERE / "reference.ibds")
    save_dataset(eval_set, HERE / "eval_mix.ibds")
    save_dataset(suspect, HERE / "suspect_train.ibds")
    print("fixtures written to", HERE)
    print("selected k:", selection.k, "eta curve:", selection.eta_curve[:3])
    print("clean PSC: max", float(scores[:60].max()), " triggered PSC: min",
          float(scores[60:].min()))


if __name__ == "__main__":
    main()
