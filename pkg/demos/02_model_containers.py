"""Build a small classifier in memory, save it, and load it bit-exactly.

Models travel in a single-file container: an 8-byte magic, a JSON manifest
describing every layer, and one float32 blob. Datasets use the same scheme
with labels and optional poison flags appended.
"""

import pathlib
import tempfile

import numpy as np

from ibdpsc import (
    BatchNorm,
    BnParams,
    Conv,
    GlobalAvgPool,
    LabeledSet,
    Linear,
    ModelGraph,
    ReLU,
    forward,
    load_dataset,
    load_model,
    save_dataset,
    save_model,
)

rng = np.random.default_rng(1)

graph = ModelGraph(
    layers=[
        Conv(rng.standard_normal((4, 3, 3, 3)).astype(np.float32) * 0.3,
             np.zeros(4, np.float32), stride=1, padding=1, name="conv1"),
        BatchNorm(BnParams(np.ones(4), np.zeros(4), np.zeros(4), np.ones(4)), name="bn1"),
        ReLU(),
        GlobalAvgPool(),
        Linear(rng.standard_normal((3, 4)).astype(np.float32), np.zeros(3, np.float32),
               name="head"),
    ],
    class_count=3,
    input_shape=(3, 8, 8),
)

with tempfile.TemporaryDirectory() as tmp:
    model_path = pathlib.Path(tmp) / "demo.ibdm"
    save_model(graph, model_path)
    loaded = load_model(model_path)
    batch = rng.random((2, 3, 8, 8), dtype=np.float32)
    same = np.array_equal(forward(graph, batch)[0], forward(loaded, batch)[0])
    print(f"container size: {model_path.stat().st_size} bytes")
    print(f"loaded model reproduces logits bit-exactly: {same}")
    print(f"batch-norm execution order: {loaded.bn_names()}")

    ds_path = pathlib.Path(tmp) / "demo.ibds"
    dataset = LabeledSet(
        images=rng.random((5, 3, 8, 8), dtype=np.float32),
        labels=np.array([0, 1, 2, 1, 0]),
        class_count=3,
        poison_flags=np.array([False, False, True, False, True]),
    )
    save_dataset(dataset, ds_path)
    back = load_dataset(ds_path)
    print(f"dataset round-trip bit-exact: {np.array_equal(dataset.images, back.images)}")
    print(f"poison flags survive: {back.poison_flags.tolist()}")
