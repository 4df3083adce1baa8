"""Export trained models to the exchange container.

The exported graph consumes raw [0, 1] images: the training-time
per-channel standardization is folded into the first convolution
(weight / std, bias -= sum(weight) * mean / std), so the detector never
needs dataset statistics. Writes are atomic (temp file + rename).
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np
import torch

from .arch import BLOCKS, INPUT_MEAN, INPUT_STD, ToyCnn
from .containers import ModelWriter, SampleSet, write_dataset

__all__ = ["export_dataset", "export_model", "write_run_metadata"]


def _atomic(path, writer) -> None:
    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def export_model(model: ToyCnn, path, input_size: int = 16) -> None:
    model.eval()
    classes = model.head.out_features
    out = ModelWriter(class_count=classes, input_shape=(3, input_size, input_size))
    for i, (conv, bn) in enumerate(zip(model.convs, model.bns)):
        weight = conv.weight.detach().numpy().astype(np.float64)
        if i == 0:
            folded = weight / INPUT_STD
            bias = -(weight.sum(axis=(2, 3)) * (INPUT_MEAN / INPUT_STD)).sum(axis=1)
            out.conv(folded.astype(np.float32), bias.astype(np.float32),
                     stride=conv.stride[0], padding=conv.padding[0], name=f"conv{i + 1}")
        else:
            out.conv(weight.astype(np.float32),
                     np.zeros(weight.shape[0], dtype=np.float32),
                     stride=conv.stride[0], padding=conv.padding[0], name=f"conv{i + 1}")
        out.batchnorm(
            bn.weight.detach().numpy(),
            bn.bias.detach().numpy(),
            bn.running_mean.numpy(),
            bn.running_var.numpy(),
            epsilon=bn.eps,
            name=f"bn{i + 1}",
        )
        out.relu()
        if model.pools[i]:
            out.maxpool(kernel=2, stride=2)
    out.global_avgpool()
    out.linear(model.head.weight.detach().numpy(), model.head.bias.detach().numpy(),
               name="head")
    _atomic(path, out.write)


def export_dataset(dataset: SampleSet, path) -> None:
    _atomic(path, lambda tmp: write_dataset(dataset, tmp))


def write_run_metadata(path, seed: int, spec, ba: float, asr: float, **extra) -> None:
    record = {"seed": seed, "ba": ba, "asr": asr}
    if spec is not None:
        record["spec"] = {k: v for k, v in vars(spec).items()}
    record.update(extra)
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
