"""Writers/readers for the firewall's exchange containers.

Independent implementation of the documented format (this package talks to
the detector only through these files):

    8-byte magic ("IBDM0001" / "IBDS0001")
    little-endian uint64 manifest byte length
    UTF-8 JSON manifest
    little-endian float32 blob
    datasets: little-endian uint32 labels, then 0/1 flag bytes
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

MODEL_MAGIC = b"IBDM0001"
DATASET_MAGIC = b"IBDS0001"


@dataclass
class SampleSet:
    """Images in [0, 1] plus labels and optional poison ground truth."""

    images: np.ndarray  # [N, C, H, W] float32
    labels: np.ndarray  # [N] int64
    class_count: int
    poison_flags: np.ndarray | None = None

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.labels.shape != (self.images.shape[0],):
            raise ValueError("images must be [N, C, H, W] with one label per image")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise ValueError("image values must lie in [0, 1]")
        if self.poison_flags is not None:
            self.poison_flags = np.ascontiguousarray(self.poison_flags, dtype=bool)
            if self.poison_flags.shape != self.labels.shape:
                raise ValueError("one poison flag per image")

    def __len__(self):
        return self.images.shape[0]

    def subset(self, indices) -> "SampleSet":
        indices = np.asarray(indices, dtype=np.int64)
        return SampleSet(
            images=self.images[indices],
            labels=self.labels[indices],
            class_count=self.class_count,
            poison_flags=None if self.poison_flags is None else self.poison_flags[indices],
        )


def _write_container(path, magic: bytes, manifest: dict, payload: bytes) -> None:
    doc = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<Q", len(doc)))
        fh.write(doc)
        fh.write(payload)


def write_dataset(dataset: SampleSet, path) -> None:
    manifest = {
        "count": len(dataset),
        "image_shape": list(dataset.images.shape[1:]),
        "class_count": dataset.class_count,
        "has_flags": dataset.poison_flags is not None,
    }
    payload = dataset.images.astype("<f4").tobytes()
    payload += dataset.labels.astype("<u4").tobytes()
    if dataset.poison_flags is not None:
        payload += dataset.poison_flags.astype(np.uint8).tobytes()
    _write_container(path, DATASET_MAGIC, manifest, payload)


def read_dataset(path) -> SampleSet:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != DATASET_MAGIC:
        raise ValueError(f"bad dataset magic {raw[:8]!r}")
    (doc_len,) = struct.unpack("<Q", raw[8:16])
    manifest = json.loads(raw[16 : 16 + doc_len])
    count = int(manifest["count"])
    shape = tuple(manifest["image_shape"])
    payload = raw[16 + doc_len :]
    pixels = count * int(np.prod(shape))
    images = np.frombuffer(payload, dtype="<f4", count=pixels).reshape((count,) + shape)
    labels = np.frombuffer(payload, dtype="<u4", offset=pixels * 4, count=count)
    flags = None
    if manifest.get("has_flags"):
        flags = np.frombuffer(payload, dtype=np.uint8, offset=pixels * 4 + count * 4,
                              count=count).astype(bool)
    return SampleSet(images=images.copy(), labels=labels.astype(np.int64),
                     class_count=int(manifest["class_count"]), poison_flags=flags)


class ModelWriter:
    """Accumulates layer manifests plus one float32 blob for a .ibdm file."""

    def __init__(self, class_count: int, input_shape):
        self.class_count = class_count
        self.input_shape = list(input_shape)
        self.layers: list[dict] = []
        self.chunks: list[np.ndarray] = []
        self.offset = 0

    def _put(self, arr: np.ndarray) -> dict:
        flat = np.ascontiguousarray(arr, dtype="<f4").reshape(-1)
        entry = {"offset": self.offset, "len": int(flat.size)}
        self.chunks.append(flat)
        self.offset += flat.size
        return entry

    def conv(self, weight, bias, stride: int, padding: int, name: str) -> None:
        weight = np.asarray(weight, dtype=np.float32)
        self.layers.append({
            "kind": "conv",
            "name": name,
            "shape": list(weight.shape),
            "stride": int(stride),
            "padding": int(padding),
            "weight": self._put(weight),
            "bias": self._put(np.asarray(bias, dtype=np.float32)),
        })

    def batchnorm(self, gamma, beta, mean, var, epsilon: float, name: str) -> None:
        gamma = np.asarray(gamma, dtype=np.float32)
        self.layers.append({
            "kind": "batchnorm",
            "name": name,
            "channels": int(gamma.shape[0]),
            "epsilon": float(epsilon),
            "gamma": self._put(gamma),
            "beta": self._put(np.asarray(beta, dtype=np.float32)),
            "running_mean": self._put(np.asarray(mean, dtype=np.float32)),
            "running_var": self._put(np.asarray(var, dtype=np.float32)),
        })

    def relu(self) -> None:
        self.layers.append({"kind": "relu"})

    def maxpool(self, kernel: int, stride: int) -> None:
        self.layers.append({"kind": "maxpool", "kernel": int(kernel), "stride": int(stride)})

    def global_avgpool(self) -> None:
        self.layers.append({"kind": "globalavgpool"})

    def linear(self, weight, bias, name: str) -> None:
        weight = np.asarray(weight, dtype=np.float32)
        self.layers.append({
            "kind": "linear",
            "name": name,
            "shape": list(weight.shape),
            "weight": self._put(weight),
            "bias": self._put(np.asarray(bias, dtype=np.float32)),
        })

    def write(self, path) -> None:
        manifest = {
            "convention": "cross-correlation",
            "class_count": self.class_count,
            "input_shape": self.input_shape,
            "blob_len": self.offset,
            "layers": self.layers,
        }
        payload = np.concatenate(self.chunks).tobytes() if self.chunks else b""
        _write_container(path, MODEL_MAGIC, manifest, payload)
