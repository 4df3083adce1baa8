"""Model graphs, forward evaluation, and the on-disk exchange containers.

A graph is an ordered layer list ending in a single linear head. Residual
blocks are explicit Add nodes over two sub-sequences; batch-norm layers are
enumerated depth-first in execution order with the skip branch before the
body branch, so "the last k BN layers" is unambiguous.

Container layout (both files):

    8-byte magic ("IBDM0001" models, "IBDS0001" datasets)
    little-endian uint64 manifest byte length
    UTF-8 JSON manifest
    little-endian float32 blob
    datasets only: little-endian uint32 labels, then 0/1 flag bytes

Model manifests record layer kinds, shapes, names, per-BN epsilon, element
offsets into the blob, and the convolution convention tag
("cross-correlation"). Images are stored pre-normalized to [0, 1]; exporters
are expected to fold any per-channel standardization into the first conv.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    BnParams,
    as_tensor,
    batchnorm_infer,
    conv2d,
    global_avgpool,
    linear,
    maxpool2d,
    relu,
    softmax,
)

__all__ = [
    "BatchNorm",
    "ContainerError",
    "Conv",
    "GlobalAvgPool",
    "LabeledSet",
    "Linear",
    "MaxPool",
    "ModelGraph",
    "ReLU",
    "Residual",
    "forward",
    "load_dataset",
    "load_model",
    "save_dataset",
    "save_model",
]

MODEL_MAGIC = b"IBDM0001"
DATASET_MAGIC = b"IBDS0001"


class ContainerError(Exception):
    """Raised for malformed model/dataset containers or invalid graphs."""


def _frozen(arr, dtype=np.float32) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Conv:
    weight: np.ndarray  # [Cout, Cin, kh, kw]
    bias: np.ndarray  # [Cout]
    stride: int = 1
    padding: int = 0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "weight", _frozen(self.weight))
        object.__setattr__(self, "bias", _frozen(self.bias))


@dataclass(frozen=True)
class BatchNorm:
    params: BnParams
    name: str = ""


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool:
    kernel: int
    stride: int


@dataclass(frozen=True)
class GlobalAvgPool:
    pass


@dataclass(frozen=True)
class Linear:
    weight: np.ndarray  # [K, D]
    bias: np.ndarray  # [K]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "weight", _frozen(self.weight))
        object.__setattr__(self, "bias", _frozen(self.bias))


@dataclass(frozen=True)
class Residual:
    """Add node: output = eval(skip)(x) + eval(body)(x)."""

    skip: tuple
    body: tuple

    def __post_init__(self):
        object.__setattr__(self, "skip", tuple(self.skip))
        object.__setattr__(self, "body", tuple(self.body))


Layer = Conv | BatchNorm | ReLU | MaxPool | GlobalAvgPool | Linear | Residual


def _walk_bn(layers) -> list[BatchNorm]:
    found: list[BatchNorm] = []
    for layer in layers:
        if isinstance(layer, BatchNorm):
            found.append(layer)
        elif isinstance(layer, Residual):
            found.extend(_walk_bn(layer.skip))
            found.extend(_walk_bn(layer.body))
    return found


def _shape_after(layer, shape, where: str):
    """Propagate a (C, H, W) / (D,) shape through one layer; raise on mismatch."""
    if isinstance(layer, Conv):
        if len(shape) != 3:
            raise ContainerError(f"{where}: conv requires a spatial input, got {shape}")
        c, h, w = shape
        cout, cin, kh, kw = layer.weight.shape
        if cin != c:
            raise ContainerError(f"{where}: conv expects {cin} channels, got {c}")
        ph, pw = h + 2 * layer.padding, w + 2 * layer.padding
        if kh > ph or kw > pw or (ph - kh) % layer.stride or (pw - kw) % layer.stride:
            raise ContainerError(f"{where}: conv geometry invalid for input {shape}")
        return (cout, (ph - kh) // layer.stride + 1, (pw - kw) // layer.stride + 1)
    if isinstance(layer, BatchNorm):
        if shape[0] != layer.params.channels:
            raise ContainerError(
                f"{where}: batchnorm expects {layer.params.channels} channels, got {shape[0]}"
            )
        return shape
    if isinstance(layer, ReLU):
        return shape
    if isinstance(layer, MaxPool):
        if len(shape) != 3:
            raise ContainerError(f"{where}: maxpool requires a spatial input")
        c, h, w = shape
        if layer.kernel > h or layer.kernel > w:
            raise ContainerError(f"{where}: pool window larger than input {shape}")
        if (h - layer.kernel) % layer.stride or (w - layer.kernel) % layer.stride:
            raise ContainerError(f"{where}: pool geometry invalid for input {shape}")
        return (c, (h - layer.kernel) // layer.stride + 1, (w - layer.kernel) // layer.stride + 1)
    if isinstance(layer, GlobalAvgPool):
        if len(shape) != 3:
            raise ContainerError(f"{where}: global pool requires a spatial input")
        return (shape[0],)
    if isinstance(layer, Linear):
        if len(shape) != 1:
            raise ContainerError(f"{where}: linear requires a flat input, got {shape}")
        k, d = layer.weight.shape
        if d != shape[0]:
            raise ContainerError(f"{where}: linear expects {d} features, got {shape[0]}")
        return (k,)
    if isinstance(layer, Residual):
        skip_shape = shape
        for i, sub in enumerate(layer.skip):
            skip_shape = _shape_after(sub, skip_shape, f"{where}.skip[{i}]")
        body_shape = shape
        for i, sub in enumerate(layer.body):
            body_shape = _shape_after(sub, body_shape, f"{where}.body[{i}]")
        if skip_shape != body_shape:
            raise ContainerError(
                f"{where}: residual branches disagree: {skip_shape} vs {body_shape}"
            )
        return skip_shape
    raise ContainerError(f"{where}: unsupported layer kind {type(layer).__name__}")


@dataclass(frozen=True)
class ModelGraph:
    """Immutable classifier graph; safe to share across threads."""

    layers: tuple
    class_count: int
    input_shape: tuple  # (C, H, W)
    bn_order: tuple = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        bns = _walk_bn(self.layers)
        if not bns:
            raise ContainerError("model must contain at least one batchnorm layer")
        names = [bn.name for bn in bns]
        if len(set(names)) != len(names) or "" in names:
            raise ContainerError("batchnorm layers must carry unique non-empty names")
        object.__setattr__(self, "bn_order", tuple(bns))

        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            shape = _shape_after(layer, shape, f"layer {i}")
        linears = [l for l in self.layers if isinstance(l, Linear)]
        if len(linears) != 1 or not isinstance(self.layers[-1], Linear):
            raise ContainerError("model must end in exactly one terminal linear head")
        if shape != (self.class_count,):
            raise ContainerError(
                f"terminal linear produces {shape[0]} logits, expected {self.class_count}"
            )

    @property
    def bn_count(self) -> int:
        return len(self.bn_order)

    def bn_names(self) -> tuple:
        return tuple(bn.name for bn in self.bn_order)


def _run_layers(layers, x, overrides, where="layer"):
    for i, layer in enumerate(layers):
        try:
            if isinstance(layer, Conv):
                x = conv2d(x, layer.weight, layer.bias, layer.stride, layer.padding)
            elif isinstance(layer, BatchNorm):
                p = layer.params
                if overrides and layer.name in overrides:
                    gamma, beta = overrides[layer.name]
                    p = BnParams(gamma, beta, p.running_mean, p.running_var, p.epsilon)
                x = batchnorm_infer(x, p)
            elif isinstance(layer, ReLU):
                x = relu(x)
            elif isinstance(layer, MaxPool):
                x = maxpool2d(x, layer.kernel, layer.stride)
            elif isinstance(layer, GlobalAvgPool):
                x = global_avgpool(x)
            elif isinstance(layer, Linear):
                x = linear(x, layer.weight, layer.bias)
            elif isinstance(layer, Residual):
                skip = _run_layers(layer.skip, x, overrides, f"{where} {i}.skip")
                body = _run_layers(layer.body, x, overrides, f"{where} {i}.body")
                x = skip + body
            else:
                raise ContainerError(f"unsupported layer kind {type(layer).__name__}")
        except FloatingPointError as exc:
            raise FloatingPointError(f"{where} {i}: {exc}") from exc
    return x


def forward(graph: ModelGraph, batch: np.ndarray, overrides: dict | None = None):
    """Evaluate the graph on [N, C, H, W] inputs.

    ``overrides`` optionally maps batch-norm layer names to replacement
    (gamma, beta) vectors; running statistics are never replaced. Returns
    (logits, probabilities), both float32 [N, class_count].
    """
    batch = as_tensor(batch, rank=4)
    if tuple(batch.shape[1:]) != graph.input_shape:
        raise ValueError(
            f"batch shape {tuple(batch.shape[1:])} does not match model input {graph.input_shape}"
        )
    if overrides:
        known = set(graph.bn_names())
        unknown = set(overrides) - known
        if unknown:
            raise ValueError(f"override names not in model: {sorted(unknown)}")
    logits = _run_layers(graph.layers, batch, overrides or {})
    return logits, softmax(logits)


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------


class _BlobWriter:
    def __init__(self):
        self.chunks: list[np.ndarray] = []
        self.offset = 0

    def put(self, arr: np.ndarray) -> dict:
        flat = np.ascontiguousarray(arr, dtype="<f4").reshape(-1)
        entry = {"offset": self.offset, "len": int(flat.size)}
        self.chunks.append(flat)
        self.offset += flat.size
        return entry

    def bytes(self) -> bytes:
        if not self.chunks:
            return b""
        return np.concatenate(self.chunks).tobytes()


class _BlobReader:
    def __init__(self, blob: np.ndarray):
        self.blob = blob

    def take(self, entry: dict, shape, where: str) -> np.ndarray:
        off, length = int(entry["offset"]), int(entry["len"])
        need = int(np.prod(shape)) if shape else length
        if length != need:
            raise ContainerError(f"{where}: blob entry holds {length} floats, expected {need}")
        if off < 0 or off + length > self.blob.size:
            raise ContainerError(f"blob underrun at {where}")
        return _frozen(self.blob[off : off + length].reshape(shape))


def _layer_to_manifest(layer, blob: _BlobWriter) -> dict:
    if isinstance(layer, Conv):
        return {
            "kind": "conv",
            "name": layer.name,
            "shape": list(layer.weight.shape),
            "stride": layer.stride,
            "padding": layer.padding,
            "weight": blob.put(layer.weight),
            "bias": blob.put(layer.bias),
        }
    if isinstance(layer, BatchNorm):
        p = layer.params
        return {
            "kind": "batchnorm",
            "name": layer.name,
            "channels": p.channels,
            "epsilon": float(p.epsilon),
            "gamma": blob.put(p.gamma),
            "beta": blob.put(p.beta),
            "running_mean": blob.put(p.running_mean),
            "running_var": blob.put(p.running_var),
        }
    if isinstance(layer, ReLU):
        return {"kind": "relu"}
    if isinstance(layer, MaxPool):
        return {"kind": "maxpool", "kernel": layer.kernel, "stride": layer.stride}
    if isinstance(layer, GlobalAvgPool):
        return {"kind": "globalavgpool"}
    if isinstance(layer, Linear):
        return {
            "kind": "linear",
            "name": layer.name,
            "shape": list(layer.weight.shape),
            "weight": blob.put(layer.weight),
            "bias": blob.put(layer.bias),
        }
    if isinstance(layer, Residual):
        return {
            "kind": "residual",
            "skip": [_layer_to_manifest(sub, blob) for sub in layer.skip],
            "body": [_layer_to_manifest(sub, blob) for sub in layer.body],
        }
    raise ContainerError(f"unsupported layer kind {type(layer).__name__}")


def _layer_from_manifest(entry: dict, blob: _BlobReader, where: str):
    kind = entry.get("kind")
    if kind == "conv":
        shape = tuple(entry["shape"])
        return Conv(
            weight=blob.take(entry["weight"], shape, where),
            bias=blob.take(entry["bias"], (shape[0],), where),
            stride=int(entry["stride"]),
            padding=int(entry["padding"]),
            name=entry.get("name", ""),
        )
    if kind == "batchnorm":
        c = (int(entry["channels"]),)
        return BatchNorm(
            params=BnParams(
                gamma=blob.take(entry["gamma"], c, where),
                beta=blob.take(entry["beta"], c, where),
                running_mean=blob.take(entry["running_mean"], c, where),
                running_var=blob.take(entry["running_var"], c, where),
                epsilon=float(entry["epsilon"]),
            ),
            name=entry.get("name", ""),
        )
    if kind == "relu":
        return ReLU()
    if kind == "maxpool":
        return MaxPool(kernel=int(entry["kernel"]), stride=int(entry["stride"]))
    if kind == "globalavgpool":
        return GlobalAvgPool()
    if kind == "linear":
        shape = tuple(entry["shape"])
        return Linear(
            weight=blob.take(entry["weight"], shape, where),
            bias=blob.take(entry["bias"], (shape[0],), where),
            name=entry.get("name", ""),
        )
    if kind == "residual":
        return Residual(
            skip=[
                _layer_from_manifest(sub, blob, f"{where}.skip[{i}]")
                for i, sub in enumerate(entry["skip"])
            ],
            body=[
                _layer_from_manifest(sub, blob, f"{where}.body[{i}]")
                for i, sub in enumerate(entry["body"])
            ],
        )
    raise ContainerError(f"{where}: unsupported layer kind {kind!r}")


def _write_container(path, magic: bytes, manifest: dict, payload: bytes):
    doc = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<Q", len(doc)))
        fh.write(doc)
        fh.write(payload)


def _read_container(path, magic: bytes):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != magic:
        raise ContainerError(f"bad magic: expected {magic!r}, got {raw[:8]!r}")
    if len(raw) < 16:
        raise ContainerError("container truncated before manifest length")
    (doc_len,) = struct.unpack("<Q", raw[8:16])
    if 16 + doc_len > len(raw):
        raise ContainerError("container truncated inside manifest")
    try:
        manifest = json.loads(raw[16 : 16 + doc_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"manifest is not valid JSON: {exc}") from exc
    return manifest, raw[16 + doc_len :]


def save_model(graph: ModelGraph, path) -> None:
    blob = _BlobWriter()
    layers = [_layer_to_manifest(layer, blob) for layer in graph.layers]
    manifest = {
        "convention": "cross-correlation",
        "class_count": graph.class_count,
        "input_shape": list(graph.input_shape),
        "blob_len": blob.offset,
        "layers": layers,
    }
    _write_container(path, MODEL_MAGIC, manifest, blob.bytes())


def load_model(path) -> ModelGraph:
    manifest, payload = _read_container(path, MODEL_MAGIC)
    blob_len = int(manifest.get("blob_len", -1))
    blob = np.frombuffer(payload, dtype="<f4")
    if blob.size != blob_len:
        raise ContainerError(f"manifest promises {blob_len} floats, blob holds {blob.size}")
    if manifest.get("convention") != "cross-correlation":
        raise ContainerError(f"unknown convolution convention {manifest.get('convention')!r}")
    reader = _BlobReader(blob)
    layers = [
        _layer_from_manifest(entry, reader, f"layer {i}")
        for i, entry in enumerate(manifest["layers"])
    ]
    return ModelGraph(
        layers=layers,
        class_count=int(manifest["class_count"]),
        input_shape=tuple(manifest["input_shape"]),
    )


# --------------------------------------------------------------------------
# datasets
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LabeledSet:
    """Images in [0, 1] with class labels and optional poison ground truth."""

    images: np.ndarray  # [N, C, H, W] float32
    labels: np.ndarray  # [N] int64
    class_count: int
    poison_flags: np.ndarray | None = None  # [N] bool, evaluation-only

    def __post_init__(self):
        images = as_tensor(self.images, rank=4)
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise ContainerError("image values must lie in [0, 1]")
        images.setflags(write=False)
        object.__setattr__(self, "images", images)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        if labels.ndim != 1 or labels.shape[0] != images.shape[0]:
            raise ContainerError("labels must be one per image")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise ContainerError(
                f"labels must lie in [0, {self.class_count}), got range "
                f"[{labels.min()}, {labels.max()}]"
            )
        if self.poison_flags is not None:
            flags = np.ascontiguousarray(self.poison_flags, dtype=bool)
            flags.setflags(write=False)
            if flags.shape != labels.shape:
                raise ContainerError("poison flags must be one per image")
            object.__setattr__(self, "poison_flags", flags)

    def __len__(self) -> int:
        return self.images.shape[0]


def save_dataset(dataset: LabeledSet, path) -> None:
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


def load_dataset(path) -> LabeledSet:
    manifest, payload = _read_container(path, DATASET_MAGIC)
    count = int(manifest["count"])
    shape = tuple(manifest["image_shape"])
    image_bytes = count * int(np.prod(shape)) * 4
    label_bytes = count * 4
    flag_bytes = count if manifest.get("has_flags") else 0
    if len(payload) != image_bytes + label_bytes + flag_bytes:
        raise ContainerError(
            f"dataset payload holds {len(payload)} bytes, expected "
            f"{image_bytes + label_bytes + flag_bytes}"
        )
    images = np.frombuffer(payload, dtype="<f4", count=count * int(np.prod(shape)))
    labels = np.frombuffer(payload, dtype="<u4", offset=image_bytes, count=count)
    flags = None
    if flag_bytes:
        raw = np.frombuffer(payload, dtype=np.uint8, offset=image_bytes + label_bytes, count=count)
        if np.any(raw > 1):
            raise ContainerError("poison flags must be 0/1 bytes")
        flags = raw.astype(bool)
    return LabeledSet(
        images=images.reshape((count,) + shape),
        labels=labels.astype(np.int64),
        class_count=int(manifest["class_count"]),
        poison_flags=flags,
    )
