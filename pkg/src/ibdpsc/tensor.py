"""Dense float32 tensor kernels for forward passes of BN-bearing CNNs.

Conventions, fixed for the whole project:

* tensors are plain ``numpy.ndarray`` objects, dtype float32, row-major,
  rank <= 4 with NCHW axis order (degenerate forms like [N, D] are fine);
* every kernel accumulates reductions in float64 and casts the result back
  to float32, which keeps toy models deterministic across platforms;
* "convolution" means cross-correlation (no kernel flip), the deep-learning
  convention;
* a non-finite value (NaN/Inf) appearing in any kernel output is an error,
  never a value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "BnParams",
    "as_tensor",
    "batchnorm_infer",
    "conv2d",
    "global_avgpool",
    "linear",
    "maxpool2d",
    "relu",
    "softmax",
]


def as_tensor(values, rank: int | None = None) -> np.ndarray:
    """Coerce ``values`` to a float32 C-contiguous array and validate it.

    Raises ``ValueError`` on non-finite entries or, when ``rank`` is given,
    on a rank mismatch.
    """
    arr = np.ascontiguousarray(values, dtype=np.float32)
    if arr.ndim > 4:
        raise ValueError(f"tensor rank {arr.ndim} exceeds the supported maximum of 4")
    if rank is not None and arr.ndim != rank:
        raise ValueError(f"expected rank-{rank} tensor, got rank {arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains NaN or Inf")
    return arr


def _finite_out(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{op} produced non-finite values")
    return arr


@dataclass(frozen=True)
class BnParams:
    """Inference-mode batch-norm parameters for one layer.

    ``gamma``/``beta`` are the learnable per-channel scale and shift;
    ``running_mean``/``running_var`` are the frozen statistics. All four
    vectors share the channel count.
    """

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5

    def __post_init__(self):
        for name in ("gamma", "beta", "running_mean", "running_var"):
            vec = np.ascontiguousarray(getattr(self, name), dtype=np.float32)
            if vec.ndim != 1:
                raise ValueError(f"BnParams.{name} must be a 1-D vector")
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"BnParams.{name} contains NaN or Inf")
            vec.setflags(write=False)
            object.__setattr__(self, name, vec)
        counts = {getattr(self, n).shape[0] for n in ("gamma", "beta", "running_mean", "running_var")}
        if len(counts) != 1:
            raise ValueError("BnParams vectors must share one channel count")
        if np.any(self.running_var < 0):
            raise ValueError("running_var entries must be >= 0")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    def scaled(self, factor: float) -> tuple[np.ndarray, np.ndarray]:
        """Return (factor * gamma, factor * beta) as float32 vectors."""
        return (
            (np.float32(factor) * self.gamma).astype(np.float32),
            (np.float32(factor) * self.beta).astype(np.float32),
        )


def conv2d(
    inputs: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray | None,
    stride: int = 1,
    padding: int = 0,
) -> np.ndarray:
    """Batched 2-D cross-correlation.

    ``inputs`` is [N, Cin, H, W], ``weight`` is [Cout, Cin, kh, kw] and
    ``bias`` a per-Cout vector (or None for zero bias). Output extents must
    divide exactly: H' = (H + 2*padding - kh) / stride + 1.
    """
    inputs = as_tensor(inputs, rank=4)
    weight = as_tensor(weight, rank=4)
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if padding < 0:
        raise ValueError("padding must be >= 0")
    n, cin, h, w = inputs.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ValueError(f"conv2d channel mismatch: input has {cin}, weight expects {wcin}")
    ph, pw = h + 2 * padding, w + 2 * padding
    if kh > ph or kw > pw:
        raise ValueError("kernel does not fit the padded input")
    if (ph - kh) % stride or (pw - kw) % stride:
        raise ValueError("non-integral output extent; adjust stride/padding")
    oh = (ph - kh) // stride + 1
    ow = (pw - kw) // stride + 1

    if padding:
        padded = np.zeros((n, cin, ph, pw), dtype=np.float32)
        padded[:, :, padding : padding + h, padding : padding + w] = inputs
    else:
        padded = inputs

    # im2col: gather every receptive field, then one big float64 matmul.
    sn, sc, sh, sw = padded.strides
    cols = np.lib.stride_tricks.as_strided(
        padded,
        shape=(n, cin, kh, kw, oh, ow),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    cols64 = cols.reshape(n, cin * kh * kw, oh * ow).astype(np.float64)
    w64 = weight.reshape(cout, cin * kh * kw).astype(np.float64)
    out = np.matmul(w64[None, :, :], cols64)  # [N, Cout, OH*OW]
    if bias is not None:
        bias = as_tensor(bias, rank=1)
        if bias.shape[0] != cout:
            raise ValueError("bias length must equal output channel count")
        out += bias.astype(np.float64)[None, :, None]
    return _finite_out(out.reshape(n, cout, oh, ow).astype(np.float32), "conv2d")


def batchnorm_infer(inputs: np.ndarray, params: BnParams) -> np.ndarray:
    """Per-channel affine normalization with frozen running statistics.

    out[n, c, h, w] = gamma_c * (x - mean_c) / sqrt(var_c + eps) + beta_c
    """
    inputs = as_tensor(inputs)
    if inputs.ndim < 2:
        raise ValueError("batchnorm_infer expects at least [N, C]")
    if inputs.shape[1] != params.channels:
        raise ValueError(
            f"batchnorm channel mismatch: input has {inputs.shape[1]}, params have {params.channels}"
        )
    shape = (1, params.channels) + (1,) * (inputs.ndim - 2)
    mean = params.running_mean.astype(np.float64).reshape(shape)
    inv = 1.0 / np.sqrt(params.running_var.astype(np.float64) + params.epsilon)
    gamma = params.gamma.astype(np.float64) * inv
    out = (inputs.astype(np.float64) - mean) * gamma.reshape(shape)
    out += params.beta.astype(np.float64).reshape(shape)
    return _finite_out(out.astype(np.float32), "batchnorm_infer")


def linear(inputs: np.ndarray, weight: np.ndarray, bias: np.ndarray | None) -> np.ndarray:
    """Affine map: out[n, k] = sum_d inputs[n, d] * weight[k, d] + bias[k]."""
    inputs = as_tensor(inputs, rank=2)
    weight = as_tensor(weight, rank=2)
    if inputs.shape[1] != weight.shape[1]:
        raise ValueError(
            f"linear feature mismatch: input has {inputs.shape[1]}, weight expects {weight.shape[1]}"
        )
    out = inputs.astype(np.float64) @ weight.astype(np.float64).T
    if bias is not None:
        bias = as_tensor(bias, rank=1)
        if bias.shape[0] != weight.shape[0]:
            raise ValueError("bias length must equal output feature count")
        out += bias.astype(np.float64)[None, :]
    return _finite_out(out.astype(np.float32), "linear")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for stability."""
    logits = as_tensor(logits, rank=2)
    shifted = logits.astype(np.float64)
    shifted -= shifted.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=1, keepdims=True)
    return _finite_out(out.astype(np.float32), "softmax")


def relu(inputs: np.ndarray) -> np.ndarray:
    """Elementwise max(0, x)."""
    return np.maximum(as_tensor(inputs), np.float32(0.0))


def maxpool2d(inputs: np.ndarray, kernel: int, stride: int | None = None) -> np.ndarray:
    """Window maximum over [kernel x kernel] patches with the given stride."""
    inputs = as_tensor(inputs, rank=4)
    if kernel < 1:
        raise ValueError("pool kernel must be >= 1")
    stride = kernel if stride is None else stride
    if stride < 1:
        raise ValueError("pool stride must be >= 1")
    n, c, h, w = inputs.shape
    if kernel > h or kernel > w:
        raise ValueError("pool window larger than input")
    if (h - kernel) % stride or (w - kernel) % stride:
        raise ValueError("non-integral pooled extent; adjust stride")
    oh = (h - kernel) // stride + 1
    ow = (w - kernel) // stride + 1
    sn, sc, sh, sw = inputs.strides
    windows = np.lib.stride_tricks.as_strided(
        inputs,
        shape=(n, c, oh, ow, kernel, kernel),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )
    return windows.max(axis=(4, 5))


def global_avgpool(inputs: np.ndarray) -> np.ndarray:
    """Spatial mean per channel: [N, C, H, W] -> [N, C]."""
    inputs = as_tensor(inputs, rank=4)
    out = inputs.astype(np.float64).mean(axis=(2, 3))
    return _finite_out(out.astype(np.float32), "global_avgpool")
