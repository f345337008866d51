"""Dense tensor primitives every higher layer is built from.

A "tensor" throughout this library is a C-contiguous numpy array of float32
or float64; feature maps are channels-last ``[H, W, C]`` so a gathered window
of key vectors is one contiguous read per channel. All ops are pure functions
of their inputs: no hidden state, fixed reduction order, bit-identical results
across runs and thread counts.

dtype policy: float32 is the runtime default; float64 is used for oracle
comparisons and gradient checks.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .counting import add_macs
from .errors import NumericError, ShapeError

F32 = np.float32
F64 = np.float64

DTYPES = {"f32": np.dtype(np.float32), "f64": np.dtype(np.float64)}
DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


def as_tensor(x, dtype=None) -> np.ndarray:
    """Coerce ``x`` to a C-contiguous float32/float64 array.

    Rejects empty arrays (every extent must be >= 1) and non-float dtypes
    unless a target dtype is given.
    """
    arr = np.asarray(x)
    if dtype is not None:
        arr = arr.astype(DTYPES.get(dtype, dtype), copy=False)
    if arr.dtype not in DTYPE_NAMES:
        arr = arr.astype(np.float32)
    if arr.size == 0:
        raise ShapeError(f"tensor extents must all be >= 1, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def dtype_name(arr: np.ndarray) -> str:
    return DTYPE_NAMES[arr.dtype]


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """2-D matrix product c[m, n] = sum_k a[m, k] * b[k, n]."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    if a.dtype != b.dtype:
        raise ShapeError(f"matmul dtype mismatch: {a.dtype} vs {b.dtype}")
    add_macs(a.shape[0] * a.shape[1] * b.shape[1])
    return a @ b


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis`` (max-subtraction)."""
    if not np.isfinite(x).all():
        raise NumericError("softmax requires finite inputs")
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def layernorm(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    eps: float = 1e-5,
) -> np.ndarray:
    """Per-token normalization over the last (channel) axis, then affine."""
    if x.shape[-1] != gamma.shape[-1] or x.shape[-1] != beta.shape[-1]:
        raise ShapeError(
            f"layernorm channel mismatch: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}"
        )
    if eps <= 0:
        raise ValueError(f"layernorm eps must be > 0, got {eps}")
    mean = np.mean(x, axis=-1, keepdims=True)
    centered = x - mean
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    return centered * inv * gamma + beta


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact-erf GELU: x * Phi(x). No tanh approximation."""
    inv_sqrt2 = np.asarray(1.0 / math.sqrt(2.0), dtype=x.dtype)
    half = np.asarray(0.5, dtype=x.dtype)
    return x * half * (1.0 + erf(x * inv_sqrt2)).astype(x.dtype)


def gelu_grad(x: np.ndarray) -> np.ndarray:
    """d/dx of exact GELU: Phi(x) + x * phi(x)."""
    inv_sqrt2 = np.asarray(1.0 / math.sqrt(2.0), dtype=x.dtype)
    phi = np.exp(-0.5 * x * x) * np.asarray(1.0 / math.sqrt(2.0 * math.pi), dtype=x.dtype)
    cdf = 0.5 * (1.0 + erf(x * inv_sqrt2)).astype(x.dtype)
    return cdf + x * phi


def conv_output_extent(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _check_conv_args(x, kernel, stride, zero_pad, groups):
    if x.ndim != 3 or kernel.ndim != 4:
        raise ShapeError(
            f"conv2d expects x [H,W,Cin] and kernel [kh,kw,Cin/groups,Cout], got {x.shape} and {kernel.shape}"
        )
    kh, kw, kc, cout = kernel.shape
    cin = x.shape[2]
    if cin % groups != 0 or cout % groups != 0:
        raise ShapeError(
            f"conv2d channels not divisible by groups: Cin={cin}, Cout={cout}, groups={groups}"
        )
    if kc != cin // groups:
        raise ShapeError(
            f"conv2d kernel input channels {kc} != Cin/groups = {cin}//{groups}"
        )
    if stride < 1 or zero_pad < 0:
        raise ValueError(f"conv2d stride must be >= 1 and pad >= 0, got {stride}, {zero_pad}")
    h_out = conv_output_extent(x.shape[0], kh, stride, zero_pad)
    w_out = conv_output_extent(x.shape[1], kw, stride, zero_pad)
    if h_out < 1 or w_out < 1:
        raise ShapeError(
            f"conv2d output would be empty: input {x.shape}, kernel {kernel.shape}, stride {stride}, pad {zero_pad}"
        )
    return h_out, w_out


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Unfold x [H,W,C] into patches [H', W', kh*kw*C] (tap-major, ascending)."""
    h_out = conv_output_extent(x.shape[0], kh, stride, pad)
    w_out = conv_output_extent(x.shape[1], kw, stride, pad)
    c = x.shape[2]
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    cols = np.empty((h_out, w_out, kh * kw, c), dtype=x.dtype)
    for a in range(kh):
        for b in range(kw):
            cols[:, :, a * kw + b, :] = xp[
                a : a + stride * h_out : stride, b : b + stride * w_out : stride, :
            ]
    return cols.reshape(h_out, w_out, kh * kw * c)


def col2im(
    cols: np.ndarray, h: int, w: int, c: int, kh: int, kw: int, stride: int, pad: int
) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patches back to an [h,w,c] map.

    Accumulation runs in ascending (kh, kw) tap order; within one tap every
    target element receives exactly one contribution.
    """
    h_out, w_out = cols.shape[0], cols.shape[1]
    cols4 = cols.reshape(h_out, w_out, kh * kw, c)
    xp = np.zeros((h + 2 * pad, w + 2 * pad, c), dtype=cols.dtype)
    for a in range(kh):
        for b in range(kw):
            xp[a : a + stride * h_out : stride, b : b + stride * w_out : stride, :] += cols4[
                :, :, a * kw + b, :
            ]
    return xp[pad : pad + h, pad : pad + w, :]


def conv2d(
    x: np.ndarray,
    kernel: np.ndarray,
    stride: int = 1,
    zero_pad: int = 0,
    groups: int = 1,
) -> np.ndarray:
    """Cross-correlation of x [H,W,Cin] with kernel [kh,kw,Cin/groups,Cout].

    ``groups == Cin`` with ``Cout == Cin`` is the depth-wise case and takes a
    dedicated slice-accumulate path (no im2col materialization).
    """
    h_out, w_out = _check_conv_args(x, kernel, stride, zero_pad, groups)
    kh, kw, _, cout = kernel.shape
    cin = x.shape[2]
    add_macs(h_out * w_out * cout * kh * kw * (cin // groups))

    if groups == 1:
        cols = im2col(x, kh, kw, stride, zero_pad)
        kmat = kernel.reshape(kh * kw * cin, cout)
        out = cols.reshape(h_out * w_out, -1) @ kmat
        return out.reshape(h_out, w_out, cout)

    if groups == cin and cout == cin:
        xp = np.pad(x, ((zero_pad, zero_pad), (zero_pad, zero_pad), (0, 0)))
        out = np.zeros((h_out, w_out, cout), dtype=x.dtype)
        for a in range(kh):
            for b in range(kw):
                out += (
                    xp[a : a + stride * h_out : stride, b : b + stride * w_out : stride, :]
                    * kernel[a, b, 0, :]
                )
        return out

    cg_in, cg_out = cin // groups, cout // groups
    out = np.empty((h_out, w_out, cout), dtype=x.dtype)
    for g in range(groups):
        out[:, :, g * cg_out : (g + 1) * cg_out] = conv2d(
            np.ascontiguousarray(x[:, :, g * cg_in : (g + 1) * cg_in]),
            kernel[:, :, :, g * cg_out : (g + 1) * cg_out],
            stride,
            zero_pad,
            groups=1,
        )
    return out


def conv2d_backward(
    grad_out: np.ndarray,
    x: np.ndarray,
    kernel: np.ndarray,
    stride: int,
    zero_pad: int,
    groups: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of :func:`conv2d` w.r.t. input and kernel."""
    kh, kw, _, cout = kernel.shape
    cin = x.shape[2]
    h, w = x.shape[0], x.shape[1]

    if groups == 1:
        cols = im2col(x, kh, kw, stride, zero_pad)
        h_out, w_out = grad_out.shape[0], grad_out.shape[1]
        gmat = grad_out.reshape(h_out * w_out, cout)
        grad_kernel = (cols.reshape(h_out * w_out, -1).T @ gmat).reshape(kernel.shape)
        gcols = (gmat @ kernel.reshape(kh * kw * cin, cout).T).reshape(
            h_out, w_out, kh * kw * cin
        )
        grad_x = col2im(gcols, h, w, cin, kh, kw, stride, zero_pad)
        return grad_x, grad_kernel

    if groups == cin and cout == cin:
        h_out, w_out = grad_out.shape[0], grad_out.shape[1]
        xp = np.pad(x, ((zero_pad, zero_pad), (zero_pad, zero_pad), (0, 0)))
        grad_xp = np.zeros_like(xp)
        grad_kernel = np.zeros_like(kernel)
        for a in range(kh):
            for b in range(kw):
                sl_h = slice(a, a + stride * h_out, stride)
                sl_w = slice(b, b + stride * w_out, stride)
                grad_kernel[a, b, 0, :] = np.sum(xp[sl_h, sl_w, :] * grad_out, axis=(0, 1))
                grad_xp[sl_h, sl_w, :] += grad_out * kernel[a, b, 0, :]
        return grad_xp[zero_pad : zero_pad + h, zero_pad : zero_pad + w, :], grad_kernel

    cg_in, cg_out = cin // groups, cout // groups
    grad_x = np.empty_like(x)
    grad_kernel = np.empty_like(kernel)
    for g in range(groups):
        gx, gk = conv2d_backward(
            np.ascontiguousarray(grad_out[:, :, g * cg_out : (g + 1) * cg_out]),
            np.ascontiguousarray(x[:, :, g * cg_in : (g + 1) * cg_in]),
            kernel[:, :, :, g * cg_out : (g + 1) * cg_out],
            stride,
            zero_pad,
            groups=1,
        )
        grad_x[:, :, g * cg_in : (g + 1) * cg_in] = gx
        grad_kernel[:, :, :, g * cg_out : (g + 1) * cg_out] = gk
    return grad_x, grad_kernel
