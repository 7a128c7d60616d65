"""Independent reference math for functional verification.

Deliberately written against the documented layer semantics (not against the
datapath code): float64 matrix products (exact for int8 operands at these
sizes) wrapped to int32, an independently coded requantization, and explicit
im2col enumeration.  The engine's cycle-level results must match this
bit-for-bit.
"""

from __future__ import annotations

import numpy as np

from .workload import Conv2dShape, MaxPoolShape, ceil8


def ref_gemm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact int8 x int8 -> int32 (wraparound) matrix product."""
    prod = a.astype(np.float64) @ b.astype(np.float64)
    return prod.astype(np.int64).astype(np.int32)


def ref_quantize(acc: np.ndarray, multiplier: int, shift: int,
                 zero_point: int = 0, relu: bool = False) -> np.ndarray:
    v = acc.astype(np.int64)
    if relu:
        v = np.where(v < 0, 0, v)
    scaled = v * multiplier
    if shift > 0:
        scaled = scaled + (1 << (shift - 1))
    q = np.floor_divide(scaled, 1 << shift) + zero_point
    return np.clip(q, -128, 127).astype(np.int8)


def ref_im2col(fmap: np.ndarray, c: Conv2dShape) -> np.ndarray:
    """im2col matrix (oh*ow, fy*fx*c8) in the datapath's k order.

    One k block is the 8 channels of one (fy, fx) tap: k = ((cb*FY + fy)*FX
    + fx)*8 + c_lo.  fmap is (h, w, c8) with padded channels zeroed.
    """
    h, w, c8 = fmap.shape
    assert c8 == c.c8
    padded = np.zeros((h + 2 * c.pad, w + 2 * c.pad, c8), dtype=fmap.dtype)
    padded[c.pad:c.pad + h, c.pad:c.pad + w] = fmap
    cols = np.zeros((c.oh * c.ow, c.c8 // 8, c.fy, c.fx, 8), dtype=fmap.dtype)
    for fy in range(c.fy):
        for fx in range(c.fx):
            win = padded[fy:fy + c.oh * c.stride:c.stride,
                         fx:fx + c.ow * c.stride:c.stride]
            cols[:, :, fy, fx, :] = win.reshape(c.oh * c.ow, c8 // 8, 8)
    return cols.reshape(c.oh * c.ow, c.fy * c.fx * c8)


def ref_conv2d(fmap: np.ndarray, weight: np.ndarray, c: Conv2dShape) -> np.ndarray:
    """int32 conv output as im2col(fmap) @ weight; weight is (fy*fx*c8, oc)."""
    return ref_gemm(ref_im2col(fmap, c), weight)


def ref_maxpool(fmap: np.ndarray, p: MaxPoolShape) -> np.ndarray:
    out = np.empty((p.oh, p.ow, fmap.shape[2]), dtype=fmap.dtype)
    for i in range(p.oh):
        for j in range(p.ow):
            win = fmap[i * p.stride:i * p.stride + p.window,
                       j * p.stride:j * p.stride + p.window]
            out[i, j] = win.reshape(-1, fmap.shape[2]).max(axis=0)
    return out


def pad_matrix(mat: np.ndarray, rows: int = 0, cols: int = 0) -> np.ndarray:
    """Zero-pad a matrix up to (ceil8) padded dims (or explicit targets)."""
    r = rows or ceil8(mat.shape[0])
    c = cols or ceil8(mat.shape[1])
    out = np.zeros((r, c), dtype=mat.dtype)
    out[:mat.shape[0], :mat.shape[1]] = mat
    return out
