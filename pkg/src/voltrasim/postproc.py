"""Post-processing units: quantization SIMD, maxpool, and the data reshuffler.

Requantization is per-tensor multiplier+shift with round-half-up and a zero
point: q = clamp(((v * multiplier + (1 << (shift-1))) >> shift) + zero_point).
ReLU, when enabled, is applied to the 32-bit accumulator before scaling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuantParams:
    multiplier: int  # 32-bit signed
    shift: int       # in [0, 31]
    zero_point: int = 0  # 8-bit signed
    relu: bool = False

    def __post_init__(self):
        if not 0 <= self.shift < 32:
            raise ValueError(f"shift must be in [0,31], got {self.shift}")
        if not -(2**31) <= self.multiplier < 2**31:
            raise ValueError("multiplier must fit in 32 bits")
        if not -128 <= self.zero_point <= 127:
            raise ValueError("zero_point must fit in 8 bits")


IDENTITY_QUANT = QuantParams(multiplier=1, shift=0)


def quantize(acc: int, p: QuantParams) -> int:
    """Requantize one 32-bit accumulator to int8 (64-bit intermediate)."""
    v = int(acc)
    if p.relu and v < 0:
        v = 0
    prod = v * p.multiplier
    if p.shift > 0:
        prod += 1 << (p.shift - 1)
    q = (prod >> p.shift) + p.zero_point
    return max(-128, min(127, q))


def quantize_block(acc: np.ndarray, p: QuantParams) -> np.ndarray:
    """Vectorized quantize; bit-identical to the scalar lane."""
    v = acc.astype(np.int64)
    if p.relu:
        v = np.maximum(v, 0)
    prod = v * p.multiplier
    if p.shift > 0:
        prod += 1 << (p.shift - 1)
    q = (prod >> p.shift) + p.zero_point  # arithmetic shift on int64
    return np.clip(q, -128, 127).astype(np.int8)


class SimdUnit:
    """Time-multiplexed quantization unit; `lanes` results per cycle."""

    def __init__(self, lanes: int = 8):
        if lanes not in (8, 64):
            raise ValueError("SIMD unit supports 8 or 64 lanes")
        self.lanes = lanes

    def drain_block(self, block: np.ndarray, p: QuantParams):
        """Quantize one complete 64-result output block.

        Returns (values, cycles) where cycles follows the hardware loop
        unroller: 64/lanes passes over the lanes.
        """
        flat = np.asarray(block).reshape(-1)
        if flat.size != 64:
            raise ValueError(f"output block must hold 64 results, got {flat.size}")
        out = np.empty(64, dtype=np.int8)
        for start in range(0, 64, self.lanes):
            for lane in range(self.lanes):
                out[start + lane] = quantize(flat[start + lane], p)
        return out, 64 // self.lanes


def maxpool(fmap: np.ndarray, window: int, stride: int):
    """Sequential max-pooling with eight parallel comparison lanes.

    fmap is (H, W, C); returns (pooled fmap, cycles) with
    cycles = ceil(outputs * (window^2 - 1) / 8).
    """
    h, w, c = fmap.shape
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be positive")
    if (h - window) % stride or (w - window) % stride:
        raise ValueError(f"pool window {window}/stride {stride} does not tile {h}x{w}")
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    out = np.empty((oh, ow, c), dtype=fmap.dtype)
    for i in range(oh):
        for j in range(ow):
            win = fmap[i * stride:i * stride + window, j * stride:j * stride + window]
            out[i, j] = win.reshape(-1, c).max(axis=0)
    comparisons = oh * ow * c * (window * window - 1)
    return out, math.ceil(comparisons / 8)


def to_blocked_row_major(mat: np.ndarray) -> np.ndarray:
    """Reshuffle a row-major (M, K) byte matrix into 8x8 blocked row-major.

    out[(mb*(K/8)+kb)*64 + r*8 + c] = in[(mb*8+r)*K + kb*8 + c]
    """
    m, k = mat.shape
    if m % 8 or k % 8:
        raise ValueError(f"matrix dims must be multiples of 8, got {m}x{k}")
    return np.ascontiguousarray(
        mat.reshape(m // 8, 8, k // 8, 8).transpose(0, 2, 1, 3)).reshape(-1)


def from_blocked_row_major(buf: np.ndarray, m: int, k: int) -> np.ndarray:
    if m % 8 or k % 8:
        raise ValueError(f"matrix dims must be multiples of 8, got {m}x{k}")
    return np.ascontiguousarray(
        buf.reshape(m // 8, k // 8, 8, 8).transpose(0, 2, 1, 3)).reshape(m, k)


def to_c8hwc8(t: np.ndarray) -> np.ndarray:
    """Reshuffle an (H, W, C) byte tensor into C/8HWC8 word order.

    Word cb*H*W + h*W + w holds channels 8cb..8cb+7 of pixel (h, w).
    """
    h, w, c = t.shape
    if c % 8:
        raise ValueError(f"channels must be a multiple of 8, got {c}")
    return np.ascontiguousarray(t.reshape(h, w, c // 8, 8).transpose(2, 0, 1, 3)).reshape(-1)


def from_c8hwc8(buf: np.ndarray, h: int, w: int, c: int) -> np.ndarray:
    if c % 8:
        raise ValueError(f"channels must be a multiple of 8, got {c}")
    return np.ascontiguousarray(
        buf.reshape(c // 8, h, w, 8).transpose(1, 2, 0, 3)).reshape(h, w, c)


def reshuffle_cycles(nbytes: int) -> int:
    """Reshuffler services one 64-bit word per cycle (read+write pipelined)."""
    return math.ceil(nbytes / 8) + 1
