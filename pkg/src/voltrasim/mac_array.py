"""Functional model of the 3D spatial MAC array (output-stationary).

One fire consumes an (mu x ku) input block and a (ku x nu) weight block and
accumulates their product into the (mu x nu) int32 accumulator grid; one fire
corresponds to one array cycle.  Accumulators are cleared (or preloaded)
exactly when the K loop wraps onto a new output block.  Arithmetic is exact
32-bit two's complement; overflow wraps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .arch import ArrayGeometry
from .workload import GemmShape


class FireError(ValueError):
    pass


class DrainError(ValueError):
    pass


@dataclass
class FireInput:
    a_block: np.ndarray  # (mu, ku) int8
    b_block: np.ndarray  # (ku, nu) int8
    preload: Optional[np.ndarray] = None  # (mu, nu) int32 partial sums


class MacArrayState:
    """Accumulator grid plus the hardware loop-controller counters."""

    def __init__(self, geometry: ArrayGeometry, k_blocks: int, n_blocks: int = 1,
                 m_blocks: int = 1):
        if k_blocks < 1:
            raise ValueError("k_blocks must be >= 1")
        self.geometry = geometry
        self.acc = np.zeros((geometry.mu, geometry.nu), dtype=np.int32)
        self.k_blocks = k_blocks
        self.n_blocks = n_blocks
        self.m_blocks = m_blocks
        self.k_blk = 0
        self._blocks_done = 0
        self.complete = False

    @property
    def n_blk(self) -> int:
        return self._blocks_done % self.n_blocks

    @property
    def m_blk(self) -> int:
        return self._blocks_done // self.n_blocks

    def __repr__(self):
        return (f"MacArrayState(m_blk={self.m_blk}, n_blk={self.n_blk}, "
                f"k_blk={self.k_blk}/{self.k_blocks}, complete={self.complete})")


def fire(state: MacArrayState, fi: FireInput) -> MacArrayState:
    g = state.geometry
    a = np.asarray(fi.a_block, dtype=np.int8)
    b = np.asarray(fi.b_block, dtype=np.int8)
    if a.shape != (g.mu, g.ku) or b.shape != (g.ku, g.nu):
        raise FireError(
            f"block shape mismatch: a{a.shape} b{b.shape} for geometry "
            f"({g.mu},{g.ku},{g.nu})")
    if state.complete:
        raise FireError("block complete; drain before firing the next block")
    if state.k_blk == 0:
        if fi.preload is not None:
            pre = np.asarray(fi.preload, dtype=np.int32)
            if pre.shape != (g.mu, g.nu):
                raise FireError(f"preload shape {pre.shape} != ({g.mu},{g.nu})")
            state.acc[:] = pre
        else:
            state.acc[:] = 0
    # exact int32 accumulate with wraparound; one fire cannot overflow int32
    state.acc += a.astype(np.int32) @ b.astype(np.int32)
    state.k_blk += 1
    if state.k_blk == state.k_blocks:
        state.complete = True
    return state


def drain(state: MacArrayState) -> np.ndarray:
    """Return the completed (mu x nu) int32 block and reset for the next one."""
    if not state.complete:
        raise DrainError(
            f"drain before block completion (k_blk={state.k_blk}/{state.k_blocks})")
    out = state.acc.copy()
    state.k_blk = 0
    state.complete = False
    state._blocks_done += 1
    return out


def ideal_cycles(g: GemmShape, geom: ArrayGeometry) -> int:
    """Fires needed with one fire per cycle: ceil(m/mu)*ceil(k/ku)*ceil(n/nu)."""
    return (math.ceil(g.m / geom.mu) * math.ceil(g.k / geom.ku)
            * math.ceil(g.n / geom.nu))


def mac_slots(g: GemmShape, geom: ArrayGeometry) -> int:
    """MAC slots over the ideal schedule (padded dims product)."""
    return (math.ceil(g.m / geom.mu) * geom.mu
            * math.ceil(g.k / geom.ku) * geom.ku
            * math.ceil(g.n / geom.nu) * geom.nu)


def spatial_utilization(g: GemmShape, geom: ArrayGeometry) -> float:
    """Useful MACs over MAC slots across the ideal schedule."""
    return (g.m * g.k * g.n) / mac_slots(g, geom)
