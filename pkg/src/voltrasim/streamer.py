"""Programmable data streamers: affine address generation, FIFO channels
with mixed-grained prefetching, and the weight streamer's 8x8 transposer.

An AffinePattern is a base word address plus an ordered (bound, stride) list,
dim 0 innermost: address(cursor) = base + sum_i idx_i * stride_i where
(idx_0, ...) is the mixed-radix decomposition of the cursor with dim 0
fastest.  Patterns never know about banks; banking is the memory's business.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .workload import Conv2dShape, GemmShape, ceil8


class PatternError(ValueError):
    pass


@dataclass(frozen=True)
class AffinePattern:
    base: int
    dims: tuple  # ((bound, stride), ...), dim 0 innermost/fastest

    def __post_init__(self):
        for bound, _ in self.dims:
            if bound < 1:
                raise PatternError(f"bounds must be >= 1, got {bound}")

    @property
    def total(self) -> int:
        n = 1
        for bound, _ in self.dims:
            n *= bound
        return n


def agu_next(pattern: AffinePattern, cursor: int) -> int:
    """Address at `cursor` in generation order (mixed radix, dim 0 fastest)."""
    if not 0 <= cursor < pattern.total:
        raise PatternError(f"cursor {cursor} outside pattern of {pattern.total} addresses")
    addr = pattern.base
    rem = cursor
    for bound, stride in pattern.dims:
        rem, idx = divmod(rem, bound)
        addr += idx * stride
    return addr


def enumerate_pattern(pattern: AffinePattern) -> np.ndarray:
    """All addresses of the pattern, vectorized, in generation order."""
    addrs = np.full(pattern.total, pattern.base, dtype=np.int64)
    period = 1
    for bound, stride in pattern.dims:
        idx = (np.arange(pattern.total, dtype=np.int64) // period) % bound
        addrs += idx * stride
        period *= bound
    return addrs


def conv_input_pattern(c: Conv2dShape, tile, channel_row: int,
                       base: int = 0) -> AffinePattern:
    """Per-channel 6-D pattern for implicit im2col over a C/8HWC8 fmap.

    `tile` is (oh_tile, ow_tile, n_tile) in output coordinates.  The fmap is
    stored zero-padded, word index cb*Hp*Wp + ih*Wp + iw.  Output pixels are
    walked row by row in groups of 8 consecutive ox; channel r serves pixels
    with ox % 8 == r (row tails fall back to the zero region, handled by the
    stream builder, not by this pattern).  Dims, innermost first:
      (fx, 1), (fy, Wp), (cb, Hp*Wp), (ox/8, 8*stride), (oy, stride*Wp),
      (n-tile repeat, 0).
    """
    oh_t, ow_t, n_t = tile
    if not 0 <= channel_row < 8:
        raise PatternError("channel_row must be in [0, 8)")
    if oh_t < 1 or ow_t < 1 or oh_t > c.oh or ow_t > c.ow:
        raise PatternError(f"bad conv tile {tile} for {c}")
    wp = c.w + 2 * c.pad
    hp = c.h + 2 * c.pad
    dims = (
        (c.fx, 1),
        (c.fy, wp),
        (c.c8 // 8, hp * wp),
        (max(1, -(-ow_t // 8)), 8 * c.stride),
        (oh_t, c.stride * wp),
        (max(1, -(-n_t // 8)), 0),
    )
    return AffinePattern(base=base + channel_row * c.stride, dims=dims)


def gemm_weight_pattern(g: GemmShape, tile, base: int = 0) -> AffinePattern:
    """3-D weight pattern in super-bank units (one unit = one 8x8 block).

    Weights are stored as 8x8 int8 blocks, K-block-major within each N block:
    unit(kb, nb) = kb + nb*ceil(K/8).  Dims, innermost first:
      (k_blk, 1), (n_blk, ceil(K/8)), (m-tile repeat, 0).
    """
    tm, tk, tn = tile
    if tm < 1 or tk < 1 or tn < 1 or tk > ceil8(g.k) or tn > ceil8(g.n):
        raise PatternError(f"bad weight tile {tile} for {g}")
    kb_full = -(-g.k // 8)
    dims = (
        (-(-tk // 8), 1),
        (-(-tn // 8), kb_full),
        (-(-tm // 8), 0),
    )
    return AffinePattern(base=base, dims=dims)


def transpose8x8(block: np.ndarray) -> np.ndarray:
    """Byte (i, j) -> (j, i) within one 64-byte (512-bit) block."""
    b = np.asarray(block)
    if b.size != 64:
        raise PatternError(f"transposer block must be 64 bytes, got {b.size}")
    return np.ascontiguousarray(b.reshape(8, 8).T).reshape(b.shape)


class Channel:
    """One streamer access channel: a cursor over a fixed address sequence
    plus an in-order FIFO of `depth` entries.

    Prefetching (MGDP) issues the next address whenever a FIFO slot is free;
    demand mode issues only when the consumer is stalled on this channel.
    A slot is reserved at issue so occupancy never exceeds the depth.
    """

    __slots__ = ("addrs", "depth", "issued", "ready", "popped", "pending",
                 "inflight", "fifo")

    def __init__(self, addrs, depth: int):
        self.addrs = addrs          # int64 array, generation==consumption order
        self.depth = depth
        self.issued = 0             # next sequence index to request
        self.ready = 0              # words arrived and not yet popped
        self.popped = 0             # words consumed
        self.pending = False        # a request is out but not yet granted
        self.inflight = deque()     # arrival cycles of granted, unarrived words
        self.fifo = deque()         # data payloads (functional mode only)

    def exhausted(self) -> bool:
        return self.issued >= len(self.addrs)

    def want_issue(self, demand_blocked: bool, mgdp: bool) -> bool:
        if self.pending or self.exhausted():
            return False
        if self.ready + len(self.inflight) >= self.depth:
            return False
        return mgdp or demand_blocked

    def next_addr(self) -> int:
        return int(self.addrs[self.issued])

    def on_grant(self, now: int, latency: int) -> None:
        self.pending = False
        self.issued += 1
        self.inflight.append(now + latency)

    def commit_arrivals(self, now: int) -> int:
        n = 0
        while self.inflight and self.inflight[0] <= now:
            self.inflight.popleft()
            self.ready += 1
            n += 1
        return n

    def pop(self):
        if self.ready < 1:
            raise RuntimeError("FIFO pop with no ready data (causality violation)")
        self.ready -= 1
        self.popped += 1
        if self.fifo:
            return self.fifo.popleft()
        return None


def prefetch_step(channel: Channel, mgdp: bool, demand_blocked: bool = False):
    """Address to request this cycle for `channel`, or None.

    In MGDP mode any free FIFO slot triggers a prefetch; in demand-fetch mode
    a request goes out only when the consumer is stalled on this channel.
    """
    if channel.want_issue(demand_blocked, mgdp):
        return channel.next_addr()
    return None
