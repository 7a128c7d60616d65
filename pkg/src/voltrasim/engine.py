"""The cycle loop binding streamers, memory, array and post-processing, the
DMA phase model, and metric extraction.

Per compute cycle: (1) granted data arrives in FIFOs after the memory
latency, (2) the array fires iff every operand FIFO head for the current
fire is ready and drain backpressure is clear, (3) the SIMD/output path
advances with psum-priority time-muxing, (4) streamers issue prefetch or
demand requests, (5) the banks arbitrate.  Tiles execute as DMA-in phase,
compute phase, DMA-out phase (serialized by default).

Timing never depends on data values, so performance runs are timing-only:
tile results are memoized on (config, tile geometry, base alignment) and a
tile fast-forwards exactly when its cycle-level state at an output-block
boundary provably repeats (identical bank-phase, FIFO, arbiter and drain
state).  Functional runs push real data through the same loop (or through a
vectorized tile path that is property-tested equal) and compare end-of-layer
memory against the independent oracle bit-for-bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import reference
from .arch import SimConfig, validate
from .mac_array import FireInput, MacArrayState, drain as array_drain, fire as array_fire
from .memory import MemRequest, ScratchpadMemory, time_mux_port
from .postproc import QuantParams, SimdUnit, maxpool, quantize_block, reshuffle_cycles
from .streamer import transpose8x8
from .tiler import (CapacityError, LayerTiling, TileExec, TileSchedule,
                    allocate, plan_network)
from .workload import Network, ceil8, tensor_data


class SimulationError(RuntimeError):
    pass


class FunctionalMismatch(SimulationError):
    pass


# channel ids in the compute-phase cycle loop
IN_CH = list(range(8))
W_CH = 8
PSUM_CH = list(range(9, 13))
OUT_CH = list(range(13, 17))


def dma_cycles(nbytes: int, dma) -> int:
    """Cycles for one DMA transfer: fixed latency + bandwidth term."""
    if nbytes < 0:
        raise ValueError("negative transfer size")
    if nbytes == 0:
        return 0
    return dma.latency_cycles + math.ceil(nbytes * 8 / dma.bandwidth_bits_per_cycle)


def temporal_utilization(ideal: int, actual: int) -> float:
    """Ideal fire cycles / actual compute cycles (DMA excluded)."""
    if actual <= 0:
        return 1.0
    return ideal / actual


# ---------------------------------------------------------------------------
# word packing helpers (8 int8 bytes per 64-bit word, little-endian)

def _pack_rows(mat8: np.ndarray) -> np.ndarray:
    """(n, 8) int8 rows -> n uint64 words."""
    return np.ascontiguousarray(mat8.astype(np.int8)).view(np.uint64).reshape(-1)


def _unpack_words(words: np.ndarray) -> np.ndarray:
    """n uint64 words -> (n, 8) int8."""
    return np.ascontiguousarray(words).view(np.int8).reshape(-1, 8)


def pack_blocked(mem, base: int, mat: np.ndarray, pitch_kb: int,
                 mb0: int = 0, kb0: int = 0) -> None:
    """Store a matrix into a blocked row-major region.

    Word (mb, kb, r) sits at base + ((mb0+mb)*pitch_kb + kb0+kb)*8 + r and
    holds row r of block (mb, kb).  The matrix is zero-padded to 8-multiples.
    """
    m8, k8 = ceil8(mat.shape[0]), ceil8(mat.shape[1])
    padded = reference.pad_matrix(mat, m8, k8)
    mb_n, kb_n = m8 // 8, k8 // 8
    # (mb, kb, r) word order
    words = _pack_rows(padded.reshape(mb_n, 8, kb_n, 8).transpose(0, 2, 1, 3)
                       .reshape(-1, 8))
    if pitch_kb == kb_n and mb0 == 0 and kb0 == 0:
        mem.write_words(base, words)
        return
    words = words.reshape(mb_n, kb_n * 8)
    for mb in range(mb_n):
        mem.write_words(base + ((mb0 + mb) * pitch_kb + kb0) * 8, words[mb])


def unpack_blocked(mem, base: int, rows: int, cols: int, pitch_kb: int,
                   mb0: int = 0, kb0: int = 0) -> np.ndarray:
    m8, k8 = ceil8(rows), ceil8(cols)
    mb_n, kb_n = m8 // 8, k8 // 8
    out = np.empty((m8, k8), dtype=np.int8)
    for mb in range(mb_n):
        words = mem.read_bytes(base + ((mb0 + mb) * pitch_kb + kb0) * 8, kb_n * 8)
        out[mb * 8:(mb + 1) * 8] = (words.reshape(kb_n, 8, 8)
                                    .transpose(1, 0, 2).reshape(8, k8))
    return out[:rows, :cols]


def pack_weight_kmajor(mem, base: int, w: np.ndarray, pitch_kb: int) -> None:
    """Off-chip weight layout: super unit(kb, nb) = kb + nb*pitch_kb, each
    unit holding one 8x8 block (word r = k-row r)."""
    k8, n8 = ceil8(w.shape[0]), ceil8(w.shape[1])
    padded = reference.pad_matrix(w, k8, n8)
    kb_n, nb_n = k8 // 8, n8 // 8
    # (nb, kb, r) word order
    words = _pack_rows(padded.reshape(kb_n, 8, nb_n, 8).transpose(2, 0, 1, 3)
                       .reshape(-1, 8))
    if pitch_kb == kb_n:
        mem.write_words(base, words)
        return
    words = words.reshape(nb_n, kb_n * 8)
    for nb in range(nb_n):
        mem.write_words(base + nb * pitch_kb * 8, words[nb])


def pack_c8hwc8(mem, base: int, fmap: np.ndarray, pad: int) -> None:
    """Store an (h, w, c8) tensor zero-padded into C/8HWC8 words."""
    h, w, c8 = fmap.shape
    hp, wp = h + 2 * pad, w + 2 * pad
    padded = np.zeros((hp, wp, c8), dtype=np.int8)
    padded[pad:pad + h, pad:pad + w] = fmap
    words = _pack_rows(padded.reshape(hp, wp, c8 // 8, 8).transpose(2, 0, 1, 3)
                       .reshape(-1, 8))
    mem.write_words(base, words)


def pack_psum_block(mem, base: int, block: np.ndarray) -> None:
    """64 int32 results -> 32 words (two little-endian int32 per word)."""
    words = block.astype("<i4").reshape(-1).view(np.uint64)
    mem.write_words(base, words)


def unpack_psum_block(mem, base: int) -> np.ndarray:
    words = mem.read_bytes(base, 32).reshape(-1).view("<i4")
    return words.reshape(8, 8).astype(np.int32)


# ---------------------------------------------------------------------------
# per-tile stream construction


@dataclass
class TileStreams:
    fires: int
    mb_n: int
    nb_n: int
    kb_n: int
    in_addr: list          # 8 int lists, len == fires
    w_addr: list           # int list, len == fires (first word of super unit)
    w_xpose: bool
    preload: bool
    spill: bool
    psum_base: int = 0     # block bi at psum_base + bi*32
    out_words: list = None  # per block bi: list of 8 (or 32) word addresses
    out_is_spill: bool = False


def _gemm_input_addrs(lt: LayerTiling, t: TileExec, base: int):
    """Per-channel address sequences for a blocked GEMM input tile."""
    mb_n = lt.m_groups(t.mi)
    kb_n = math.ceil(t.tk / 8)
    nb_n = math.ceil(t.tn / 8)
    pitch = lt.input_pitch_kb
    mb0 = t.m0 // 8 if lt.input_resident else 0
    kb0 = t.k0 // 8 if lt.input_resident else 0
    mb = np.arange(mb_n, dtype=np.int64)[:, None, None]
    kb = np.arange(kb_n, dtype=np.int64)[None, None, :]
    core = base + ((mb0 + mb) * pitch + kb0 + kb) * 8
    core = np.broadcast_to(core, (mb_n, nb_n, kb_n)).reshape(-1)
    return [(core + r).tolist() for r in range(8)], mb_n, nb_n, kb_n


def _conv_input_addrs(lt: LayerTiling, t: TileExec, base: int, zero_base: int):
    """Per-channel address sequences for an implicit-im2col conv tile.

    Row-aligned pixel groups: channel r serves ox % 8 == r; groups past the
    row tail read the zero region.  The fmap region holds `rows_in` padded
    rows starting at input row row0*stride (resident regions hold the full
    padded fmap).
    """
    c = lt.conv
    wp = c.w + 2 * c.pad
    row0 = sum(lt.row_sizes[:t.mi])
    rows = lt.row_sizes[t.mi]
    gpr = math.ceil(c.ow / 8)
    mb_n = rows * gpr
    kb_n = math.ceil(t.tk / 8)
    nb_n = math.ceil(t.tn / 8)
    kg = c.fy * c.fx
    cb0 = t.k0 // (kg * 8)
    if lt.input_resident:
        row_off = 0
        cb_stride = (c.h + 2 * c.pad) * wp
        cb_base = cb0
    else:
        row_off = row0 * c.stride
        rows_in = min((rows - 1) * c.stride + c.fy, c.h + 2 * c.pad)
        cb_stride = rows_in * wp
        cb_base = 0
    # fire order (mb, nb, kb): mb -> (row, oxg), kb -> (cb, fy, fx)
    kb = np.arange(kb_n, dtype=np.int64)
    cb = cb_base + kb // kg
    fy = (kb % kg) // c.fx
    fx = kb % c.fx
    row = np.arange(rows, dtype=np.int64)
    oxg = np.arange(gpr, dtype=np.int64)
    # input row of the receptive-field top, in region coordinates
    iy = ((row0 + row) * c.stride - row_off)[:, None, None, None]
    ox0 = (oxg * 8)[None, :, None, None]
    addr = (base + (cb * cb_stride)[None, None, None, :]
            + (iy + fy[None, None, None, :]) * wp
            + ox0 * c.stride + fx[None, None, None, :])
    # addr shape: (rows, gpr, 1, kb_n) -> per channel add r*stride, with row
    # tails redirected to the zero region
    out = []
    for r in range(8):
        a = addr + r * c.stride
        valid = (oxg * 8 + r < c.ow)[None, :, None, None]
        a = np.where(valid, a, zero_base + r)
        a = np.broadcast_to(a.reshape(mb_n, 1, kb_n), (mb_n, nb_n, kb_n))
        out.append(a.reshape(-1).tolist())
    return out, mb_n, nb_n, kb_n


def _weight_addrs(lt: LayerTiling, t: TileExec, base: int, mb_n, nb_n, kb_n):
    kb0 = t.k0 // 8 if lt.weight_resident else 0
    nb0 = t.n0 // 8 if lt.weight_resident else 0
    kb = np.arange(kb_n, dtype=np.int64)[None, :]
    nb = np.arange(nb_n, dtype=np.int64)[:, None]
    unit = (kb0 + kb) * lt.weight_skb + (nb0 + nb) * lt.weight_snb
    addr = base + unit * 8
    addr = np.broadcast_to(addr[None, :, :], (mb_n, nb_n, kb_n)).reshape(-1)
    return addr.tolist()


def _out_word_addrs(lt: LayerTiling, t: TileExec, base: int, psum_base: int,
                    mb_n, nb_n):
    """Per completed block: the word addresses its drain writes.

    Conv m-groups are row-aligned: the absolute group index of local group mb
    is (row0 + row)*groups_per_row + oxg.
    """
    out = []
    if lt.conv is not None:
        gpr = math.ceil(lt.conv.ow / 8)
        row0 = sum(lt.row_sizes[:t.mi])
        mb_abs_of = lambda mb: (row0 + mb // gpr) * gpr + mb % gpr
    else:
        mb_abs_of = lambda mb: t.m0 // 8 + mb
    for mb in range(mb_n):
        for nb in range(nb_n):
            if t.spill_psum:
                b0 = psum_base + (mb * nb_n + nb) * 32
                out.append([b0 + w for w in range(32)])
            else:
                mb_abs = mb_abs_of(mb) if lt.output_resident else mb
                nb_abs = (t.n0 // 8 + nb) if lt.output_resident else nb
                b0 = base + (mb_abs * lt.output_pitch_nb + nb_abs) * 8
                out.append([b0 + w for w in range(8)])
    return out


def build_tile_streams(lt: LayerTiling, t: TileExec, bases: dict) -> TileStreams:
    if lt.conv is not None:
        in_addr, mb_n, nb_n, kb_n = _conv_input_addrs(
            lt, t, bases[lt.input_region], bases["zero"])
    else:
        in_addr, mb_n, nb_n, kb_n = _gemm_input_addrs(lt, t, bases[lt.input_region])
    w_addr = _weight_addrs(lt, t, bases[lt.weight_region], mb_n, nb_n, kb_n)
    psum_base = bases.get(lt.psum_region, 0)
    out_words = _out_word_addrs(lt, t, bases[lt.output_region], psum_base,
                                mb_n, nb_n)
    return TileStreams(
        fires=mb_n * nb_n * kb_n, mb_n=mb_n, nb_n=nb_n, kb_n=kb_n,
        in_addr=in_addr, w_addr=w_addr, w_xpose=lt.weight_xpose,
        preload=t.preload_psum, spill=t.spill_psum, psum_base=psum_base,
        out_words=out_words, out_is_spill=t.spill_psum)


def make_tile_key(lt: LayerTiling, t: TileExec, bases: dict, cfg_key) -> tuple:
    """Memoization key: everything the tile's cycle timing can depend on.

    Timing is data-independent; it is fully determined by the stream shapes,
    the bank phases of every base address involved, and the config knobs.
    """
    def ph(region):
        return bases[region] % 32 if region else -1

    if lt.conv is not None:
        c = lt.conv
        geo = ("conv", c.h, c.w, c.pad, c.stride, c.fy, c.fx, c.ow, c.c8,
               lt.row_sizes[t.mi], sum(lt.row_sizes[:t.mi]) if lt.input_resident else 0)
    else:
        geo = ("gemm",)
    res_off = (t.m0 if (lt.input_resident or lt.output_resident) else 0,
               t.k0 if (lt.input_resident or lt.weight_resident) else 0,
               t.n0 if (lt.weight_resident or lt.output_resident) else 0)
    return (cfg_key, geo, t.tm, t.tk, t.tn, t.preload_psum, t.spill_psum,
            lt.input_pitch_kb, lt.weight_skb, lt.weight_snb, lt.weight_xpose,
            lt.output_pitch_nb, lt.input_resident, lt.weight_resident,
            lt.output_resident, res_off,
            ph(lt.input_region), ph(lt.weight_region), ph(lt.output_region),
            ph(lt.psum_region), bases["zero"] % 32)


@dataclass
class TileResult:
    cycles: int
    fires: int
    stall_fifo: int = 0
    stall_drain: int = 0
    stall_conflict: int = 0
    conflict_events: int = 0


class _TileCycleSim:
    """Cycle-accurate compute phase of one tile.

    Timing-only unless `functional`; with `functional`, operand words flow
    through the FIFOs into the MAC array and drains write real results.
    """

    def __init__(self, cfg: SimConfig, mem, streams: TileStreams, lt: LayerTiling,
                 quant: QuantParams, functional: bool, trace=None):
        self.cfg = cfg
        self.mem = mem
        self.s = streams
        self.lt = lt
        self.quant = quant
        self.functional = functional
        self.trace = trace
        self.mgdp = cfg.prefetch_mode == "mgdp"
        self.latency = cfg.mem_latency
        self.lanes = cfg.simd_lanes
        self.mux = cfg.crossbar_time_mux
        self.dbuf = cfg.double_buffer_acc
        in_depth = cfg.streamers["input"].fifo_depth
        w_depth = cfg.streamers["weight"].fifo_depth
        # channel state: [issued, ready, pending, popped]
        self.in_issued = [0] * 8
        self.in_ready = [0] * 8
        self.in_pend = [False] * 8
        self.in_depth = in_depth
        self.in_addr = streams.in_addr
        self.w_issued = 0
        self.w_ready = 0
        self.w_pend = False
        self.w_depth = w_depth
        self.w_addr = streams.w_addr
        self.in_fifo = [None] * 8
        self.w_fifo = None
        if functional:
            from collections import deque
            self.in_fifo = [deque() for _ in range(8)]
            self.w_fifo = deque()
        # psum preload channels (1-deep, auto-pop into the staging buffer)
        self.ps_depth = cfg.streamers["psum"].fifo_depth
        self.ps_addr = [[] for _ in range(4)]
        self.ps_issued = [0] * 4
        self.ps_pend = [False] * 4
        self.preload_progress = 0
        self.preload_vals = {}
        if streams.preload:
            blocks = streams.mb_n * streams.nb_n
            for c in range(4):
                self.ps_addr[c] = [streams.psum_base + b * 32 + c + 4 * j
                                   for b in range(blocks) for j in range(8)]
        # output channels: one pending (addr, data) each
        self.out_hold = [None] * 4
        # drain unit
        self.drain_words = []     # [(emit_at, chan, addr, data)]
        self.drain_ptr = 0
        # arrivals: (cycle, kind, index) kind: 0 input,1 weight,2 psum
        from collections import deque
        self.arrivals = deque()
        # requests reused per channel
        self.reqs = {}
        for c in IN_CH:
            self.reqs[c] = MemRequest(channel=c, addr=0, cls="input")
        self.reqs[W_CH] = MemRequest(channel=W_CH, addr=0, width=512, cls="weight")
        for c in PSUM_CH:
            self.reqs[c] = MemRequest(channel=c, addr=0, cls="psum")
        for c in OUT_CH:
            self.reqs[c] = MemRequest(channel=c, addr=0, write=True, cls="output")
        self.mac = MacArrayState(cfg.array, streams.kb_n) if functional else None
        self.res = TileResult(cycles=0, fires=streams.fires)
        # fast-forward bookkeeping
        self.snapshots = {}
        self.ff_enabled = not functional and trace is None

    # -- helpers ------------------------------------------------------------

    def _bank(self, addr):
        return self.mem.bank_id(addr)

    def _emit_trace(self, t, unit, event):
        if self.trace is not None:
            self.trace.write(f"{t},{unit},{event}\n")

    def _snapshot_key(self, t, block):
        phase = block % max(1, self.s.nb_n * 4)
        inflight = tuple(sorted((a - t, k, i) for (a, k, i) in self.arrivals))
        ins = tuple((self.in_ready[c], self.in_pend[c]) for c in range(8))
        outs = tuple(None if h is None else self._bank(h[0]) for h in self.out_hold)
        drain = tuple((max(0, e - t), ch, self._bank(a))
                      for (e, ch, a, _) in self.drain_words[self.drain_ptr:])
        rr = tuple(tuple(dom.rr) for dom in self.mem.domains) if self.mem else ()
        resv = tuple(tuple(sorted(dom.reserved.items())) for dom in self.mem.domains) \
            if self.mem else ()
        ps = tuple((self.ps_pend[c],) for c in range(4))
        rel_preload = self.preload_progress - block * 32 if self.s.preload else 0
        return (phase, ins, self.w_ready, self.w_pend, inflight, outs, drain,
                rr, resv, ps, rel_preload)

    def _apply_ff(self, t, fires_done, prev, cur, blocks_total):
        """Jump over full periods of a proven-repeating block pattern."""
        (pb, pt, pstats, pissued, pps, ppre) = prev
        (cb, ct, cstats, cissued, cps, cpre) = cur
        db = cb - pb
        if db <= 0:
            return t, fires_done, 0
        remaining = blocks_total - cb
        n = max(0, (remaining - db) // db)
        if n <= 0:
            return t, fires_done, 0
        dt = ct - pt
        self.res.stall_fifo += n * (cstats[0] - pstats[0])
        self.res.stall_drain += n * (cstats[1] - pstats[1])
        self.res.stall_conflict += n * (cstats[2] - pstats[2])
        self.res.conflict_events += n * (cstats[3] - pstats[3])
        for c in range(8):
            self.in_issued[c] += n * (cissued[0][c] - pissued[0][c])
            # popped tracked via fires_done
        self.w_issued += n * (cissued[1] - pissued[1])
        for c in range(4):
            self.ps_issued[c] += n * (cps[c] - pps[c])
        self.preload_progress += n * (cpre - ppre)
        shift = n * dt
        self.arrivals = type(self.arrivals)(
            (a + shift, k, i) for (a, k, i) in self.arrivals)
        self.drain_words = [(e + shift if j >= self.drain_ptr else e, ch, a, d)
                            for j, (e, ch, a, d) in enumerate(self.drain_words)]
        return t + shift, fires_done + n * db * self.s.kb_n, n * db

    # -- main loop ------------------------------------------------------------

    def run(self) -> TileResult:
        s = self.s
        fires_total = s.fires
        kb_n = s.kb_n
        fires_done = 0
        blocks_done = 0
        blocks_total = s.mb_n * s.nb_n
        t = 0
        stats = [0, 0, 0, 0]  # fifo, drain, conflict, conflict_events
        snap_block = -1
        guard = 0
        max_cycles = 200 * (fires_total + 64) + 100000
        while True:
            guard += 1
            if guard > max_cycles:
                raise SimulationError(
                    f"tile simulation did not converge within {max_cycles} cycles")
            # (a) arrivals
            arr = self.arrivals
            while arr and arr[0][0] <= t:
                _, kind, idx = arr.popleft()
                if kind == 0:
                    self.in_ready[idx] += 1
                elif kind == 1:
                    self.w_ready += 1
                else:
                    self.preload_progress += 1
            # fast-forward snapshot at block starts
            if (self.ff_enabled and fires_done % kb_n == 0
                    and fires_done // kb_n != snap_block and blocks_done < blocks_total):
                snap_block = fires_done // kb_n
                key = self._snapshot_key(t, snap_block)
                cur = (snap_block, t, tuple(stats),
                       (tuple(self.in_issued), self.w_issued),
                       tuple(self.ps_issued), self.preload_progress)
                if key in self.snapshots:
                    t, fires_done, skipped = self._apply_ff(
                        t, fires_done, self.snapshots[key], cur, blocks_total)
                    if skipped:
                        blocks_done += skipped
                        snap_block = fires_done // kb_n
                        self.snapshots.clear()
                else:
                    self.snapshots[key] = cur
            # (b) fire decision
            fired = False
            demand_missing = set()
            if fires_done < fires_total:
                k_blk = fires_done % kb_n
                block = fires_done // kb_n
                missing = [c for c in range(8) if self.in_ready[c] == 0]
                w_missing = self.w_ready == 0
                pre_missing = (s.preload
                               and self.preload_progress < (block + 1) * 32
                               and k_blk == 0)
                drain_blocked = self.drain_ptr < len(self.drain_words) and (
                    (k_blk == kb_n - 1) if self.dbuf else True)
                if missing or w_missing or pre_missing:
                    stats[0] += 1
                    demand_missing = set(missing)
                    if w_missing:
                        demand_missing.add(W_CH)
                    if pre_missing:
                        demand_missing.update(PSUM_CH)
                elif drain_blocked:
                    stats[1] += 1
                else:
                    fired = True
                    for c in range(8):
                        self.in_ready[c] -= 1
                    self.w_ready -= 1
                    if self.functional:
                        self._fire_functional(fires_done)
                    fires_done += 1
                    if fires_done % kb_n == 0:
                        self._handoff(t, blocks_done)
                        blocks_done += 1
            # (c) drain emission to output channels
            dw = self.drain_words
            while self.drain_ptr < len(dw):
                emit_at, chan, addr, data = dw[self.drain_ptr]
                if emit_at > t or self.out_hold[chan] is not None:
                    break
                self.out_hold[chan] = (addr, data)
                self.drain_ptr += 1
            # (d) request collection
            requests = []
            for c in range(8):
                if self.in_pend[c]:
                    requests.append(self.reqs[c])
                    continue
                if self.in_issued[c] >= fires_total:
                    continue
                if self.in_ready[c] + self._in_flight(0, c) >= self.in_depth:
                    continue
                if self.mgdp or c in demand_missing:
                    self.reqs[c].addr = self.in_addr[c][self.in_issued[c]]
                    self.in_pend[c] = True
                    requests.append(self.reqs[c])
            if self.w_pend:
                requests.append(self.reqs[W_CH])
            elif self.w_issued < fires_total \
                    and self.w_ready + self._in_flight(1, 0) < self.w_depth \
                    and (self.mgdp or W_CH in demand_missing):
                self.reqs[W_CH].addr = self.w_addr[self.w_issued]
                self.w_pend = True
                requests.append(self.reqs[W_CH])
            psum_req_on_port = [False] * 4
            if s.preload:
                for p, c in enumerate(PSUM_CH):
                    if self.ps_pend[p]:
                        requests.append(self.reqs[c])
                        psum_req_on_port[p] = True
                        continue
                    if self.ps_issued[p] >= len(self.ps_addr[p]):
                        continue
                    if self._in_flight(2, p) >= self.ps_depth:
                        continue
                    if self.mgdp or c in demand_missing:
                        self.reqs[c].addr = self.ps_addr[p][self.ps_issued[p]]
                        self.ps_pend[p] = True
                        requests.append(self.reqs[c])
                        psum_req_on_port[p] = True
            for p, c in enumerate(OUT_CH):
                if self.out_hold[p] is None:
                    continue
                if self.mux and psum_req_on_port[p]:
                    continue  # psum read outranks the output write on this port
                self.reqs[c].addr = self.out_hold[p][0]
                if self.functional:
                    self.reqs[c].data = self.out_hold[p][1]
                requests.append(self.reqs[c])
            # (e) arbitration + grants
            if requests:
                granted, stalled = self.mem.arbitrate(requests)
                stats[3] += len(stalled)
                for req in granted:
                    c = req.channel
                    if c in OUT_CH:
                        p = c - OUT_CH[0]
                        if self.functional:
                            self.mem.write64(req.addr, req.data)
                        self.out_hold[p] = None
                    elif c == W_CH:
                        data = None
                        if self.functional:
                            data = self.mem.read_bytes(req.addr, 8).copy()
                            self.w_fifo.append(data)
                        self.w_pend = False
                        self.w_issued += 1
                        self.arrivals.append((t + self.latency, 1, 0))
                    elif c in PSUM_CH:
                        p = c - PSUM_CH[0]
                        if self.functional:
                            seq = self.ps_issued[p]
                            val = self.mem.read64(req.addr)
                            self.preload_vals[(p, seq)] = val
                        self.ps_pend[p] = False
                        self.ps_issued[p] += 1
                        self.arrivals.append((t + self.latency, 2, p))
                    else:
                        if self.functional:
                            self.in_fifo[c].append(self.mem.read64(req.addr))
                        self.in_pend[c] = False
                        self.in_issued[c] += 1
                        self.arrivals.append((t + self.latency, 0, c))
                if self.trace is not None:
                    for req in granted:
                        self._emit_trace(t, f"ch{req.channel}",
                                         f"grant {'w' if req.write else 'r'}@{req.addr}")
            if self.trace is not None and fired:
                self._emit_trace(t, "array", f"fire {fires_done - 1}")
            t += 1
            if (fires_done == fires_total and self.drain_ptr == len(self.drain_words)
                    and all(h is None for h in self.out_hold)):
                break
        self.res.cycles = t
        self.res.stall_fifo, self.res.stall_drain = stats[0], stats[1]
        self.res.stall_conflict, self.res.conflict_events = stats[2], stats[3]
        return self.res

    def _in_flight(self, kind, idx):
        n = 0
        for (_, k, i) in self.arrivals:
            if k == kind and i == idx:
                n += 1
        return n

    # -- functional data path -------------------------------------------------

    def _fire_functional(self, f):
        s = self.s
        k_blk = f % s.kb_n
        block = f // s.kb_n
        a_rows = [self.in_fifo[c].popleft() for c in range(8)]
        a_block = _unpack_words(np.array(a_rows, dtype=np.uint64))
        b_words = self.w_fifo.popleft()
        b_bytes = b_words.view(np.int8).reshape(-1)
        if s.w_xpose:
            b_bytes = transpose8x8(b_bytes)
        b_block = b_bytes.reshape(8, 8)
        preload = None
        if s.preload and k_blk == 0:
            words = [self.preload_vals.pop((w % 4, block * 8 + w // 4))
                     for w in range(32)]
            raw = np.array(words, dtype=np.uint64).view("<i4")
            preload = raw.reshape(8, 8).astype(np.int32)
        array_fire(self.mac, FireInput(a_block=a_block, b_block=b_block,
                                       preload=preload))

    def _handoff(self, t, block_idx):
        """Move the completed block into the drain unit's schedule."""
        s = self.s
        words = s.out_words[block_idx]
        data = [None] * len(words)
        if self.functional:
            acc = array_drain(self.mac)
            if s.out_is_spill:
                data = acc.astype("<i4").reshape(-1).view(np.uint64).tolist()
            else:
                unit = SimdUnit(self.lanes)
                q, _ = unit.drain_block(acc.reshape(-1), self.quant)
                data = _pack_rows(q.reshape(8, 8)).tolist()
        if s.out_is_spill:
            emit = [t + 1 + w // 4 for w in range(len(words))]
        elif self.lanes == 64:
            emit = [t + 1] * len(words)
        else:
            emit = [t + 1 + w for w in range(len(words))]
        for w, addr in enumerate(words):
            self.drain_words.append((emit[w], w % 4, addr, data[w]))


# ---------------------------------------------------------------------------
# vectorized functional tile execution (bit-identical to the per-fire path)


def _gather_words(mem, addrs: np.ndarray) -> np.ndarray:
    dom = mem.domain_of(int(addrs.flat[0]))
    return dom.words[addrs - dom.base]


def _scatter_words(mem, addrs: np.ndarray, words: np.ndarray) -> None:
    dom = mem.domain_of(int(addrs.flat[0]))
    dom.words[addrs - dom.base] = words


def run_tile_functional_fast(mem, lt: LayerTiling, s: TileStreams,
                             quant: QuantParams) -> None:
    """Execute one tile's data path with vectorized numpy.

    Produces bit-identical memory contents to the per-fire cycle simulation:
    same operand gathers through the same address streams, the same int32
    wraparound accumulation, and the same requantization."""
    mb_n, nb_n, kb_n = s.mb_n, s.nb_n, s.kb_n
    # A: per channel r, the (mb, kb) slice of the stream (nb == 0)
    idx = (np.arange(mb_n, dtype=np.int64)[:, None] * (nb_n * kb_n)
           + np.arange(kb_n, dtype=np.int64)[None, :]).reshape(-1)
    a_pad = np.empty((mb_n * 8, kb_n * 8), dtype=np.int8)
    for r in range(8):
        addrs = s.in_addr[r][idx]
        rows = _unpack_words(_gather_words(mem, addrs))  # (mb*kb, 8)
        a_pad[r::8] = rows.reshape(mb_n, kb_n, 8).reshape(mb_n, kb_n * 8)
    # B: unit addresses from the mb == 0 slice of the weight stream
    w_units = s.w_addr[:nb_n * kb_n].reshape(nb_n, kb_n)
    w_words = (w_units[:, :, None] + np.arange(8, dtype=np.int64)).reshape(-1)
    blocks = _unpack_words(_gather_words(mem, w_words)).reshape(nb_n, kb_n, 8, 8)
    if s.w_xpose:
        blocks = blocks.transpose(0, 1, 3, 2)
    b_pad = blocks.transpose(1, 2, 0, 3).reshape(kb_n * 8, nb_n * 8)
    acc = (a_pad.astype(np.float64) @ b_pad.astype(np.float64)).astype(
        np.int64).astype(np.int32)
    if s.preload:
        pre_addrs = (s.psum_base
                     + np.arange(mb_n * nb_n, dtype=np.int64)[:, None] * 32
                     + np.arange(32, dtype=np.int64)).reshape(-1)
        pre = _gather_words(mem, pre_addrs).view("<i4").astype(np.int32)
        acc += pre.reshape(mb_n, nb_n, 8, 8).transpose(0, 2, 1, 3).reshape(acc.shape)
    out_addrs = np.array(s.out_words, dtype=np.int64).reshape(-1)
    if s.out_is_spill:
        raw = acc.reshape(mb_n, 8, nb_n, 8).transpose(0, 2, 1, 3)
        words = raw.astype("<i4").reshape(-1).view(np.uint64)
    else:
        q = quantize_block(acc, quant)
        words = _pack_rows(q.reshape(mb_n, 8, nb_n, 8).transpose(0, 2, 1, 3)
                           .reshape(-1, 8))
    _scatter_words(mem, out_addrs, words)


# ---------------------------------------------------------------------------
# reports


@dataclass
class LayerReport:
    index: int
    name: str
    kind: str
    m: int = 0
    k: int = 0
    n: int = 0
    useful_macs: int = 0
    fires: int = 0               # ideal fire cycles within tiled blocks
    compute_cycles: int = 0
    stall_fifo: int = 0
    stall_drain: int = 0
    stall_conflict: int = 0
    conflict_events: int = 0
    dma_in_cycles: int = 0
    dma_out_cycles: int = 0
    dma_in_bytes: int = 0
    dma_out_bytes: int = 0
    reshuffle_cycles: int = 0
    spatial_util: float = 1.0          # analytic, from the tiling
    spatial_util_measured: float = 1.0  # useful MACs / (512 * fire cycles)
    temporal_util: float = 1.0
    total_cycles: int = 0

    def row(self):
        return [self.index, self.name, self.kind, self.m, self.k, self.n,
                self.fires, self.compute_cycles, self.stall_fifo,
                self.stall_drain, self.stall_conflict, self.dma_in_cycles,
                self.dma_out_cycles, self.dma_in_bytes, self.dma_out_bytes,
                f"{self.spatial_util:.6f}", f"{self.temporal_util:.6f}",
                self.total_cycles]


LAYER_CSV_HEADER = [
    "index", "name", "kind", "m", "k", "n", "ideal_cycles", "compute_cycles",
    "stall_fifo", "stall_drain", "stall_conflict", "dma_in_cycles",
    "dma_out_cycles", "dma_in_bytes", "dma_out_bytes", "spatial_util",
    "temporal_util", "total_cycles",
]


def _geomean(vals):
    vals = [v for v in vals if v > 0]
    if not vals:
        return 1.0
    return math.exp(sum(math.log(v) for v in vals) / len(vals))


@dataclass
class SimReport:
    network: str
    seed: int
    config: dict
    layers: list = field(default_factory=list)
    functional_checked: bool = False

    @property
    def gemm_layers(self):
        return [l for l in self.layers if l.kind != "maxpool"]

    @property
    def total_latency(self) -> int:
        return sum(l.total_cycles for l in self.layers)

    @property
    def total_compute(self) -> int:
        return sum(l.compute_cycles for l in self.layers)

    @property
    def total_ideal(self) -> int:
        return sum(l.fires for l in self.layers)

    @property
    def total_dma_cycles(self) -> int:
        return sum(l.dma_in_cycles + l.dma_out_cycles for l in self.layers)

    @property
    def temporal_util_overall(self) -> float:
        g = self.gemm_layers
        return temporal_utilization(sum(l.fires for l in g),
                                    sum(l.compute_cycles for l in g))

    @property
    def geomean_temporal(self) -> float:
        return _geomean([l.temporal_util for l in self.gemm_layers])

    @property
    def spatial_util_mac_weighted(self) -> float:
        g = self.gemm_layers
        slots = sum(512 * l.fires for l in g)
        return sum(l.useful_macs for l in g) / slots if slots else 1.0

    @property
    def spatial_util_cycle_weighted(self) -> float:
        g = self.gemm_layers
        cyc = sum(l.compute_cycles for l in g)
        if not cyc:
            return 1.0
        return sum(l.spatial_util * l.compute_cycles for l in g) / cyc

    @property
    def geomean_spatial(self) -> float:
        return _geomean([l.spatial_util for l in self.gemm_layers])

    def summary(self) -> dict:
        return {
            "network": self.network,
            "seed": self.seed,
            "total_latency_cycles": self.total_latency,
            "total_compute_cycles": self.total_compute,
            "total_ideal_cycles": self.total_ideal,
            "total_dma_cycles": self.total_dma_cycles,
            "dma_in_bytes": sum(l.dma_in_bytes for l in self.layers),
            "dma_out_bytes": sum(l.dma_out_bytes for l in self.layers),
            "temporal_utilization": self.temporal_util_overall,
            "geomean_temporal_utilization": self.geomean_temporal,
            "spatial_utilization_mac_weighted": self.spatial_util_mac_weighted,
            "spatial_utilization_cycle_weighted": self.spatial_util_cycle_weighted,
            "geomean_spatial_utilization": self.geomean_spatial,
            "functional_checked": self.functional_checked,
        }

    def to_json(self) -> str:
        doc = {"summary": self.summary(), "config": self.config,
               "layers": [dict(zip(LAYER_CSV_HEADER, l.row())) for l in self.layers]}
        return json.dumps(doc, indent=2, sort_keys=True)

    def csv_rows(self):
        yield LAYER_CSV_HEADER
        for l in self.layers:
            yield [str(x) for x in l.row()]


def compare(a: SimReport, b: SimReport) -> dict:
    """Per-layer and geomean ratios between two runs of the same workload."""
    if a.network != b.network or len(a.layers) != len(b.layers):
        raise ValueError("compare() needs two reports of the same workload")
    rows = []
    for la, lb in zip(a.layers, b.layers):
        rows.append({
            "name": la.name,
            "spatial_ratio": la.spatial_util / lb.spatial_util if lb.spatial_util else 1.0,
            "temporal_ratio": la.temporal_util / lb.temporal_util if lb.temporal_util else 1.0,
            "latency_ratio": lb.total_cycles / la.total_cycles if la.total_cycles else 1.0,
        })
    return {
        "layers": rows,
        "spatial_ratio_geomean": _geomean([r["spatial_ratio"] for r in rows]),
        "temporal_ratio_geomean": _geomean([r["temporal_ratio"] for r in rows]),
        "latency_ratio_geomean": _geomean([r["latency_ratio"] for r in rows]),
        "total_latency_ratio": (b.total_latency / a.total_latency
                                if a.total_latency else 1.0),
        "temporal_overall_ratio": (a.temporal_util_overall / b.temporal_util_overall
                                   if b.temporal_util_overall else 1.0),
    }


# ---------------------------------------------------------------------------
# engine


class Engine:
    """One simulation instance: strictly sequential, deterministic.

    functional: None (timing only), "fast" (vectorized data path), or
    "cycle" (data flows through the per-fire cycle loop; small scale).
    Functional runs verify end-of-layer memory against the independent
    oracle bit-for-bit and raise FunctionalMismatch on any difference.
    """

    def __init__(self, cfg: SimConfig, functional=None, check: bool = True,
                 trace=None):
        errs = validate(cfg)
        if errs:
            raise SimulationError("invalid config: " + "; ".join(errs))
        if functional not in (None, "fast", "cycle"):
            raise ValueError(f"bad functional mode {functional!r}")
        self.cfg = cfg
        self.functional = functional
        self.check = check and functional is not None
        self.trace = trace
        self._tile_cache: dict = {}
        self._cfg_key = cfg.key()
        self.standard = (cfg.array.mu, cfg.array.ku, cfg.array.nu) == (8, 8, 8)

    # -- tensor store ----------------------------------------------------------

    def _make_store(self, net: Network):
        self._values: dict = {}      # layer idx -> output matrix (int8)
        self._tensors: dict = {}     # offchip key -> value array
        self._net = net

    def _offchip(self, key: str, kind: str, layer) -> np.ndarray:
        """Synthetic (or round-tripped) off-chip data for an operand."""
        if key.startswith("L") and key.endswith(".out"):
            return self._values[int(key[1:-4])]
        if key in self._tensors:
            return self._tensors[key]
        seed = self.cfg.seed
        if kind == "fmap":
            c = layer.op
            raw = tensor_data(key, (c.h, c.w, c.c), seed)
            val = np.zeros((c.h, c.w, c.c8), dtype=np.int8)
            val[:, :, :c.c] = raw
        elif kind == "pool_fmap":
            p = layer.op
            raw = tensor_data(key, (p.h, p.w, p.c), seed)
            val = np.zeros((p.h, p.w, ceil8(p.c)), dtype=np.int8)
            val[:, :, :p.c] = raw
        elif kind == "conv_weight":
            c = layer.op
            raw = tensor_data(key, (c.fy, c.fx, c.c, c.oc), seed)
            full = np.zeros((c.c8 // 8, c.fy, c.fx, 8, c.oc), dtype=np.int8)
            for cb in range(c.c8 // 8):
                lo, hi = cb * 8, min(c.c, cb * 8 + 8)
                if hi > lo:
                    full[cb, :, :, :hi - lo] = raw[:, :, lo:hi].transpose(0, 1, 3, 2) \
                        .transpose(0, 1, 2, 3)
                    full[cb, :, :, :hi - lo, :] = raw[:, :, lo:hi, :]
            val = full.reshape(-1, c.oc)
        else:
            g = layer.gemm_view()
            shape = (g.m, g.k) if kind == "input" else (g.k, g.n)
            val = tensor_data(key, shape, seed)
        self._tensors[key] = val
        return val

    def _input_value(self, lt: LayerTiling, layer):
        ref = layer.input
        if ref.kind == "layer":
            val = self._values[ref.layer]
        else:
            if lt.kind == "conv2d":
                return self._offchip(ref.name, "fmap", layer)
            if lt.kind == "maxpool":
                return self._offchip(ref.name, "pool_fmap", layer)
            return self._offchip(ref.name, "input", layer)
        if lt.kind == "gemm":
            return val
        # chained fmap: matrix (pixels, channels) -> (h, w, c8)
        op = layer.op
        h, w = (op.h, op.w)
        c8 = ceil8(val.shape[1])
        fmap = np.zeros((h, w, c8), dtype=np.int8)
        fmap[:, :, :val.shape[1]] = val.reshape(h, w, -1)
        return fmap

    def _weight_value(self, lt: LayerTiling, layer):
        ref = layer.weight
        if ref.kind == "layer":
            return self._values[ref.layer]
        if lt.kind == "conv2d":
            return self._offchip(ref.name, "conv_weight", layer)
        return self._offchip(ref.name, "weight", layer)

    # -- main entry ------------------------------------------------------------

    def run(self, net: Network) -> SimReport:
        sched = plan_network(net, self.cfg)
        plan = allocate(sched, self.cfg.memory)
        self.bases = {name: r.base for name, r in plan.regions.items()}
        self.mem = ScratchpadMemory(self.cfg)
        self._make_store(net)
        report = SimReport(network=net.name, seed=self.cfg.seed,
                           config=self.cfg.echo(),
                           functional_checked=self.check)
        for lt in sched.layers:
            layer = net.layers[lt.index]
            if lt.kind == "maxpool":
                rep = self._run_maxpool(lt, layer)
            else:
                rep = self._run_gemm_layer(lt, layer)
            rep.total_cycles = (rep.compute_cycles + rep.dma_in_cycles
                                + rep.dma_out_cycles + rep.reshuffle_cycles)
            report.layers.append(rep)
        return report

    # -- GEMM / conv layers -----------------------------------------------------

    def _run_gemm_layer(self, lt: LayerTiling, layer) -> LayerReport:
        cfg = self.cfg
        g = lt.gemm
        rep = LayerReport(index=lt.index, name=lt.name, kind=lt.kind,
                          m=g.m, k=g.k, n=g.n, useful_macs=lt.useful_macs)
        rep.fires = lt.fires()
        rep.spatial_util = lt.spatial_utilization()
        functional = self.functional is not None and self.standard
        in_val = w_val = None
        if functional:
            in_val = self._input_value(lt, layer)
            w_val = self._weight_value(lt, layer)
            self._stage_resident_operands(lt, layer, in_val, w_val)
        # one-shot loads of pinned resident operands
        for nbytes in (lt.input_load_bytes, lt.weight_load_bytes):
            if nbytes:
                rep.dma_in_cycles += dma_cycles(nbytes, cfg.dma)
                rep.dma_in_bytes += nbytes
        if lt.reshuffle_bytes:
            rep.reshuffle_cycles = reshuffle_cycles(lt.reshuffle_bytes)
        out_rows, out_cols = layer.out_matrix_dims()
        out_val = np.zeros((out_rows, out_cols), dtype=np.int8) if functional else None
        for t in lt.tiles():
            self._dma_in_tile(lt, layer, t, rep, in_val, w_val, functional)
            self._compute_tile(lt, t, layer.quant, rep, functional)
            if t.store_output:
                if functional and not lt.output_resident:
                    self._capture_tile_output(lt, t, out_val)
                if t.dma_out_bytes:
                    rep.dma_out_cycles += dma_cycles(t.dma_out_bytes, cfg.dma)
                    rep.dma_out_bytes += t.dma_out_bytes
        if functional and lt.output_resident:
            out_val[:, :] = self._capture_resident_output(lt, out_rows, out_cols)
        if functional:
            self._values[lt.index] = out_val
            if self.check:
                self._check_layer(lt, layer, in_val, w_val, out_val)
        if rep.fires:
            rep.spatial_util_measured = lt.useful_macs / (512 * rep.fires)
        rep.temporal_util = temporal_utilization(rep.fires, rep.compute_cycles)
        return rep

    def _stage_resident_operands(self, lt: LayerTiling, layer, in_val, w_val):
        """Write pinned/reshuffled resident operands into their regions."""
        if lt.input_load_bytes and lt.input_resident:
            pack_blocked(self.mem, self.bases[lt.input_region], in_val,
                         lt.input_pitch_kb)
        if lt.weight_load_bytes and lt.weight_resident:
            pack_weight_kmajor(self.mem, self.bases[lt.weight_region], w_val,
                               ceil8(lt.gemm.k) // 8)
        if lt.reshuffle_bytes and lt.conv is not None:
            pack_c8hwc8(self.mem, self.bases[lt.input_region], in_val,
                        lt.conv.pad)

    def _dma_in_tile(self, lt, layer, t: TileExec, rep, in_val, w_val, functional):
        cfg = self.cfg
        if t.load_input:
            nbytes = lt._input_tile_bytes(t.mi, t.ki)
            rep.dma_in_cycles += dma_cycles(nbytes, cfg.dma)
            rep.dma_in_bytes += nbytes
            if functional:
                base = self.bases[lt.input_region]
                if lt.conv is not None:
                    c = lt.conv
                    row0 = sum(lt.row_sizes[:t.mi])
                    rows_in = min((lt.row_sizes[t.mi] - 1) * c.stride + c.fy,
                                  c.h + 2 * c.pad)
                    kg = c.fy * c.fx * 8
                    cb0 = t.k0 // kg
                    cbn = math.ceil(t.tk / kg)
                    hp, wp = c.h + 2 * c.pad, c.w + 2 * c.pad
                    padded = np.zeros((hp, wp, in_val.shape[2]), dtype=np.int8)
                    padded[c.pad:c.pad + c.h, c.pad:c.pad + c.w] = in_val
                    r0 = row0 * c.stride
                    stripe = padded[r0:r0 + rows_in, :, cb0 * 8:(cb0 + cbn) * 8]
                    words = _pack_rows(
                        stripe.reshape(rows_in, wp, cbn, 8)
                        .transpose(2, 0, 1, 3).reshape(-1, 8))
                    self.mem.write_words(base, words)
                else:
                    tile = in_val[t.m0:t.m0 + t.tm, t.k0:t.k0 + t.tk]
                    pack_blocked(self.mem, base, tile, lt.input_pitch_kb)
        if t.load_weight:
            nbytes = t.tk * t.tn
            rep.dma_in_cycles += dma_cycles(nbytes, cfg.dma)
            rep.dma_in_bytes += nbytes
            if functional:
                tile = w_val[t.k0:t.k0 + t.tk, t.n0:t.n0 + t.tn] \
                    if not lt.weight_xpose else \
                    w_val[t.n0:t.n0 + t.tn, t.k0:t.k0 + t.tk]
                if lt.weight_xpose:
                    # off-chip transposed weights are stored as written by the
                    # producer; the streamer transposer handles the rest
                    tile = w_val[t.n0:t.n0 + t.tn, t.k0:t.k0 + t.tk].T
                pack_weight_kmajor(self.mem, self.bases[lt.weight_region],
                                   tile, lt.weight_snb)

    def _compute_tile(self, lt, t: TileExec, quant, rep, functional):
        if not self.standard:
            # non-(8,8,8) geometries: analytic timing (spatial ablations)
            a = self.cfg.array
            fires = (math.ceil(t.tm / a.mu) * math.ceil(t.tk / a.ku)
                     * math.ceil(t.tn / a.nu))
            rep.compute_cycles += fires
            return
        streams = build_tile_streams(lt, t, self.bases)
        if functional and self.functional == "cycle":
            self.mem.reset_arbiter()
            sim = _TileCycleSim(self.cfg, self.mem, _listify(streams), lt, quant,
                                functional=True, trace=self.trace)
            res = sim.run()
        else:
            if functional:
                run_tile_functional_fast(self.mem, lt, streams, quant)
            key = make_tile_key(lt, t, self.bases, self._cfg_key)
            res = self._tile_cache.get(key)
            if res is None:
                self.mem.reset_arbiter()
                sim = _TileCycleSim(self.cfg, self.mem, _listify(streams), lt,
                                    quant, functional=False, trace=self.trace)
                res = sim.run()
                self._tile_cache[key] = res
        rep.compute_cycles += res.cycles
        rep.stall_fifo += res.stall_fifo
        rep.stall_drain += res.stall_drain
        rep.stall_conflict += res.stall_conflict
        rep.conflict_events += res.conflict_events
        if res.fires != streams.fires:
            raise SimulationError("fire count mismatch (internal)")

    def _capture_tile_output(self, lt, t: TileExec, out_val):
        base = self.bases[lt.output_region]
        if lt.conv is not None:
            rows = lt.row_sizes[t.mi]
            gpr = math.ceil(lt.conv.ow / 8)
            mat = unpack_blocked(self.mem, base, rows * gpr * 8, t.tn,
                                 lt.output_pitch_nb)
            mat = mat.reshape(rows, gpr * 8, t.tn)[:, :lt.conv.ow, :]
            row0 = sum(lt.row_sizes[:t.mi])
            out_val[row0 * lt.conv.ow:(row0 + rows) * lt.conv.ow,
                    t.n0:t.n0 + t.tn] = mat.reshape(rows * lt.conv.ow, t.tn)
        else:
            mat = unpack_blocked(self.mem, base, t.tm, t.tn, lt.output_pitch_nb)
            out_val[t.m0:t.m0 + t.tm, t.n0:t.n0 + t.tn] = mat

    def _capture_resident_output(self, lt, out_rows, out_cols):
        base = self.bases[lt.output_region]
        if lt.conv is not None:
            c = lt.conv
            gpr = math.ceil(c.ow / 8)
            mat = unpack_blocked(self.mem, base, c.oh * gpr * 8, out_cols,
                                 lt.output_pitch_nb)
            mat = mat.reshape(c.oh, gpr * 8, out_cols)[:, :c.ow, :]
            return mat.reshape(c.oh * c.ow, out_cols)
        return unpack_blocked(self.mem, base, out_rows, out_cols,
                              lt.output_pitch_nb)

    def _check_layer(self, lt, layer, in_val, w_val, out_val):
        if lt.kind == "conv2d":
            acc = reference.ref_conv2d(in_val, w_val, layer.op)
        else:
            a = in_val
            b = w_val.T if layer.weight.transpose else w_val
            acc = reference.ref_gemm(a, b)
        q = layer.quant
        expect = reference.ref_quantize(acc, q.multiplier, q.shift,
                                        q.zero_point, q.relu)
        if not np.array_equal(expect, out_val):
            bad = int(np.count_nonzero(expect != out_val))
            raise FunctionalMismatch(
                f"layer {lt.name!r}: {bad}/{expect.size} output bytes differ "
                f"from the oracle")

    # -- maxpool layers ---------------------------------------------------------

    def _run_maxpool(self, lt: LayerTiling, layer) -> LayerReport:
        cfg = self.cfg
        p = lt.pool
        rep = LayerReport(index=lt.index, name=lt.name, kind="maxpool")
        functional = self.functional is not None
        fmap = self._input_value(lt, layer) if functional else None
        c8 = ceil8(p.c)
        pooled_val = np.zeros((p.oh * p.ow, p.c), dtype=np.int8) if functional else None
        row0 = 0
        base_in = self.bases[lt.input_region]
        base_out = self.bases[lt.output_region]
        for rows in lt.row_sizes:
            rows_in = min((rows - 1) * p.stride + p.window, p.h)
            in_bytes = rows_in * p.w * p.c
            out_bytes = rows * p.ow * p.c
            rep.dma_in_cycles += dma_cycles(in_bytes, cfg.dma)
            rep.dma_out_cycles += dma_cycles(out_bytes, cfg.dma)
            rep.dma_in_bytes += in_bytes
            rep.dma_out_bytes += out_bytes
            comparisons = rows * p.ow * c8 * (p.window ** 2 - 1)
            rep.compute_cycles += math.ceil(comparisons / 8)
            if functional:
                r0 = row0 * p.stride
                stripe = fmap[r0:r0 + rows_in]
                words = _pack_rows(stripe.reshape(rows_in, p.w, c8 // 8, 8)
                                   .transpose(2, 0, 1, 3).reshape(-1, 8))
                self.mem.write_words(base_in, words)
                got = _unpack_words(
                    self.mem.read_bytes(base_in, len(words)).view(np.uint64)
                    .reshape(-1))
                got = got.reshape(c8 // 8, rows_in, p.w, 8).transpose(1, 2, 0, 3) \
                    .reshape(rows_in, p.w, c8)
                pooled, _ = maxpool(got, p.window, p.stride)
                owords = _pack_rows(pooled.reshape(rows, p.ow, c8 // 8, 8)
                                    .transpose(2, 0, 1, 3).reshape(-1, 8))
                self.mem.write_words(base_out, owords)
                back = _unpack_words(
                    self.mem.read_bytes(base_out, len(owords)).view(np.uint64)
                    .reshape(-1))
                back = back.reshape(c8 // 8, rows, p.ow, 8).transpose(1, 2, 0, 3) \
                    .reshape(rows, p.ow, c8)
                pooled_val[row0 * p.ow:(row0 + rows) * p.ow] = \
                    back[:, :, :p.c].reshape(rows * p.ow, p.c)
            row0 += rows
        if functional:
            self._values[lt.index] = pooled_val
            if self.check:
                full = fmap[:, :, :p.c] if fmap.shape[2] > p.c else fmap
                expect = reference.ref_maxpool(full[:, :, :p.c], p)
                if not np.array_equal(expect.reshape(-1, p.c), pooled_val):
                    raise FunctionalMismatch(f"maxpool layer {lt.name!r} differs "
                                             f"from the oracle")
        return rep


def _listify(s: TileStreams) -> TileStreams:
    """Convert stream arrays to plain lists for the hot cycle loop."""
    s.in_addr = [a.tolist() if not isinstance(a, list) else a for a in s.in_addr]
    if not isinstance(s.w_addr, list):
        s.w_addr = s.w_addr.tolist()
    return s


def run(network: Network, cfg: SimConfig, *, functional=None, check=True,
        trace=None) -> SimReport:
    """Simulate one network under one config; returns the SimReport."""
    return Engine(cfg, functional=functional, check=check, trace=trace).run(network)
