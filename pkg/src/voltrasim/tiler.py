"""Layer-wise tiling under memory constraints, dynamic region allocation for
the shared scratchpad, separated-buffer constraint enforcement, DMA traffic
accounting, and the MHA access-count analysis.

Tiling is greedy and K-first: tk covers the full reduction whenever it fits
(output-stationary preference: partial sums then never leave the array's
accumulators), otherwise the largest multiple of 8 that fits; tm and tn then
grow alternately in multiples of 8.  K is always the innermost tile loop, so
psum spills between K tiles stay on-chip in the psum region; they cost
compute-phase cycles, not DMA.

In shared mode the planner keeps chain intermediates, reused off-chip inputs
and reused named weights resident on-chip when capacity allows, aliasing a
consumer's operand region to its producer's output region (PDMA).  In
separated mode every chained intermediate round-trips off-chip and each
operand tile must fit its own fixed buffer; the 64-byte zero region is carved
out of the input buffer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .arch import SimConfig
from .memory import AllocationPlan, Region
from .workload import (Conv2dShape, GemmShape, LayerOp, MaxPoolShape, Network,
                       ceil8)

ZERO_WORDS = 8          # 64-byte all-zero region, part of every plan
RESERVE_BYTES = 32768   # streaming headroom required before pinning a tensor


class CapacityError(ValueError):
    """Even the minimum (8,8,8) tile does not fit the target memory."""


def footprint(tm: int, tk: int, tn: int) -> int:
    """Per-tile working set in bytes: int8 input and weight tiles, int32
    partial sums, the quantized output tile, plus the 64-byte zero region."""
    if min(tm, tk, tn) < 1:
        raise ValueError("tile dims must be positive")
    return tm * tk + tk * tn + 4 * tm * tn + tm * tn + 64


def _split(total: int, step: int) -> tuple:
    """Cover `total` with tiles of `step`; the last takes the remainder."""
    if total <= step:
        return (total,)
    sizes = [step] * (total // step)
    if total % step:
        sizes.append(total % step)
    return tuple(sizes)


@dataclass
class TileExec:
    """One (m, n, k) tile visit, in execution order."""

    mi: int
    ni: int
    ki: int
    m0: int
    n0: int
    k0: int
    tm: int
    tn: int
    tk: int
    load_input: bool
    load_weight: bool
    store_output: bool
    preload_psum: bool
    spill_psum: bool
    dma_in_bytes: int
    dma_out_bytes: int
    in_transfers: int
    out_transfers: int


@dataclass
class LayerTiling:
    index: int
    name: str
    kind: str                    # gemm | conv2d | maxpool
    gemm: Optional[GemmShape]    # datapath GEMM view (conv k uses padded c8)
    conv: Optional[Conv2dShape]
    pool: Optional[MaxPoolShape]
    useful_macs: int             # logical MACs (conv counts c, not c8)
    tm: int = 8
    tk: int = 8
    tn: int = 8
    order: str = "m_outer"       # m_outer: loop (m, n, k); n_outer: loop (n, m, k)
    m_sizes: tuple = ()          # logical extents per tile (conv: rows*ow)
    k_sizes: tuple = ()
    n_sizes: tuple = ()
    row_sizes: tuple = ()        # conv only: output rows per m tile
    input_resident: bool = False
    weight_resident: bool = False
    output_resident: bool = False
    input_region: str = ""
    weight_region: str = ""
    psum_region: str = ""
    output_region: str = ""
    input_pitch_kb: int = 0      # k-blocks per m-block row in the input region
    output_pitch_nb: int = 0     # n-blocks per m-block row in the output region
    weight_skb: int = 1          # weight super-unit strides: unit = kb*skb + nb*snb
    weight_snb: int = 0
    weight_xpose: bool = False
    reshuffle_bytes: int = 0     # on-chip layout conversion before this layer
    input_tensor: str = ""       # off-chip source key (or "" when chained resident)
    weight_tensor: str = ""
    input_load_bytes: int = 0    # one-shot load for pinned operands (first use)
    weight_load_bytes: int = 0
    pool_stripe_rows: int = 0

    # -- derived geometry ---------------------------------------------------

    def m_groups(self, mi: int) -> int:
        """Fire groups along M for tile mi (8 pixels per group, row-aligned
        for convs)."""
        if self.conv is not None:
            return self.row_sizes[mi] * math.ceil(self.conv.ow / 8)
        return math.ceil(self.m_sizes[mi] / 8)

    def fires(self) -> int:
        if self.gemm is None:
            return 0
        total = 0
        for mi in range(len(self.m_sizes)):
            mg = self.m_groups(mi)
            for ns in self.n_sizes:
                for ks in self.k_sizes:
                    total += mg * math.ceil(ks / 8) * math.ceil(ns / 8)
        return total

    def mac_slots(self) -> int:
        return self.fires() * 512

    def spatial_utilization(self) -> float:
        if self.gemm is None:
            return 1.0
        return self.useful_macs / self.mac_slots()

    def tiles(self):
        """Yield TileExec records in visit order (K is always innermost)."""
        if self.gemm is None:
            return
        mt, nt, kt = len(self.m_sizes), len(self.n_sizes), len(self.k_sizes)
        k_off = [sum(self.k_sizes[:i]) for i in range(kt)]
        m_off = [sum(self.m_sizes[:i]) for i in range(mt)]
        n_off = [sum(self.n_sizes[:i]) for i in range(nt)]
        pairs = ([(mi, ni) for mi in range(mt) for ni in range(nt)]
                 if self.order == "m_outer"
                 else [(mi, ni) for ni in range(nt) for mi in range(mt)])
        for mi, ni in pairs:
            for ki in range(kt):
                tm, tn, tk = self.m_sizes[mi], self.n_sizes[ni], self.k_sizes[ki]
                load_in, in_bytes = self._input_load(mi, ni, ki)
                load_w, w_bytes = self._weight_load(mi, ni, ki)
                store = ki == kt - 1 and not self.output_resident
                yield TileExec(
                    mi=mi, ni=ni, ki=ki, m0=m_off[mi], n0=n_off[ni], k0=k_off[ki],
                    tm=tm, tn=tn, tk=tk,
                    load_input=load_in, load_weight=load_w,
                    store_output=ki == kt - 1,
                    preload_psum=ki > 0, spill_psum=ki < kt - 1,
                    dma_in_bytes=in_bytes + w_bytes,
                    dma_out_bytes=tm * tn if store else 0,
                    in_transfers=int(load_in) + int(load_w),
                    out_transfers=int(store))

    def _input_load(self, mi, ni, ki):
        if self.input_resident:
            return False, 0
        # with a single K tile and m_outer order the input tile survives the
        # inner n loop; otherwise it is re-fetched per (n, k) visit
        if self.order == "m_outer" and len(self.k_sizes) == 1 and ni != 0:
            return False, 0
        return True, self._input_tile_bytes(mi, ki)

    def _input_tile_bytes(self, mi, ki):
        if self.conv is not None:
            c = self.conv
            rows_in = min((self.row_sizes[mi] - 1) * c.stride + c.fy, c.h + 2 * c.pad)
            kg = c.fy * c.fx * 8
            chan0 = sum(self.k_sizes[:ki]) // kg * 8
            chans = max(0, min(c.c, chan0 + self.k_sizes[ki] // kg * 8) - chan0)
            return rows_in * c.w * chans
        return self.m_sizes[mi] * self.k_sizes[ki]

    def _weight_load(self, mi, ni, ki):
        if self.weight_resident:
            return False, 0
        if self.order == "n_outer" and len(self.k_sizes) == 1 and mi != 0:
            return False, 0
        return True, self.k_sizes[ki] * self.n_sizes[ni]

    def dma_totals(self):
        inb = outb = tin = tout = spill = 0
        for t in self.tiles():
            inb += t.dma_in_bytes
            outb += t.dma_out_bytes
            tin += t.in_transfers
            tout += t.out_transfers
            if t.spill_psum:
                spill += 4 * ceil8(t.tm) * ceil8(t.tn) * 2  # store + reload
        return inb, outb, tin, tout, spill


@dataclass
class TileSchedule:
    """Per-layer tilings plus the region map for one network under one config."""

    network: str
    mode: str
    layers: list = field(default_factory=list)
    region_words: dict = field(default_factory=dict)   # region -> words
    region_live: dict = field(default_factory=dict)    # region -> (first, last) layer


@dataclass
class TrafficReport:
    per_tile: list = field(default_factory=list)  # (layer, tile#, in_bytes, out_bytes)
    dma_in_bytes: int = 0
    dma_out_bytes: int = 0
    in_transfers: int = 0
    out_transfers: int = 0
    psum_spill_bytes_onchip: int = 0
    reshuffle_bytes: int = 0
    per_operand: dict = field(default_factory=dict)

    @property
    def total_bytes(self) -> int:
        return self.dma_in_bytes + self.dma_out_bytes

    def _bump(self, cls, nbytes):
        self.per_operand[cls] = self.per_operand.get(cls, 0) + nbytes


# ---------------------------------------------------------------------------
# greedy tile-dimension search


def _gemm_tile_dims(g: GemmShape, caps: dict, in_res: bool, w_res: bool,
                    out_res: bool) -> tuple:
    """(tm, tk, tn) for a GEMM layer under shared capacity or separated caps."""
    m8, k8, n8 = ceil8(g.m), ceil8(g.k), ceil8(g.n)
    if "shared" in caps:
        cap = caps["shared"]

        def fits(tm, tk, tn):
            f = ((0 if in_res else tm * tk) + (0 if w_res else tk * tn)
                 + 4 * tm * tn + (0 if out_res else tm * tn) + 64)
            return f <= cap
    else:
        inc, wc, pc, oc = caps["in"], caps["w"], caps["p"], caps["o"]

        def fits(tm, tk, tn):
            return (tm * tk + 64 <= inc and tk * tn <= wc
                    and 4 * tm * tn <= pc and tm * tn <= oc)

    if fits(8, k8, 8):
        tk = k8
    else:
        tk = max((t for t in range(8, k8, 8) if fits(8, t, 8)), default=0)
    if not tk:
        raise CapacityError(
            f"even an (8,8,8) tile of {g} does not fit the target memory")
    tm, tn = 8, 8
    grow_m = grow_n = True
    turn_m = True
    while grow_m or grow_n:
        if turn_m and grow_m:
            if tm + 8 <= m8 and fits(tm + 8, tk, tn):
                tm += 8
            else:
                grow_m = False
        elif not turn_m and grow_n:
            if tn + 8 <= n8 and fits(tm, tk, tn + 8):
                tn += 8
            else:
                grow_n = False
        turn_m = not turn_m
    return tm, tk, tn


def _conv_tile_dims(c: Conv2dShape, n: int, caps: dict, in_res: bool) -> tuple:
    """(rows, tk, tn) for a conv layer; tk in whole channel-block granules
    (one granule = 8 channels across all fy*fx taps)."""
    kg = c.fy * c.fx * 8
    cb = c.c8 // 8
    n8 = ceil8(n)
    wp, hp = c.w + 2 * c.pad, c.h + 2 * c.pad
    ow8 = ceil8(c.ow)

    def in_bytes(rows, kb):
        rows_in = min((rows - 1) * c.stride + c.fy, hp)
        return rows_in * wp * kb * 8

    if "shared" in caps:
        cap = caps["shared"]

        def fits(rows, kb, tn):
            tm = rows * ow8
            f = ((0 if in_res else in_bytes(rows, kb)) + kb * kg * tn
                 + 4 * tm * tn + tm * tn + 64)
            return f <= cap
    else:
        inc, wc, pc, oc = caps["in"], caps["w"], caps["p"], caps["o"]

        def fits(rows, kb, tn):
            tm = rows * ow8
            return (in_bytes(rows, kb) + 64 <= inc and kb * kg * tn <= wc
                    and 4 * tm * tn <= pc and tm * tn <= oc)

    if fits(1, cb, 8):
        kb = cb
    else:
        kb = max((t for t in range(1, cb) if fits(1, t, 8)), default=0)
    if not kb:
        raise CapacityError(f"even a single-row, single-block tile of {c} does not fit")
    rows, tn = 1, 8
    grow_r = grow_n = True
    turn_r = True
    while grow_r or grow_n:
        if turn_r and grow_r:
            if rows + 1 <= c.oh and fits(rows + 1, kb, tn):
                rows += 1
            else:
                grow_r = False
        elif not turn_r and grow_n:
            if tn + 8 <= n8 and fits(rows, kb, tn + 8):
                tn += 8
            else:
                grow_n = False
        turn_r = not turn_r
    return rows, kb * kg, tn


def _pick_order(lt: LayerTiling) -> None:
    """Visit order minimizing DMA bytes + per-transfer overheads."""
    costs = {}
    for order in ("m_outer", "n_outer"):
        lt.order = order
        inb, outb, tin, tout, _ = lt.dma_totals()
        costs[order] = (inb + outb) + (tin + tout) * 800  # 100 cycles at 8 B/cycle
    lt.order = "m_outer" if costs["m_outer"] <= costs["n_outer"] else "n_outer"


# ---------------------------------------------------------------------------
# network planning


class _NeedEvict(Exception):
    def __init__(self, region):
        self.region = region


def _consumers(net: Network) -> dict:
    cons: dict = {}
    for i, layer in enumerate(net.layers):
        for ref in (layer.input, layer.weight):
            if ref is not None and ref.kind == "layer":
                cons.setdefault(ref.layer, []).append(i)
    return cons


def _tensor_uses(net: Network) -> dict:
    uses: dict = {}
    for i, layer in enumerate(net.layers):
        for ref, what in ((layer.input, "in"), (layer.weight, "w")):
            if ref is not None and ref.kind == "offchip":
                uses.setdefault((what, ref.name), []).append(i)
    return uses


def _layer_gemm(layer: LayerOp):
    g = layer.gemm_view()
    if isinstance(layer.op, Conv2dShape):
        c = layer.op
        useful = c.oh * c.ow * c.fy * c.fx * c.c * c.oc
    else:
        useful = g.macs
    return g, useful


def plan_network(net: Network, cfg: SimConfig) -> TileSchedule:
    """Tile every layer and resolve on-chip residency for the whole chain."""
    net.validate()
    total = cfg.memory.total_bytes
    blacklist: set = set()
    for _ in range(4 * len(net.layers) + 8):
        try:
            return _plan_once(net, cfg, total, blacklist)
        except _NeedEvict as ev:
            blacklist.add(ev.region)
    raise CapacityError(f"could not plan {net.name}: residency backoff did not converge")


def _plan_once(net: Network, cfg: SimConfig, total: int, blacklist: set) -> TileSchedule:
    shared = not cfg.is_separated()
    cons = _consumers(net)
    tuses = _tensor_uses(net)
    sched = TileSchedule(network=net.name, mode=cfg.memory_mode)
    sched.region_words["zero"] = ZERO_WORDS
    sched.region_live["zero"] = (0, len(net.layers) - 1)
    resident: dict = {}      # region -> [bytes, last_use_layer]
    out_region_of: dict = {}  # layer idx -> resident output region
    tensor_region: dict = {}  # ("in"|"w", tensor) -> region

    def live_bytes(i):
        return sum(b for b, last in resident.values() if last >= i)

    def drop_dead(i):
        for r in [r for r, (_, last) in resident.items() if last < i]:
            del resident[r]

    def try_pin(region, nbytes, i, last):
        if region in blacklist:
            return False
        if live_bytes(i) + nbytes + RESERVE_BYTES > total:
            return False
        resident[region] = [nbytes, last]
        sched.region_words[region] = nbytes // 8
        sched.region_live[region] = (i, last)
        return True

    for i, layer in enumerate(net.layers):
        drop_dead(i)
        g = useful = None
        if layer.kind != "maxpool":
            g, useful = _layer_gemm(layer)
        lt = LayerTiling(index=i, name=layer.name, kind=layer.kind, gemm=g,
                         conv=layer.op if isinstance(layer.op, Conv2dShape) else None,
                         pool=layer.op if isinstance(layer.op, MaxPoolShape) else None,
                         useful_macs=useful or 0)

        if layer.kind == "maxpool":
            _plan_maxpool(lt, layer, cfg, total - live_bytes(i))
            sched.layers.append(lt)
            _add_stream_regions(sched, lt)
            continue

        kb_full = ceil8(g.k) // 8
        chained_fmap_words = 0

        # --- input operand ---------------------------------------------------
        in_ref = layer.input
        if in_ref.kind == "layer" and shared and in_ref.layer in out_region_of:
            prod_rows, prod_cols = net.layers[in_ref.layer].out_matrix_dims()
            if lt.conv is not None:
                # blocked -> C/8HWC8 conversion through the reshuffler into a
                # fresh fmap region; falls back to a round trip if it cannot fit
                c = lt.conv
                fmap_words = (c.c8 // 8) * (c.h + 2 * c.pad) * (c.w + 2 * c.pad)
                if live_bytes(i) + fmap_words * 8 + RESERVE_BYTES <= total:
                    lt.input_resident = True
                    lt.input_region = f"L{i}.fmap"
                    lt.reshuffle_bytes = prod_rows * ceil8(prod_cols)
                    chained_fmap_words = fmap_words
                    sched.region_words[lt.input_region] = fmap_words
                    sched.region_live[lt.input_region] = (i, i)
            else:
                lt.input_resident = True
                lt.input_region = out_region_of[in_ref.layer]
                lt.input_pitch_kb = ceil8(prod_cols) // 8
        if not lt.input_resident:
            lt.input_tensor = _source_key(net, in_ref)
            if (shared and in_ref.kind == "offchip"
                    and len(tuses.get(("in", in_ref.name), [])) > 1):
                region = f"T.{in_ref.name}"
                if ("in", in_ref.name) in tensor_region:
                    lt.input_resident = True
                    lt.input_region = tensor_region[("in", in_ref.name)]
                    lt.input_pitch_kb = kb_full
                    resident[lt.input_region][1] = max(
                        resident[lt.input_region][1], i)
                elif try_pin(region, ceil8(g.m) * ceil8(g.k), i,
                             max(tuses[("in", in_ref.name)])):
                    tensor_region[("in", in_ref.name)] = region
                    lt.input_resident = True
                    lt.input_region = region
                    lt.input_pitch_kb = kb_full
                    lt.input_load_bytes = g.m * g.k
                    lt.input_tensor = in_ref.name

        # --- weight operand ----------------------------------------------------
        w_ref = layer.weight
        lt.weight_xpose = w_ref.transpose
        if w_ref.kind == "layer" and shared and w_ref.layer in out_region_of:
            prod_cols = net.layers[w_ref.layer].out_matrix_dims()[1]
            pitch_nb = ceil8(prod_cols) // 8
            lt.weight_resident = True
            lt.weight_region = out_region_of[w_ref.layer]
            # producer output blocks are row-major: unit(row_blk, col_blk) =
            # row_blk*pitch + col_blk; transposed reads swap the roles
            if w_ref.transpose:
                lt.weight_skb, lt.weight_snb = 1, pitch_nb
            else:
                lt.weight_skb, lt.weight_snb = pitch_nb, 1
        else:
            lt.weight_tensor = _source_key(net, w_ref)
            if shared and w_ref.kind == "offchip":
                key = ("w", w_ref.name)
                if key in tensor_region:
                    lt.weight_resident = True
                    lt.weight_region = tensor_region[key]
                    lt.weight_skb, lt.weight_snb = 1, kb_full
                    resident[lt.weight_region][1] = max(
                        resident[lt.weight_region][1], i)
                elif (len(tuses.get(key, [])) > 1
                      and try_pin(f"T.{w_ref.name}", ceil8(g.k) * ceil8(g.n), i,
                                  max(tuses[key]))):
                    tensor_region[key] = f"T.{w_ref.name}"
                    lt.weight_resident = True
                    lt.weight_region = f"T.{w_ref.name}"
                    lt.weight_skb, lt.weight_snb = 1, kb_full
                    lt.weight_load_bytes = g.k * g.n

        # --- output residency -----------------------------------------------
        out_rows, out_cols = layer.out_matrix_dims()
        # conv outputs are stored with row-aligned pixel groups (each output
        # row padded to a multiple of 8 pixels); a GEMM consumer can only
        # alias that layout when the padding is vacuous
        if lt.conv is not None:
            out_rows_padded = lt.conv.oh * ceil8(lt.conv.ow)
            alias_ok = all(net.layers[j].kind != "gemm" for j in cons.get(i, [])) \
                or lt.conv.ow % 8 == 0
        else:
            out_rows_padded = ceil8(out_rows)
            alias_ok = True
        if (shared and i in cons and alias_ok
                and try_pin(f"L{i}.out", out_rows_padded * ceil8(out_cols), i,
                            max(cons[i]))):
            out_region_of[i] = f"L{i}.out"
            lt.output_resident = True
            lt.output_region = f"L{i}.out"
            lt.output_pitch_nb = ceil8(out_cols) // 8

        # --- tile dimensions ---------------------------------------------------
        cap = total - live_bytes(i) - chained_fmap_words * 8
        try:
            if shared:
                caps = {"shared": cap}
                if lt.conv is not None:
                    rows, lt.tk, lt.tn = _conv_tile_dims(
                        lt.conv, g.n, caps, lt.input_resident)
                else:
                    lt.tm, lt.tk, lt.tn = _gemm_tile_dims(
                        g, caps, lt.input_resident, lt.weight_resident,
                        lt.output_resident)
            else:
                caps = {"in": cfg.separated.input, "w": cfg.separated.weight,
                        "p": cfg.separated.psum, "o": cfg.separated.output}
                if lt.conv is not None:
                    rows, lt.tk, lt.tn = _conv_tile_dims(lt.conv, g.n, caps, False)
                else:
                    lt.tm, lt.tk, lt.tn = _gemm_tile_dims(g, caps, False, False, False)
        except CapacityError:
            victim = _largest_resident(resident, blacklist)
            if victim is None:
                raise
            raise _NeedEvict(victim)

        if lt.conv is not None:
            lt.row_sizes = _split(lt.conv.oh, rows)
            lt.m_sizes = tuple(r * lt.conv.ow for r in lt.row_sizes)
            lt.tm = rows * ceil8(lt.conv.ow)
        else:
            lt.m_sizes = _split(g.m, lt.tm)
        lt.k_sizes = _split(g.k, lt.tk)
        lt.n_sizes = _split(g.n, lt.tn)

        if not lt.input_resident:
            lt.input_region = f"L{i}.fmap" if lt.conv is not None else f"L{i}.in"
            lt.input_pitch_kb = math.ceil(lt.tk / 8)
        if not lt.weight_resident:
            lt.weight_region = f"L{i}.w"
            lt.weight_skb, lt.weight_snb = 1, math.ceil(lt.tk / 8)
        if not lt.output_resident:
            lt.output_region = f"L{i}.out"
            lt.output_pitch_nb = math.ceil(lt.tn / 8)
        if len(lt.k_sizes) > 1:
            lt.psum_region = f"L{i}.psum"
        _pick_order(lt)
        sched.layers.append(lt)
        _add_stream_regions(sched, lt)
    return sched


def _largest_resident(resident: dict, blacklist: set):
    candidates = [(b, r) for r, (b, _) in resident.items() if r not in blacklist]
    if not candidates:
        return None
    return max(candidates)[1]


def _source_key(net: Network, ref) -> str:
    if ref.kind == "offchip":
        return ref.name
    return f"L{ref.layer}.out"  # round-tripped intermediate


def _add_stream_regions(sched: TileSchedule, lt: LayerTiling) -> None:
    i = lt.index
    words: dict = {}
    if lt.kind == "maxpool":
        c8 = ceil8(lt.pool.c)
        rows_in = min((lt.pool_stripe_rows - 1) * lt.pool.stride + lt.pool.window,
                      lt.pool.h)
        words[lt.input_region] = rows_in * lt.pool.w * c8 // 8
        words[lt.output_region] = max(1, lt.pool_stripe_rows * lt.pool.ow * c8 // 8)
    else:
        if not lt.input_resident:
            if lt.conv is not None:
                c = lt.conv
                rows_in = min((lt.row_sizes[0] - 1) * c.stride + c.fy,
                              c.h + 2 * c.pad)
                words[lt.input_region] = (c.c8 // 8) * rows_in * (c.w + 2 * c.pad)
            else:
                words[lt.input_region] = ceil8(lt.tm) * math.ceil(lt.tk / 8)
        if not lt.weight_resident:
            words[lt.weight_region] = math.ceil(lt.tk / 8) * ceil8(lt.tn)
        if lt.psum_region:
            words[lt.psum_region] = (math.ceil(lt.tm / 8)
                                     * math.ceil(lt.tn / 8) * 32)
        if not lt.output_resident:
            words[lt.output_region] = (math.ceil(lt.tm / 8)
                                       * math.ceil(lt.tn / 8) * 8)
    for r, wds in words.items():
        if r not in sched.region_words:
            sched.region_words[r] = wds
            sched.region_live[r] = (i, i)


def _plan_maxpool(lt: LayerTiling, layer: LayerOp, cfg: SimConfig, cap: int) -> None:
    p = layer.op
    c8 = ceil8(p.c)
    if cfg.is_separated():
        cap = cfg.separated.input

    def stripe_bytes(rows):
        rows_in = min((rows - 1) * p.stride + p.window, p.h)
        return rows_in * p.w * c8 + rows * p.ow * c8 + 64

    if stripe_bytes(1) > cap:
        raise CapacityError(f"maxpool stripe of {layer.name} does not fit")
    rows = 1
    while rows + 1 <= p.oh and stripe_bytes(rows + 1) <= cap:
        rows += 1
    lt.pool_stripe_rows = rows
    lt.row_sizes = _split(p.oh, rows)
    ref = layer.input
    lt.input_tensor = ref.name if ref.kind == "offchip" else f"L{ref.layer}.out"
    lt.input_region = f"L{lt.index}.fmap"
    lt.output_region = f"L{lt.index}.out"


# ---------------------------------------------------------------------------
# spec-surface single-layer entry point

def tile_layer(g: GemmShape, cfg: SimConfig) -> TileSchedule:
    """Tile one stand-alone GEMM layer (all operands off-chip)."""
    from .postproc import IDENTITY_QUANT
    from .workload import OperandRef
    layer = LayerOp("layer0", g, OperandRef.offchip("A"), OperandRef.offchip("B"),
                    IDENTITY_QUANT)
    return plan_network(Network("single", [layer]), cfg)


def allocate(schedule: TileSchedule, memgeom) -> AllocationPlan:
    """Place every region; first-fit reusing the space of dead regions.

    Returns the union plan (addresses are shared only across disjoint live
    ranges); each layer's live view is verified pairwise-disjoint.
    """
    total_words = memgeom.total_words if hasattr(memgeom, "total_words") else int(memgeom)
    placed = {"zero": Region("zero", 0, ZERO_WORDS)}
    order = sorted((r for r in schedule.region_words if r != "zero"),
                   key=lambda r: (schedule.region_live[r][0],
                                  -schedule.region_words[r], r))
    for name in order:
        words = max(8, ceil8(schedule.region_words[name]))
        first, last = schedule.region_live[name]
        taken = sorted(
            (placed[o].base, placed[o].end) for o in placed
            if not (schedule.region_live.get(o, (0, 1 << 60))[1] < first
                    or last < schedule.region_live.get(o, (0, 1 << 60))[0]))
        base = ZERO_WORDS
        for lo, hi in taken:
            if base + words <= lo:
                break
            base = max(base, hi)
        if base + words > total_words:
            raise CapacityError(
                f"region {name!r} ({words} words) does not fit at layer {first}")
        placed[name] = Region(name, base, words)
    plan = AllocationPlan(total_words)
    plan.regions.update(placed)
    for i in range(len(schedule.layers)):
        live = AllocationPlan(total_words)
        for name, region in placed.items():
            first, last = schedule.region_live[name]
            if first <= i <= last:
                live.add(name, region.base, region.length)
    return plan


def dma_traffic(schedule: TileSchedule) -> TrafficReport:
    """Bytes actually moved by the DMA, tile by tile (reload factors included)."""
    rep = TrafficReport()
    for lt in schedule.layers:
        if lt.kind == "maxpool":
            p = lt.pool
            for ri, rows in enumerate(lt.row_sizes):
                rows_in = min((rows - 1) * p.stride + p.window, p.h)
                inb, outb = rows_in * p.w * p.c, rows * p.ow * p.c
                rep.per_tile.append((lt.index, ri, inb, outb))
                rep.dma_in_bytes += inb
                rep.dma_out_bytes += outb
                rep.in_transfers += 1
                rep.out_transfers += 1
                rep._bump("input", inb)
                rep._bump("output", outb)
            continue
        for pinned, cls in ((lt.input_load_bytes, "input"),
                            (lt.weight_load_bytes, "weight")):
            if pinned:
                rep.per_tile.append((lt.index, -1, pinned, 0))
                rep.dma_in_bytes += pinned
                rep.in_transfers += 1
                rep._bump(cls, pinned)
        for ti, t in enumerate(lt.tiles()):
            rep.per_tile.append((lt.index, ti, t.dma_in_bytes, t.dma_out_bytes))
            rep.dma_in_bytes += t.dma_in_bytes
            rep.dma_out_bytes += t.dma_out_bytes
            rep.in_transfers += t.in_transfers
            rep.out_transfers += t.out_transfers
            if t.load_weight:
                rep._bump("weight", t.tk * t.tn)
                rep._bump("input", t.dma_in_bytes - t.tk * t.tn)
            else:
                rep._bump("input", t.dma_in_bytes)
            rep._bump("output", t.dma_out_bytes)
            if t.spill_psum:
                rep.psum_spill_bytes_onchip += 4 * ceil8(t.tm) * ceil8(t.tn) * 2
        rep.reshuffle_bytes += lt.reshuffle_bytes
    rep.per_operand.setdefault("psum", 0)
    return rep


# ---------------------------------------------------------------------------
# MHA access-count analysis (dynamic allocation vs separated buffers)

def access_counts(net: Network, cfg: SimConfig) -> int:
    """Total element touches at the memory boundary.

    Convention (documented in README): one read per consuming layer per
    operand element, one write per produced element, one DMA-in write per
    layer that sources an operand off-chip (once total for pinned resident
    tensors), one DMA-out read per tensor leaving the chip.  Off-chip round
    trips therefore count store + reload; intra-layer tiling re-transfers are
    a latency effect (see dma_traffic) and are excluded.
    """
    sched = plan_network(net, cfg)
    total = 0
    for lt in sched.layers:
        g = lt.gemm
        if g is None:
            continue
        total += g.m * g.k + g.k * g.n   # streamer reads
        total += g.m * g.n               # streamer writes
        if lt.input_resident:
            total += lt.input_load_bytes  # pinned: first DMA-in only
        else:
            total += g.m * g.k
        if lt.weight_resident:
            total += lt.weight_load_bytes
        else:
            total += g.k * g.n
        if not lt.output_resident:
            total += g.m * g.n           # DMA-out read
    return total


def mha_access_compare(tokens: int = 64, d_model: int = 768, d_head: int = 64):
    """(shared count, separated count, saving %) for the MHA GEMM chain."""
    from .arch import default_config
    from .workload import mha_sequence
    net = mha_sequence(tokens, d_model, d_head)
    sep_cfg = default_config()
    sep_cfg.memory_mode = "separated"
    shared = access_counts(net, default_config())
    separated = access_counts(net, sep_cfg)
    saving = 100.0 * (separated - shared) / separated
    return shared, separated, saving
