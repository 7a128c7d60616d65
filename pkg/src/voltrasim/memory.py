"""Multi-bank scratchpad: storage, per-bank round-robin arbitration,
super-bank (512-bit) access, time-muxed psum/output crossbar ports, and
allocation-plan bookkeeping.

Word addresses interleave low-order: bank = addr % banks, row = addr // banks.
A 512-bit request must be aligned to a super bank (8 consecutive banks) and is
granted only when it wins all eight; banks it wins while waiting are reserved
for it so 64-bit traffic cannot starve it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class MemoryError_(ValueError):
    pass


class RegionViolation(MemoryError_):
    pass


@dataclass
class MemRequest:
    channel: int
    addr: int
    width: int = 64          # 64 or 512
    write: bool = False
    cls: str = "input"       # input|weight|psum|output|simd|reshuffle|dma
    data: object = None      # functional payload (int word or 8-word array)

    def __post_init__(self):
        if self.width not in (64, 512):
            raise MemoryError_(f"bad request width {self.width}")


@dataclass(frozen=True)
class Region:
    name: str
    base: int
    length: int  # words

    @property
    def end(self) -> int:
        return self.base + self.length


class AllocationPlan:
    """operand-id -> (base word, length in words); regions pairwise disjoint."""

    def __init__(self, total_words: int):
        self.total_words = total_words
        self.regions: dict = {}

    def add(self, name: str, base: int, length: int) -> Region:
        if name in self.regions:
            raise MemoryError_(f"duplicate region {name!r}")
        if base < 0 or length < 0 or base + length > self.total_words:
            raise MemoryError_(
                f"region {name!r} [{base}, {base + length}) outside memory "
                f"of {self.total_words} words")
        new = Region(name, base, length)
        for r in self.regions.values():
            if new.base < r.end and r.base < new.end:
                raise MemoryError_(f"region {name!r} overlaps {r.name!r}")
        self.regions[name] = new
        return new

    def __getitem__(self, name: str) -> Region:
        return self.regions[name]

    def __contains__(self, name: str) -> bool:
        return name in self.regions

    def covers(self, addr: int, nwords: int = 1) -> bool:
        return any(r.base <= addr and addr + nwords <= r.end
                   for r in self.regions.values())


class BankArray:
    """One arbitration domain of `banks` banks x `words_per_bank` 64-bit words."""

    def __init__(self, banks: int, words_per_bank: int, nchannels: int = 64,
                 base: int = 0, super_width: int = 8):
        self.banks = banks
        self.words_per_bank = words_per_bank
        self.base = base  # global address of this domain's word 0
        self.super_width = super_width
        self.nch = nchannels
        self.words = np.zeros(banks * words_per_bank, dtype=np.uint64)
        self.rr = [0] * banks                 # per-bank round-robin pointer
        self.reserved: dict = {}              # bank -> channel holding a reservation
        self.plan: Optional[AllocationPlan] = None
        self.debug_regions = False

    # -- storage ------------------------------------------------------------

    def _local(self, addr: int, nwords: int) -> int:
        local = addr - self.base
        if local < 0 or local + nwords > len(self.words):
            raise MemoryError_(f"address {addr} (+{nwords}) out of range")
        return local

    def _check_region(self, addr: int, nwords: int) -> None:
        if self.debug_regions and self.plan is not None:
            if not self.plan.covers(addr, nwords):
                raise RegionViolation(f"access to unallocated address {addr}")

    def bank_of(self, addr: int) -> int:
        return (addr - self.base) % self.banks

    def read64(self, addr: int) -> int:
        self._check_region(addr, 1)
        return int(self.words[self._local(addr, 1)])

    def write64(self, addr: int, word: int) -> None:
        self._check_region(addr, 1)
        self.words[self._local(addr, 1)] = np.uint64(word & 0xFFFFFFFFFFFFFFFF)

    def read512(self, addr: int) -> np.ndarray:
        if (addr - self.base) % self.super_width:
            raise MemoryError_(f"misaligned 512-bit read at {addr}")
        self._check_region(addr, self.super_width)
        local = self._local(addr, self.super_width)
        return self.words[local:local + self.super_width].copy()

    def write512(self, addr: int, words) -> None:
        if (addr - self.base) % self.super_width:
            raise MemoryError_(f"misaligned 512-bit write at {addr}")
        self._check_region(addr, self.super_width)
        local = self._local(addr, self.super_width)
        self.words[local:local + self.super_width] = np.asarray(words, dtype=np.uint64)

    def read_bytes(self, addr: int, nwords: int) -> np.ndarray:
        local = self._local(addr, nwords)
        return self.words[local:local + nwords].view(np.uint8).reshape(nwords, 8)

    def write_words(self, addr: int, words: np.ndarray) -> None:
        local = self._local(addr, len(words))
        self.words[local:local + len(words)] = words

    def dump(self, path) -> None:
        """Memory image as flat little-endian 64-bit words."""
        with open(path, "wb") as f:
            f.write(self.words.astype("<u8").tobytes())

    def reset_arbiter(self) -> None:
        self.rr = [0] * self.banks
        self.reserved.clear()

    # -- arbitration ----------------------------------------------------------

    def request_banks(self, req: MemRequest) -> range:
        b0 = self.bank_of(req.addr)
        if req.width == 512:
            if b0 % self.super_width:
                raise MemoryError_(f"misaligned 512-bit request at {req.addr}")
            return range(b0, b0 + self.super_width)
        return range(b0, b0 + 1)

    def arbitrate(self, requests):
        """Grant at most one request per bank this cycle.

        Returns (granted, stalled).  Ties break round-robin per bank; a
        512-bit request wins only when it holds all eight banks, reserving the
        ones it has already won across cycles.
        """
        if not requests:
            return [], []
        candidates = {}  # bank -> list of (req, banks)
        req_banks = {}
        for req in requests:
            banks = self.request_banks(req)
            req_banks[id(req)] = banks
            for b in banks:
                holder = self.reserved.get(b)
                if holder is not None and holder != req.channel:
                    continue  # reserved for someone else: cannot compete here
                candidates.setdefault(b, []).append(req)
        winners = {}
        for b, cands in candidates.items():
            w = min(cands, key=lambda r: (r.channel - self.rr[b]) % self.nch)
            winners[b] = w
        granted, stalled = [], []
        for req in requests:
            banks = req_banks[id(req)]
            won = [b for b in banks if winners.get(b) is req
                   or self.reserved.get(b) == req.channel]
            if len(won) == len(banks):
                granted.append(req)
                for b in banks:
                    self.reserved.pop(b, None)
                    self.rr[b] = (req.channel + 1) % self.nch
            else:
                stalled.append(req)
                if req.width == 512:
                    for b in banks:
                        if winners.get(b) is req:
                            self.reserved[b] = req.channel
        return granted, stalled

    def service(self, req: MemRequest):
        """Apply a granted request to storage; returns read data."""
        if req.width == 512:
            if req.write:
                self.write512(req.addr, req.data)
                return None
            return self.read512(req.addr)
        if req.write:
            self.write64(req.addr, req.data if req.data is not None else 0)
            return None
        return self.read64(req.addr)


def time_mux_port(psum_req: Optional[MemRequest], out_req: Optional[MemRequest],
                  enabled: bool = True):
    """Forwarding for one shared psum/output crossbar port.

    Partial-sum reads outrank output writes; with time-muxing disabled the
    ports are doubled and both go through.
    """
    if not enabled:
        return [r for r in (psum_req, out_req) if r is not None]
    if psum_req is not None:
        return [psum_req]
    if out_req is not None:
        return [out_req]
    return []


SEPARATED_ORDER = ("input", "weight", "psum", "output")


class ScratchpadMemory:
    """Shared single-domain scratchpad, or four private per-operand domains.

    Global word addresses are used throughout; in separated mode each operand
    class owns a contiguous address range backed by its own bank group, and
    requests are routed by address.
    """

    def __init__(self, cfg):
        geom = cfg.memory
        self.geom = geom
        self.mode = cfg.memory_mode
        self.domains = []
        if cfg.is_separated():
            group = geom.banks // 4
            base = 0
            self.class_base = {}
            for name in SEPARATED_ORDER:
                nbytes = getattr(cfg.separated, name)
                words = nbytes // geom.word_bytes
                dom = BankArray(group, words // group, base=base,
                                super_width=geom.super_bank_width)
                self.domains.append(dom)
                self.class_base[name] = base
                base += words
            self.total_words = base
        else:
            self.domains.append(BankArray(geom.banks, geom.words_per_bank,
                                          super_width=geom.super_bank_width))
            self.total_words = geom.total_words
            self.class_base = None

    def domain_of(self, addr: int) -> BankArray:
        for dom in self.domains:
            if dom.base <= addr < dom.base + len(dom.words):
                return dom
        raise MemoryError_(f"address {addr} outside memory")

    def arbitrate(self, requests):
        granted, stalled = [], []
        by_dom = {}
        for req in requests:
            by_dom.setdefault(id(self.domain_of(req.addr)), (self.domain_of(req.addr), []))[1].append(req)
        for dom, reqs in by_dom.values():
            g, s = dom.arbitrate(reqs)
            granted.extend(g)
            stalled.extend(s)
        return granted, stalled

    def service(self, req: MemRequest):
        return self.domain_of(req.addr).service(req)

    # convenience passthroughs for functional access by global address
    def read64(self, addr):
        return self.domain_of(addr).read64(addr)

    def write64(self, addr, word):
        self.domain_of(addr).write64(addr, word)

    def read_bytes(self, addr, nwords):
        return self.domain_of(addr).read_bytes(addr, nwords)

    def write_words(self, addr, words):
        self.domain_of(addr).write_words(addr, words)

    def bank_id(self, addr: int):
        """(domain index, bank) -- globally unique bank identity."""
        for i, dom in enumerate(self.domains):
            if dom.base <= addr < dom.base + len(dom.words):
                return (i, dom.bank_of(addr))
        raise MemoryError_(f"address {addr} outside memory")

    def dump(self, path) -> None:
        with open(path, "wb") as f:
            for dom in self.domains:
                f.write(dom.words.astype("<u8").tobytes())

    def reset_arbiter(self) -> None:
        """Quiesce arbitration state (between tile phases)."""
        for dom in self.domains:
            dom.reset_arbiter()
