"""Architecture description: geometry records, defaults, and validation.

The defaults mirror the fabricated part: an 8x8x8 MAC array (512 MACs), a
128 KB scratchpad of 32 x 64-bit banks grouped into 512-bit super banks,
seven data streamers, an 8-lane time-multiplexed quantization SIMD, and a
DMA engine for off-chip transfers.  Every field can be overridden from a
YAML architecture file; omitted keys keep their defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import yaml

STREAMER_ROLES = (
    "input",
    "weight",
    "psum",
    "output",
    "simd_in",
    "simd_out",
    "reshuffler",
)


@dataclass(frozen=True)
class ArrayGeometry:
    """Spatial unrolling (mu, ku, nu) of the MAC array."""

    mu: int = 8
    ku: int = 8
    nu: int = 8

    @property
    def macs(self) -> int:
        return self.mu * self.ku * self.nu


@dataclass(frozen=True)
class MemoryGeometry:
    banks: int = 32
    word_bits: int = 64
    words_per_bank: int = 512
    super_bank_width: int = 8  # banks per 512-bit super bank

    @property
    def word_bytes(self) -> int:
        return self.word_bits // 8

    @property
    def total_words(self) -> int:
        return self.banks * self.words_per_bank

    @property
    def total_bytes(self) -> int:
        return self.total_words * self.word_bytes


@dataclass(frozen=True)
class StreamerSpec:
    agu_dims: int
    fifo_depth: int
    channel_width_bits: int  # 64 or 512
    channel_count: int
    has_transposer: bool = False


@dataclass(frozen=True)
class DmaSpec:
    bandwidth_bits_per_cycle: int = 64
    latency_cycles: int = 100


@dataclass(frozen=True)
class SeparatedBuffers:
    """Per-operand buffer bytes for the separated-memory baseline."""

    input: int = 32768
    weight: int = 32768
    psum: int = 32768
    output: int = 32768

    def total(self) -> int:
        return self.input + self.weight + self.psum + self.output

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _default_streamers() -> dict:
    return {
        "input": StreamerSpec(agu_dims=6, fifo_depth=8, channel_width_bits=64, channel_count=8),
        "weight": StreamerSpec(agu_dims=3, fifo_depth=8, channel_width_bits=512, channel_count=1,
                               has_transposer=True),
        # The paper fixes the 1-deep FIFOs; channel counts for these two are a
        # documented choice (4 x 64-bit each, paired by the time-muxed ports).
        "psum": StreamerSpec(agu_dims=3, fifo_depth=1, channel_width_bits=64, channel_count=4),
        "output": StreamerSpec(agu_dims=3, fifo_depth=1, channel_width_bits=64, channel_count=4),
        "simd_in": StreamerSpec(agu_dims=3, fifo_depth=8, channel_width_bits=64, channel_count=8),
        "simd_out": StreamerSpec(agu_dims=3, fifo_depth=8, channel_width_bits=64, channel_count=8),
        "reshuffler": StreamerSpec(agu_dims=6, fifo_depth=8, channel_width_bits=64, channel_count=2),
    }


@dataclass
class SimConfig:
    array: ArrayGeometry = field(default_factory=ArrayGeometry)
    memory: MemoryGeometry = field(default_factory=MemoryGeometry)
    streamers: dict = field(default_factory=_default_streamers)
    dma: DmaSpec = field(default_factory=DmaSpec)
    memory_mode: str = "shared"  # "shared" | "separated"
    separated: SeparatedBuffers = field(default_factory=SeparatedBuffers)
    prefetch_mode: str = "mgdp"  # "mgdp" | "demand"
    simd_lanes: int = 8
    crossbar_time_mux: bool = True
    mem_latency: int = 1  # cycles from grant to data-in-FIFO
    double_buffer_acc: bool = True
    overlap_dma: bool = False
    exhaustive_tiler: bool = False
    mac_budget: int = 512
    seed: int = 0

    def is_separated(self) -> bool:
        return self.memory_mode == "separated"

    def key(self) -> tuple:
        """Hashable identity used for memoization and report echoing."""
        return (
            self.array, self.memory, tuple(sorted(self.streamers.items())),
            self.dma, self.memory_mode, self.separated, self.prefetch_mode,
            self.simd_lanes, self.crossbar_time_mux, self.mem_latency,
            self.double_buffer_acc, self.overlap_dma, self.mac_budget,
        )

    def echo(self) -> dict:
        d = dataclasses.asdict(self)
        d["streamers"] = {k: dataclasses.asdict(v) for k, v in self.streamers.items()}
        return d


def default_config() -> SimConfig:
    return SimConfig()


def validate(cfg: SimConfig) -> list:
    """Check every config invariant; returns a list of human-readable errors."""
    errs = []
    a, m = cfg.array, cfg.memory
    if min(a.mu, a.ku, a.nu) < 1:
        errs.append(f"array geometry must be positive, got ({a.mu},{a.ku},{a.nu})")
    elif a.macs != cfg.mac_budget:
        errs.append(f"array {a.mu}x{a.ku}x{a.nu} = {a.macs} MACs != budget {cfg.mac_budget}")
    if m.banks < 1 or m.words_per_bank < 1:
        errs.append("memory geometry must be positive")
    if m.super_bank_width != 8:
        errs.append(f"super_bank_width must be 8 (512-bit super words), got {m.super_bank_width}")
    if m.word_bits != 64:
        errs.append(f"word_bits must be 64, got {m.word_bits}")
    if m.banks % m.super_bank_width != 0:
        errs.append(f"banks ({m.banks}) not divisible by super_bank_width ({m.super_bank_width})")
    missing = [r for r in STREAMER_ROLES if r not in cfg.streamers]
    if missing:
        errs.append(f"missing streamer roles: {', '.join(missing)}")
    for role, s in cfg.streamers.items():
        if role not in STREAMER_ROLES:
            errs.append(f"unknown streamer role {role!r}")
            continue
        if s.channel_width_bits not in (64, 512):
            errs.append(f"{role} streamer channel width must be 64 or 512, got {s.channel_width_bits}")
        if s.channel_width_bits == 512 and m.super_bank_width * m.word_bits != 512:
            errs.append(f"{role} streamer 512-bit channel requires a 512-bit super bank")
        if cfg.prefetch_mode == "mgdp" and s.fifo_depth < 1:
            errs.append(f"{role} streamer fifo_depth must be >= 1 with prefetching enabled")
        if s.channel_count < 1:
            errs.append(f"{role} streamer needs at least one channel")
    if cfg.memory_mode not in ("shared", "separated"):
        errs.append(f"unknown memory_mode {cfg.memory_mode!r}")
    if cfg.memory_mode == "separated":
        sep = cfg.separated
        if sep.total() != m.total_bytes:
            errs.append(
                f"separated buffers sum to {sep.total()} bytes but memory is {m.total_bytes} bytes")
        if m.banks % 4 != 0:
            errs.append("separated mode needs banks divisible by 4 (one bank group per operand)")
        else:
            group_row_bytes = (m.banks // 4) * m.word_bytes
            for name, size in sep.as_dict().items():
                if size <= 0 or size % group_row_bytes != 0:
                    errs.append(
                        f"separated {name} buffer ({size} B) must be a positive multiple of "
                        f"{group_row_bytes} B (one row of its bank group)")
        wsep = cfg.separated.weight
        if m.banks // 4 < m.super_bank_width and wsep > 0:
            errs.append("separated weight bank group smaller than a super bank")
    if cfg.prefetch_mode not in ("mgdp", "demand"):
        errs.append(f"unknown prefetch_mode {cfg.prefetch_mode!r}")
    if cfg.simd_lanes not in (8, 64):
        errs.append(f"simd_lanes must be 8 or 64, got {cfg.simd_lanes}")
    if cfg.dma.bandwidth_bits_per_cycle < 1:
        errs.append("dma bandwidth must be positive")
    if cfg.dma.latency_cycles < 0:
        errs.append("dma latency must be non-negative")
    if cfg.mem_latency < 1:
        errs.append("mem_latency must be >= 1 cycle")
    return errs


class ConfigError(ValueError):
    pass


def _take(d: dict, ctx: str, known: set) -> None:
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in {ctx}: {', '.join(sorted(unknown))}")


def config_from_dict(doc: dict) -> SimConfig:
    """Build a SimConfig from a parsed YAML document, rejecting unknown keys."""
    if not isinstance(doc, dict):
        raise ConfigError("architecture file must be a mapping")
    cfg = default_config()
    _take(doc, "architecture", {
        "array", "memory", "streamers", "dma", "memory_mode", "separated",
        "prefetch_mode", "simd_lanes", "crossbar_time_mux", "mem_latency",
        "double_buffer_acc", "overlap_dma", "exhaustive_tiler", "mac_budget", "seed",
    })
    if "array" in doc:
        d = doc["array"]
        _take(d, "array", {"mu", "ku", "nu"})
        cfg.array = dataclasses.replace(cfg.array, **d)
    if "memory" in doc:
        d = doc["memory"]
        _take(d, "memory", {"banks", "word_bits", "words_per_bank", "super_bank_width"})
        cfg.memory = dataclasses.replace(cfg.memory, **d)
    if "streamers" in doc:
        for role, sd in doc["streamers"].items():
            if role not in STREAMER_ROLES:
                raise ConfigError(f"unknown streamer role {role!r}")
            _take(sd, f"streamers.{role}", {
                "agu_dims", "fifo_depth", "channel_width_bits", "channel_count", "has_transposer"})
            cfg.streamers[role] = dataclasses.replace(cfg.streamers[role], **sd)
    if "dma" in doc:
        d = doc["dma"]
        _take(d, "dma", {"bandwidth_bits_per_cycle", "latency_cycles"})
        cfg.dma = dataclasses.replace(cfg.dma, **d)
    if "separated" in doc:
        d = doc["separated"]
        _take(d, "separated", {"input", "weight", "psum", "output"})
        cfg.separated = dataclasses.replace(cfg.separated, **d)
    for k in ("memory_mode", "prefetch_mode", "simd_lanes", "crossbar_time_mux",
              "mem_latency", "double_buffer_acc", "overlap_dma", "exhaustive_tiler",
              "mac_budget", "seed"):
        if k in doc:
            setattr(cfg, k, doc[k])
    return cfg


def load_arch(path) -> SimConfig:
    with open(path) as f:
        doc = yaml.safe_load(f)
    return config_from_dict(doc or {})
