"""Cycle-level simulator of a 3D output-stationary GEMM accelerator with a
multi-bank shared scratchpad and flexible prefetching data streamers."""

__version__ = "0.1.0"
