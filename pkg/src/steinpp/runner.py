"""Ordered parallel map over replicate indices."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        threads = int(os.environ.get("STEINPP_THREADS", "1"))
    return max(1, int(threads))


def parallel_map(fn: Callable, items: Sequence, threads: int | None = None) -> list:
    """``[fn(i) for i in items]`` computed on a thread pool; output order is fixed."""
    threads = resolve_threads(threads)
    if threads == 1 or len(items) < 2:
        return [fn(i) for i in items]
    # chunks keep per-task overhead low without affecting the result order
    chunk = max(1, len(items) // (threads * 8))
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items, chunksize=chunk))
