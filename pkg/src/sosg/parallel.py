"""Process-pool helpers honoring the SOSG_THREADS cap."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def worker_count(requested: int | None = None) -> int:
    """Resolve the effective worker count (SOSG_THREADS caps everything)."""
    cap = os.environ.get("SOSG_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    if requested is None:
        requested = limit
    return max(1, min(requested, limit))


def chunked(items: Sequence[T], n_chunks: int) -> list[list[T]]:
    """Split into at most n_chunks contiguous chunks, preserving order."""
    if not items:
        return []
    n_chunks = max(1, min(n_chunks, len(items)))
    size, rem = divmod(len(items), n_chunks)
    out: list[list[T]] = []
    start = 0
    for i in range(n_chunks):
        end = start + size + (1 if i < rem else 0)
        out.append(list(items[start:end]))
        start = end
    return out


def pool_map(fn: Callable[[T], R], items: Iterable[T], workers: int | None = None) -> list[R]:
    """Order-preserving map, serial when one worker suffices."""
    items = list(items)
    workers = worker_count(workers)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))
