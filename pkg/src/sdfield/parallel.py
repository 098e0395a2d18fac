"""Worker-count resolution and a deterministic parallel map over chunks."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

_ENV_VAR = "SDFIELD_THREADS"


def resolve_threads(requested=None) -> int:
    """Worker count: explicit argument, then SDFIELD_THREADS, then cpu count."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get(_ENV_VAR)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def chunk_starts(total: int, chunk: int) -> range:
    return range(0, total, chunk)


def map_chunks(fn, total: int, chunk: int, out, threads: int = 1) -> None:
    """Run fn(start, stop) for fixed chunks, writing results into out[start:stop].

    Chunk boundaries do not depend on the worker count, and each chunk is
    computed by the same kernel, so serial and parallel runs are bit-identical.
    """

    def work(start):
        stop = min(start + chunk, total)
        out[start:stop] = fn(start, stop)

    starts = chunk_starts(total, chunk)
    if threads <= 1:
        for s in starts:
            work(s)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))
