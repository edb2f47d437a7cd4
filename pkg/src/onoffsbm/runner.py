"""Deterministic chunked map used by the Monte-Carlo drivers.

Work is split into fixed-size chunks identified by their start offset; each chunk
derives its randomness from the caller's RandomSource, never from the scheduler.
Chunk results come back in chunk order, so reductions over the concatenated
output are byte-identical for any worker count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from functools import partial

DEFAULT_CHUNK = 4096


def chunk_ranges(total: int, chunk: int = DEFAULT_CHUNK) -> list[tuple[int, int]]:
    """(start, count) pairs covering range(total) in fixed-size pieces."""
    if total < 0:
        raise ValueError("total must be nonnegative")
    chunk = max(1, int(chunk))
    return [(start, min(chunk, total - start)) for start in range(0, total, chunk)]


def _apply(fn, args):
    return fn(*args)


def run_chunked(fn, common_args: tuple, total: int, workers: int = 1, chunk: int = DEFAULT_CHUNK) -> list:
    """Call fn(*common_args, start, count) per chunk; results in chunk order.

    fn must be a module-level function and all arguments picklable when
    workers > 1.
    """
    tasks = chunk_ranges(total, chunk)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(*common_args, start, count) for start, count in tasks]
    bound = partial(fn, *common_args)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_apply, [bound] * len(tasks), tasks))
