"""Deterministic chunked execution.

Chunk boundaries depend only on the input length and ``CHUNK_SIZE``, never on
the number of workers, so every reduction happens in the same order whatever
``threads`` is set to.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterator, List, Sequence, Tuple, TypeVar

T = TypeVar("T")

CHUNK_SIZE = 32768

_threads = 1


def set_threads(n: int) -> None:
    global _threads
    if n < 1:
        raise ValueError("threads must be >= 1")
    _threads = int(n)


def get_threads() -> int:
    return _threads


def chunk_bounds(n: int, size: int = CHUNK_SIZE) -> List[Tuple[int, int]]:
    return [(lo, min(lo + size, n)) for lo in range(0, n, size)]


def map_chunks(fn: Callable[[int, int], T], n: int, threads: int | None = None,
               size: int = CHUNK_SIZE) -> List[T]:
    """Apply ``fn(lo, hi)`` over fixed chunks of ``range(n)``; results in chunk order."""
    bounds = chunk_bounds(n, size)
    workers = threads or _threads
    if workers <= 1 or len(bounds) <= 1:
        return [fn(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda b: fn(*b), bounds))


def map_items(fn: Callable[[T], object], items: Sequence[T], threads: int | None = None) -> list:
    workers = threads or _threads
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def iter_chunks(n: int, size: int = CHUNK_SIZE) -> Iterator[Tuple[int, int]]:
    yield from chunk_bounds(n, size)
