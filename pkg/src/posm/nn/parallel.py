"""Worker-thread settings shared by the numerical core.

Work is always split the same way regardless of the thread count and
results are combined in a fixed order, so the number of threads never
changes a result.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

from threadpoolctl import threadpool_limits

T = TypeVar("T")
R = TypeVar("R")

SHARD_SIZE = 128

_threads = 1
_pool: ThreadPoolExecutor | None = None
# One BLAS thread keeps every matmul's reduction order fixed.
_blas_limit = threadpool_limits(limits=1)


def set_threads(n: int) -> None:
    global _threads, _pool
    if n < 1:
        raise ValueError("thread count must be positive")
    if n != _threads and _pool is not None:
        _pool.shutdown()
        _pool = None
    _threads = n


def get_threads() -> int:
    return _threads


def map_ordered(fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
    global _pool
    items = list(items)
    if _threads == 1 or len(items) < 2:
        return [fn(it) for it in items]
    if _pool is None:
        _pool = ThreadPoolExecutor(max_workers=_threads)
    return list(_pool.map(fn, items))


def shard_bounds(n: int, size: int = SHARD_SIZE) -> list[tuple[int, int]]:
    return [(a, min(a + size, n)) for a in range(0, n, size)]
