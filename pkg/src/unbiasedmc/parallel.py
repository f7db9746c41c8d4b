"""Chunk-level fan-out with an order-preserving result list."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")


def map_chunks(fn: Callable[..., T], tasks: Iterable[tuple], workers: int = 1) -> list[T]:
    """Run ``fn(*task)`` for every task; results come back in task order."""
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, *zip(*tasks)))
