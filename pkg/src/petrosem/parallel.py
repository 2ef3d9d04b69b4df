"""Deterministic thread-pool map capped by ``PETROSEM_THREADS``."""

import os
from concurrent.futures import ThreadPoolExecutor


def max_threads() -> int:
    raw = os.environ.get("PETROSEM_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return min(8, os.cpu_count() or 1)


def parallel_map(fn, items: list) -> list:
    """``[fn(x) for x in items]`` evaluated on up to ``max_threads()`` threads.

    Results keep input order, so reductions over them are deterministic.
    """
    workers = min(max_threads(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
