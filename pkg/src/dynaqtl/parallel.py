"""Deterministic parallel mapping over independent replicates.

Work items carry their own seeds, so results are identical for any
worker count; outputs are gathered in item order.  The environment
variable ``DYNAQTL_WORKERS`` caps the worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def resolve_workers(requested: int | None) -> int:
    cap = os.environ.get("DYNAQTL_WORKERS")
    cap = int(cap) if cap else os.cpu_count() or 1
    if requested is None:
        requested = 1
    return max(1, min(requested, cap))


def parallel_map(fn, items, workers: int = 1, progress=None) -> list:
    """Apply fn to each item, optionally across processes; ordered results."""
    items = list(items)
    workers = resolve_workers(workers)
    if workers <= 1 or len(items) <= 1:
        out = []
        for k, item in enumerate(items):
            out.append(fn(item))
            if progress is not None:
                progress(k, len(items), out[-1])
        return out
    out = []
    with ProcessPoolExecutor(max_workers=workers) as ex:
        for k, res in enumerate(ex.map(fn, items)):
            out.append(res)
            if progress is not None:
                progress(k, len(items), res)
    return out
