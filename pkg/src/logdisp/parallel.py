"""Deterministic fan-out of ensemble work over processes.

Work is cut into chunks of a fixed size that never depends on the worker
count, and results are reassembled in chunk order, so the number of workers
changes wall time only.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

CHUNK = 250
ENV_VAR = "LOGDISP_WORKERS"


def worker_count() -> int:
    raw = os.environ.get(ENV_VAR)
    if raw is None or raw == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{ENV_VAR} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{ENV_VAR} must be a positive integer, got {raw!r}")
    return n


def chunks(n: int, size: int = CHUNK) -> list[range]:
    return [range(i, min(i + size, n)) for i in range(0, n, size)]


def map_chunks(fn: Callable, n: int, *args, workers: int | None = None, size: int = CHUNK) -> list:
    """``[fn(idx, *args) for idx in chunks(n)]``, possibly in parallel."""
    parts = chunks(n, size)
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(parts) <= 1:
        return [fn(idx, *args) for idx in parts]
    with ProcessPoolExecutor(max_workers=min(workers, len(parts))) as pool:
        futures = [pool.submit(fn, idx, *args) for idx in parts]
        return [f.result() for f in futures]
