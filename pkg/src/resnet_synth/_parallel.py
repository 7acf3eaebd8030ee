"""Deterministic data-parallel helpers shared by verification and experiments."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

ENV_THREADS = "RESNET_SYNTH_THREADS"


def worker_count() -> int:
    """Worker cap from ``RESNET_SYNTH_THREADS``; 0, unset or invalid means one per CPU."""
    raw = os.environ.get(ENV_THREADS, "0").strip()
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return n


def ordered_map(fn: Callable, items: Sequence) -> list:
    """``[fn(item) for item in items]``, possibly on threads; order is always preserved."""
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
