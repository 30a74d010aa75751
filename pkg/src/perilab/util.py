"""Small numerical and concurrency helpers used across modules."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def composite_simpson(y: np.ndarray, dx: float) -> float:
    """Composite Simpson rule on uniformly spaced samples.

    Requires an even number of intervals (odd number of samples).
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0] - 1
    if n < 2 or n % 2 != 0:
        raise ValueError(f"composite Simpson needs an even interval count, got {n}")
    s = y[0] + y[-1] + 4.0 * np.sum(y[1:-1:2]) + 2.0 * np.sum(y[2:-1:2])
    return float(s * dx / 3.0)


_np_trapezoid = getattr(np, "trapezoid", None) or np.trapz


def trapezoid(y: np.ndarray, dx: float) -> float:
    return float(_np_trapezoid(np.asarray(y, dtype=float), dx=dx))


def thread_count() -> int:
    """Concurrency cap: PERILAB_THREADS env var, else the CPU count."""
    raw = os.environ.get("PERILAB_THREADS", "")
    if raw.strip():
        try:
            n = int(raw)
        except ValueError:
            n = 1
        return max(1, n)
    return max(1, os.cpu_count() or 1)


def parallel_map(fn, items):
    """Map ``fn`` over ``items`` on a capped thread pool.

    Results merge in input order, so output is deterministic regardless of
    scheduling. Falls back to a serial loop when the cap is 1.
    """
    items = list(items)
    workers = min(thread_count(), max(1, len(items)))
    if workers == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
