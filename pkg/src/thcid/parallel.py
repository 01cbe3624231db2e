"""Thread-count control shared by FFTs, BLAS and the compiled QR kernel."""

from __future__ import annotations

import contextlib
import functools
import os

import numba
from threadpoolctl import threadpool_info, threadpool_limits

# try OpenMP before TBB; an outdated TBB only produces a warning and a fallback
if "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ:
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]

_workers = 1


@functools.cache
def _initial_blas_threads() -> int:
    # raising OpenBLAS above its start-up thread count can crash it
    counts = [lib["num_threads"] for lib in threadpool_info()]
    return max(counts, default=1)


def fft_workers() -> int:
    return _workers


@contextlib.contextmanager
def thread_limit(threads: int | None):
    """Run the enclosed block with at most ``threads`` threads everywhere.

    Native pools are only ever lowered, never raised above their start-up size.

    ``None`` leaves the current settings alone. Results do not depend on
    the thread count: random draws happen before any parallel section and
    every parallel loop partitions independent columns.
    """
    global _workers
    if threads is None:
        yield
        return
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    prev_workers = _workers
    prev_numba = numba.get_num_threads()
    _workers = threads
    numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))
    try:
        with threadpool_limits(limits=min(threads, _initial_blas_threads())):
            yield
    finally:
        _workers = prev_workers
        numba.set_num_threads(prev_numba)


def default_threads() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1
