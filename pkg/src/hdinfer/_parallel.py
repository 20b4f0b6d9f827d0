"""Ordered parallel map capped by ``HDINFER_THREADS``."""
import os
from concurrent.futures import ThreadPoolExecutor


def thread_count() -> int:
    raw = os.environ.get("HDINFER_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def pmap(func, items, threads=None):
    """``[func(x) for x in items]``, run on a thread pool when allowed.

    Results keep input order. The numba kernels release the GIL so
    threads give real concurrency on the hot loops.
    """
    items = list(items)
    threads = thread_count() if threads is None else max(1, int(threads))
    if threads == 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(func, items))
