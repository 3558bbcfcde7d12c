"""Deterministic chunked parallel map.

Work is split into fixed-size chunks that do not depend on the thread
count, so ``threads=1`` and ``threads=8`` run identical arithmetic and
produce identical bytes. Threads only change how many chunks run at once
(numpy releases the GIL inside matmul and ufunc loops).
"""

from concurrent.futures import ThreadPoolExecutor

CHUNK = 512

_threads = 1


def set_threads(n):
    global _threads
    n = int(n)
    if n < 1:
        raise ValueError("threads must be >= 1")
    _threads = n


def get_threads():
    return _threads


def chunk_bounds(n, chunk=CHUNK):
    return [(i, min(i + chunk, n)) for i in range(0, n, chunk)]


def chunked_map(fn, n, threads=None, chunk=CHUNK):
    """Call ``fn(lo, hi)`` over fixed chunks of ``range(n)``; results in order."""
    bounds = chunk_bounds(n, chunk)
    threads = _threads if threads is None else threads
    if threads <= 1 or len(bounds) <= 1:
        return [fn(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda b: fn(*b), bounds))
