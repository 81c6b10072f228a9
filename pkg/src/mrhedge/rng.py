"""Counter-based random substreams and deterministic worker scheduling.

Every path owns a disjoint Philox counter block derived from
``(master_seed, stream, path_index)``; nested sub-simulations additionally
key on the node index.  Draws therefore never depend on how paths are
partitioned across workers, which is what makes ensembles bit-reproducible
for any worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

_MASK64 = (1 << 64) - 1

# Stream tags keep independent uses of the same master seed disjoint.
STREAM_FIT = 0          # ensemble used to fit projections
STREAM_EVAL = 1         # held-out ensemble used for residuals
STREAM_REAL_WORLD = 2   # simulation under the real-world measure (diagnostics)
STREAM_NESTED = 3       # nested Monte Carlo continuations


def substream(master_seed: int, stream: int, path_index: int, node: int = 0) -> np.random.Generator:
    """Generator for one path's private counter block.

    The Philox key is (master_seed, stream) and the 256-bit counter starts at
    ``[0, node, path_index, 0]``.  Sequential draws only advance the lowest
    counter word, so blocks for distinct (stream, path, node) never overlap.
    """
    key = np.array([master_seed & _MASK64, stream & _MASK64], dtype=np.uint64)
    counter = np.array([0, node & _MASK64, path_index & _MASK64, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))


def chunk_ranges(total: int, workers: int, chunk: int | None = None) -> list[tuple[int, int]]:
    """Split ``range(total)`` into contiguous chunks.

    With ``chunk=None`` the range is split into at most ``workers`` pieces.
    With a fixed ``chunk`` size the geometry ignores ``workers`` entirely;
    callers whose per-chunk arithmetic is shape-sensitive (vectorized BLAS
    reductions) use this so every worker count sees identical array shapes.
    """
    if total <= 0:
        return []
    if chunk is not None:
        chunk = int(chunk)
        if chunk < 1:
            raise ValueError(f"chunk size must be >= 1, got {chunk}")
        return [(s, min(s + chunk, total)) for s in range(0, total, chunk)]
    workers = max(1, min(int(workers), total))
    base, extra = divmod(total, workers)
    ranges = []
    start = 0
    for w in range(workers):
        size = base + (1 if w < extra else 0)
        if size == 0:
            continue
        ranges.append((start, start + size))
        start += size
    return ranges


def run_chunked(fn, total: int, workers: int = 1, chunk: int | None = None) -> None:
    """Run ``fn(start, stop)`` over a chunked range, serially or on threads.

    ``fn`` must write its results into preallocated slices; chunks are
    disjoint, so the merged result is identical for any worker count.  Pass
    a fixed ``chunk`` size when ``fn`` vectorizes over its slice, so that
    slice shapes (and hence any shape-dependent kernel roundings) do not
    vary with ``workers``.
    """
    ranges = chunk_ranges(total, workers, chunk)
    if workers <= 1 or len(ranges) <= 1:
        for start, stop in ranges:
            fn(start, stop)
        return
    with ThreadPoolExecutor(max_workers=min(int(workers), len(ranges))) as pool:
        futures = [pool.submit(fn, start, stop) for start, stop in ranges]
        for fut in futures:
            fut.result()
