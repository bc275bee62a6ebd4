"""Counter-based random streams.

Every random quantity is a pure function of ``(seed, stream, index)`` so
results do not depend on how replicas are split across workers.

Two layouts are used, both on top of numpy's Philox4x64 bit generator:

* block layout -- replica ``i`` owns a fixed-width row of uniforms at
  counter offset ``i * width / 4`` of the stream keyed by ``(seed, stream)``;
  any slice of rows can be regenerated independently with ``advance``.
* path layout -- replica ``i`` owns a whole Philox stream whose counter's
  high word is ``i``; used when the number of draws per replica is random.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

import numpy as np
from numpy.random import Generator, Philox

MASK64 = (1 << 64) - 1

# stream identifiers; keep distinct so unrelated draws never share counters
STREAM_EMBED = 1
STREAM_PATH = 2
STREAM_CHAIN = 3
STREAM_CHAIN_PATH = 4
STREAM_DIFFUSION = 5
STREAM_GENERIC = 6
STREAM_TAIL = 7


def _key(seed: int, stream: int) -> int:
    if not 0 <= int(seed) <= MASK64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return int(seed) | (int(stream) << 64)


def block_width(k: int) -> int:
    """Round a per-replica draw count up to a whole number of Philox blocks."""
    return max(4, -(-int(k) // 4) * 4)


def block_uniforms(seed: int, start: int, stop: int, width: int, stream: int = STREAM_EMBED) -> np.ndarray:
    """Uniforms on [0, 1) for replicas ``start..stop-1``, shape ``(stop-start, width)``."""
    if width % 4:
        raise ValueError("width must be a multiple of 4")
    bg = Philox(key=_key(seed, stream))
    if start:
        bg.advance(start * (width // 4))
    return Generator(bg).random((stop - start, width))


def path_generator(seed: int, index: int, stream: int = STREAM_PATH) -> Generator:
    """Independent generator for replica ``index``."""
    counter = np.array([0, 0, 0, int(index)], dtype=np.uint64)
    return Generator(Philox(key=_key(seed, stream), counter=counter))


def chunk_bounds(n: int, chunk: int) -> list[tuple[int, int]]:
    return [(a, min(a + chunk, n)) for a in range(0, n, chunk)]


def map_chunks(fn: Callable, bounds: Sequence[tuple[int, int]], workers: int = 1, args: tuple = ()) -> list:
    """Apply ``fn(start, stop, *args)`` to each chunk; results in chunk order.

    ``fn`` must be a module-level function when ``workers > 1``.
    """
    if workers <= 1 or len(bounds) <= 1:
        return [fn(a, b, *args) for a, b in bounds]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        futs = [ex.submit(fn, a, b, *args) for a, b in bounds]
        return [f.result() for f in futs]
