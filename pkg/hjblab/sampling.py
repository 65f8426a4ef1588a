"""Reproducible Gaussian streams and the chunked worker pool.

Every block of random numbers is keyed by (seed, stream, chunk index), so the
numbers drawn never depend on how many threads evaluate the chunks. Results
come back in chunk order and are reduced with numpy's pairwise summation,
which fixes the reduction tree for a given sample count.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

import numpy as np

from . import config
from .errors import InvalidInputError

T = TypeVar("T")


def chunk_sizes(total: int, chunk_size: int | None = None) -> list[int]:
    """Split `total` samples into chunks of `chunk_size` (the last one may be shorter)."""
    size = chunk_size or config.CHUNK_SIZE
    full, rest = divmod(total, size)
    return [size] * full + ([rest] if rest else [])


def generator(seed: int, stream: int, chunk: int) -> np.random.Generator:
    if seed < 0:
        raise InvalidInputError(f"Seeds must be non-negative, got {seed}")
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, chunk)))


def standard_normals(
    seed: int, stream: int, chunk: int, size: int, dim: int, antithetic: bool = False
) -> np.ndarray:
    """Standard normal block of shape (size, dim); antithetic rows come in (g, -g) pairs."""
    rng = generator(seed, stream, chunk)
    if not antithetic:
        return rng.standard_normal((size, dim))
    if size % 2:
        raise InvalidInputError("Antithetic sampling needs an even number of samples per chunk")
    half = rng.standard_normal((size // 2, dim))
    return np.stack([half, -half], axis=1).reshape(size, dim)


def normal_matrix(seed: int, stream: int, total: int, dim: int, antithetic: bool = False) -> np.ndarray:
    """All chunks of one stream stacked into a (total, dim) array."""
    blocks = [
        standard_normals(seed, stream, i, size, dim, antithetic)
        for i, size in enumerate(chunk_sizes(total))
    ]
    return np.concatenate(blocks, axis=0) if blocks else np.empty((0, dim))


def map_chunks(
    func: Callable[[np.ndarray], T],
    seed: int,
    stream: int,
    total: int,
    dim: int,
    antithetic: bool = False,
) -> list[T]:
    """Apply `func` to every normal chunk of a stream, in parallel, results in chunk order."""
    sizes = chunk_sizes(total)

    def run(item: tuple[int, int]) -> T:
        index, size = item
        return func(standard_normals(seed, stream, index, size, dim, antithetic))

    if config.WORKERS <= 1 or len(sizes) <= 1:
        return [run(item) for item in enumerate(sizes)]
    with ThreadPoolExecutor(max_workers=config.WORKERS) as pool:
        return list(pool.map(run, enumerate(sizes)))


def map_rows(func: Callable[[np.ndarray], np.ndarray], rows: np.ndarray) -> np.ndarray:
    """Evaluate a vectorized row function chunk by chunk, in parallel, preserving order."""
    size = config.CHUNK_SIZE
    starts = list(range(0, rows.shape[0], size))
    if not starts:
        return np.empty(0)
    if config.WORKERS <= 1 or len(starts) <= 1:
        parts = [func(rows[s:s + size]) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=config.WORKERS) as pool:
            parts = list(pool.map(lambda s: func(rows[s:s + size]), starts))
    return np.concatenate(parts, axis=0)
