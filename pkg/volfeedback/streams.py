from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

import numpy as np

A = TypeVar("A")
T = TypeVar("T")

DEFAULT_BLOCK_SIZE = 1000


def block_sizes(
    n_paths: int, block_size: int = DEFAULT_BLOCK_SIZE
) -> list[int]:
    full, rest = divmod(n_paths, block_size)

    return [block_size] * full + ([rest] if rest else [])


def block_generators(
    seed: int, n_blocks: int, *key: int
) -> list[np.random.Generator]:
    """
    One independent generator per block of paths.

    Block i always receives the same substream for a given seed and key, so
    path values do not depend on how blocks are scheduled across workers.
    `key` separates unrelated consumers of the same seed (for instance the
    quote dates of a calibration panel).
    """
    root = np.random.SeedSequence(seed, spawn_key=tuple(key))

    return [np.random.default_rng(child) for child in root.spawn(n_blocks)]


def ordered_map(
    func: Callable[[A], T], items: Iterable[A], threads: int = 1
) -> list[T]:
    """Map `func` over `items`, in parallel when threads > 1, keeping order."""
    if threads <= 1:
        return [func(item) for item in items]

    with ThreadPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(func, items))
