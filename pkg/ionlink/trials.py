import logging
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, List, Optional, Sequence, Tuple

import numpy as np

from .utils import Config, default_seed

logger = logging.getLogger(__name__)

BlockFn = Callable[..., Any]


def block_generator(seed: int, key: Sequence[int]) -> np.random.Generator:
    """Independent stream for one block, fixed by (seed, key)"""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


def _run_block(job: Tuple[BlockFn, int, Tuple[int, ...], int, tuple]):
    fn, seed, key, size, args = job
    return fn(block_generator(seed, key), size, *args)


class TrialRunner:
    """Runs Monte Carlo trials in fixed-size blocks with per-block RNG streams.

    Block sizes depend only on the trial count, so results are identical for
    any number of workers.
    """

    def __init__(self, seed: Optional[int] = None, workers: Optional[int] = None, block_size: Optional[int] = None):
        self.seed = int(seed) if seed is not None else default_seed()
        self.workers = workers if workers is not None else min(Config.workers, multiprocessing.cpu_count())
        self.block_size = block_size if block_size is not None else Config.block_size
        if self.workers < 1:
            raise ValueError(f"workers must be at least 1, got {self.workers}")
        if self.block_size < 1:
            raise ValueError(f"block_size must be at least 1, got {self.block_size}")

    def block_sizes(self, trials: int) -> List[int]:
        if trials < 1:
            raise ValueError(f"trials must be at least 1, got {trials}")
        full, rest = divmod(trials, self.block_size)
        return [self.block_size] * full + ([rest] if rest else [])

    def generator(self, *key: int) -> np.random.Generator:
        return block_generator(self.seed, key)

    def map_blocks(self, fn: BlockFn, trials: int, *args, stream: Sequence[int] = ()) -> list:
        """Call fn(rng, size, *args) once per block, results in block order"""
        stream = tuple(stream)
        jobs = [(fn, self.seed, stream + (b,), size, args) for b, size in enumerate(self.block_sizes(trials))]
        if self.workers == 1 or len(jobs) == 1:
            return [_run_block(job) for job in jobs]
        logger.debug("running %d blocks on %d workers", len(jobs), self.workers)
        with ProcessPoolExecutor(max_workers=min(self.workers, len(jobs))) as executor:
            return list(executor.map(_run_block, jobs))
