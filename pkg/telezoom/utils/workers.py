# -*- coding: utf-8 -*-
"""
⚙️ Worker Pool
Runs blocking per-item work concurrently on an asyncio event loop
"""

import asyncio
import logging
from typing import Callable, List, Optional, Sequence, TypeVar

from telezoom.config import config

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


async def _gather(fn: Callable[[T], R], items: Sequence[T], workers: int) -> List[R]:
    semaphore = asyncio.Semaphore(workers)

    async def run_one(item):
        async with semaphore:
            return await asyncio.to_thread(fn, item)

    # gather keeps input order regardless of completion order
    return await asyncio.gather(*(run_one(item) for item in items))


def run_pool(fn: Callable[[T], R], items: Sequence[T], workers: Optional[int] = None) -> List[R]:
    """
    Apply fn to every item with at most `workers` threads in flight

    Results come back in input order. A single worker (or a single item)
    runs inline so tracebacks stay simple.
    """
    items = list(items)
    workers = workers or config.WORKERS
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]

    try:
        asyncio.get_running_loop()
    except RuntimeError:
        return asyncio.run(_gather(fn, items, workers))

    # Already inside a loop (e.g. a caller's asyncio.run): fall back to inline
    logger.warning("⚠️ run_pool called from a running event loop, running inline")
    return [fn(item) for item in items]
