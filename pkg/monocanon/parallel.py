"""Ordered fan-out of independent work items over worker threads."""

from __future__ import annotations

import asyncio
from typing import Any, Callable, Iterable

from .const import _LOGGER, max_threads


async def gather_limited(fn: Callable[..., Any], items: Iterable, limit: int = None) -> list:
    """Runs ``fn(item)`` for every item in threads, at most ``limit`` at a time; results keep input order."""
    semaphore = asyncio.Semaphore(limit or max_threads())

    async def _run(item: Any) -> Any:
        async with semaphore:
            return await asyncio.to_thread(fn, item)

    return await asyncio.gather(*(_run(item) for item in items))


def run_parallel(fn: Callable[..., Any], items: Iterable, limit: int = None) -> list:
    """Blocking wrapper around ``gather_limited``."""
    items = list(items)
    limit = limit or max_threads()
    if limit == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    _LOGGER.debug(">> run_parallel(fn=%s, items=%s, limit=%s)", getattr(fn, "__name__", fn), len(items), limit)
    return asyncio.run(gather_limited(fn, items, limit))
