"""Bounded fan-out of blocking work onto worker threads."""

from __future__ import annotations

import asyncio
from collections.abc import Callable
from typing import TypeVar

_T = TypeVar("_T")


async def gather_limited(
    count: int, threads: int, work: Callable[[int], _T]
) -> list[_T]:
    """Run work(0..count-1) on at most `threads` worker threads, in index order."""
    semaphore = asyncio.Semaphore(max(threads, 1))

    async def _run(index: int) -> _T:
        async with semaphore:
            return await asyncio.to_thread(work, index)

    return list(await asyncio.gather(*(_run(index) for index in range(count))))
