"""Ledger-based accounting of feature-buffer residency.

Memory behaviour is part of the matcher's contract (only one reference
part resident during the first attention level), so it is measured by an
explicit ledger of registered buffers rather than by process RSS, which
the allocator and interpreter would blur beyond usefulness.  Buffers are
registered under a category name ("ref_parts", "pyramid", ...) so the
reference-feature component can be reported separately.
"""

from __future__ import annotations

import threading
from collections import defaultdict


class MemoryLedger:
    """Thread-safe byte counters with per-category and global peaks."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._next_handle = 0
        self._live: dict[int, tuple[str, int]] = {}
        self._current: dict[str, int] = defaultdict(int)
        self._peak: dict[str, int] = defaultdict(int)
        self._current_total = 0
        self._peak_total = 0

    def register(self, category: str, nbytes: int) -> int:
        """Account for a newly resident buffer; returns a release handle."""
        if nbytes < 0:
            raise ValueError(f"negative buffer size {nbytes}")
        with self._lock:
            handle = self._next_handle
            self._next_handle += 1
            self._live[handle] = (category, nbytes)
            self._current[category] += nbytes
            self._current_total += nbytes
            if self._current[category] > self._peak[category]:
                self._peak[category] = self._current[category]
            if self._current_total > self._peak_total:
                self._peak_total = self._current_total
            return handle

    def release(self, handle: int) -> None:
        """Drop a previously registered buffer from the running totals."""
        with self._lock:
            category, nbytes = self._live.pop(handle)
            self._current[category] -= nbytes
            self._current_total -= nbytes

    def current_bytes(self, category: str | None = None) -> int:
        with self._lock:
            if category is None:
                return self._current_total
            return self._current[category]

    def peak_bytes(self, category: str | None = None) -> int:
        with self._lock:
            if category is None:
                return self._peak_total
            return self._peak[category]
