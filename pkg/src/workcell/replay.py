"""FIFO replay buffer with a sample-to-insert rate limiter.

The limiter keeps  samples_served ~= ratio * (inserts - min_size)  within
an error budget, blocking whichever side runs ahead.  Inserts before
min_size (the initial fill) are never blocked.  Used concurrently by
actor threads (insert) and the learner (sample); in synchronous mode the
non-blocking probes drive the interleaving instead.
"""

from __future__ import annotations

import threading
from collections import deque

import numpy as np


class ReplayClosed(Exception):
    pass


class ReplayBuffer:
    def __init__(self, capacity: int, ratio: float = 5.0,
                 min_size: int = 1000, error_buffer: float | None = None):
        if capacity < 1 or min_size < 1:
            raise ValueError("capacity and min_size must be positive")
        self.capacity = int(capacity)
        self.ratio = float(ratio)
        self.min_size = int(min_size)
        self.error_buffer = (ratio * 256 if error_buffer is None
                             else float(error_buffer))
        self._items: deque = deque()
        self._lock = threading.Lock()
        self._cv = threading.Condition(self._lock)
        self._next_seq = 0
        self._next_evict_seq = 0
        self._closed = False
        self.inserted = 0
        self.sampled = 0
        self.evicted = 0
        self.fifo_violations = 0

    def __len__(self) -> int:
        with self._lock:
            return len(self._items)

    # limiter predicates; callers hold the lock
    def _sample_ok(self, k: int) -> bool:
        if len(self._items) < max(self.min_size, k):
            return False
        budget = self.ratio * (self.inserted - self.min_size) + self.error_buffer
        return self.sampled + k <= budget

    def _insert_ok(self, k: int) -> bool:
        target = self.ratio * (self.inserted + k - self.min_size)
        return self.sampled >= target - self.error_buffer

    def can_sample(self, k: int) -> bool:
        with self._lock:
            return self._sample_ok(k)

    def can_insert(self, k: int = 1) -> bool:
        with self._lock:
            return self._insert_ok(k)

    def insert(self, items, block: bool = True, timeout: float | None = None,
               ) -> bool:
        """Append items in order.  Returns False on timeout or closure."""
        items = list(items)
        with self._cv:
            if block:
                ok = self._cv.wait_for(
                    lambda: self._closed or self._insert_ok(len(items)), timeout)
                if not ok or self._closed:
                    return False
            elif not self._insert_ok(len(items)):
                return False
            for item in items:
                self._items.append((self._next_seq, item))
                self._next_seq += 1
            self.inserted += len(items)
            while len(self._items) > self.capacity:
                seq, _ = self._items.popleft()
                if seq != self._next_evict_seq:
                    self.fifo_violations += 1
                self._next_evict_seq = seq + 1
                self.evicted += 1
            self._cv.notify_all()
        return True

    def sample(self, rng: np.random.Generator, batch_size: int,
               block: bool = True, timeout: float | None = None):
        """Uniform without replacement within the batch, or None."""
        with self._cv:
            if block:
                ok = self._cv.wait_for(
                    lambda: self._closed or self._sample_ok(batch_size), timeout)
                if not ok or self._closed:
                    return None
            elif not self._sample_ok(batch_size):
                return None
            idx = rng.choice(len(self._items), size=batch_size, replace=False)
            batch = [self._items[i][1] for i in idx]
            self.sampled += batch_size
            self._cv.notify_all()
        return batch

    def close(self) -> None:
        with self._cv:
            self._closed = True
            self._cv.notify_all()
