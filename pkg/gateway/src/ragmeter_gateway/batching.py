"""Per-binding micro-batching.

Each binding owns one worker thread, which both serializes access to the
underlying model and lets concurrent requests ride in the same forward pass.
The worker drains whatever has queued up, concatenates the items, and runs
the model in slices of at most ``max_batch``; callers never see the merge.
A single oversized request is the caller's problem (rejected upstream), but
merged traffic above the cap is simply split across slices here.
"""

from __future__ import annotations

import queue
import threading
from typing import Callable, Sequence


class _Submission:
    __slots__ = ("items", "event", "results", "error")

    def __init__(self, items: Sequence):
        self.items = list(items)
        self.event = threading.Event()
        self.results: list | None = None
        self.error: BaseException | None = None


class MicroBatcher:
    """Runs ``fn(items) -> results`` on a dedicated thread, batched.

    ``fn`` must return one result per input item, in order.
    """

    def __init__(self, fn: Callable[[list], list], max_batch: int,
                 name: str = "batcher"):
        if max_batch < 1:
            raise ValueError("max_batch must be at least 1")
        self._fn = fn
        self._max_batch = max_batch
        self._queue: queue.Queue[_Submission | None] = queue.Queue()
        self._worker = threading.Thread(
            target=self._run, name=f"{name}-worker", daemon=True)
        self._worker.start()

    def submit(self, items: Sequence) -> list:
        """Blocks until results for ``items`` are ready."""
        sub = _Submission(items)
        if not sub.items:
            return []
        self._queue.put(sub)
        sub.event.wait()
        if sub.error is not None:
            raise sub.error
        assert sub.results is not None
        return sub.results

    def close(self) -> None:
        self._queue.put(None)
        self._worker.join(timeout=5)

    def _drain(self, first: _Submission) -> list[_Submission]:
        batch = [first]
        total = len(first.items)
        while total < self._max_batch:
            try:
                nxt = self._queue.get_nowait()
            except queue.Empty:
                break
            if nxt is None:
                # Put the shutdown marker back for the outer loop.
                self._queue.put(None)
                break
            batch.append(nxt)
            total += len(nxt.items)
        return batch

    def _run(self) -> None:
        while True:
            sub = self._queue.get()
            if sub is None:
                return
            batch = self._drain(sub)
            flat = [item for s in batch for item in s.items]
            try:
                outputs: list = []
                for start in range(0, len(flat), self._max_batch):
                    outputs.extend(self._fn(flat[start:start + self._max_batch]))
                if len(outputs) != len(flat):
                    raise RuntimeError(
                        f"model returned {len(outputs)} results for "
                        f"{len(flat)} inputs")
            except BaseException as exc:  # noqa: BLE001 - forwarded to callers
                for s in batch:
                    s.error = exc
                    s.event.set()
                continue
            offset = 0
            for s in batch:
                s.results = outputs[offset:offset + len(s.items)]
                offset += len(s.items)
                s.event.set()
