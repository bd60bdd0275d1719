"""Wall-clock timing for sweep points and runs."""

import time
from typing import Optional


class Timer:
    """Context manager measuring elapsed wall time with a monotonic clock."""

    def __init__(self):
        self.start_time: Optional[float] = None
        self.end_time: Optional[float] = None

    def __enter__(self) -> 'Timer':
        self.start_time = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.end_time = time.perf_counter()

    @property
    def elapsed_seconds(self) -> float:
        """Elapsed seconds; readable while the block is still running."""
        if self.start_time is None:
            raise ValueError("Timer not started")
        end = self.end_time if self.end_time is not None else time.perf_counter()
        return end - self.start_time
