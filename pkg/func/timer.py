"""Wall-clock run timer."""

import datetime as dt
import time


class RunTimer:
    """
    Creates a timer object that remembers its start moment both as a timestamp (for manifests)
    and as a monotonic counter (for elapsed time measurements).
    """

    def __init__(self):
        self.__started_at: dt.datetime = dt.datetime.now(dt.timezone.utc)
        self.__start_counter: float = time.perf_counter()
        self.__lap_counter: float = self.__start_counter

    def __str__(self):
        return f"Attributes: {self.__dict__}"

    def elapsed(self) -> float:
        """
        Seconds since the start moment.
        :return: Elapsed wall time in seconds.
        """
        return time.perf_counter() - self.__start_counter

    def lap(self) -> float:
        """
        Lap timer.
        :return: Seconds since the previous lap (or the start). Starts a new lap.
        """
        now = time.perf_counter()
        lap_time = now - self.__lap_counter
        self.__lap_counter = now
        return lap_time

    def started_iso(self) -> str:
        return self.__started_at.isoformat(timespec='seconds')

    @staticmethod
    def now_iso() -> str:
        return dt.datetime.now(dt.timezone.utc).isoformat(timespec='seconds')
