"""Single-writer, multi-reader snapshot cache.

Two preallocated slots. The writer fills the back slot and then publishes
it with one reference store of ``(version, slot)``; readers copy from the
published slot and retry if the writer lapped them (detected with a
per-slot sequence counter that is odd while a write is in progress). No
reader ever takes a lock or waits on the writer, and the writer never waits
on readers.
"""

from __future__ import annotations

import threading
import time
import zlib
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True, eq=False)
class CacheRead:
    version: int
    meta: Any
    arrays: list[np.ndarray]
    retries: int = 0


class _Slot:
    __slots__ = ("seq", "version", "meta", "arrays")

    def __init__(self):
        self.seq = 0
        self.version = 0
        self.meta = None
        self.arrays: list[np.ndarray] | None = None


class SnapshotCache:
    def __init__(self):
        self._slots = (_Slot(), _Slot())
        self._published: tuple[int, int] | None = None
        # writer-private
        self._version = 0
        self._front = 1

    @property
    def version(self) -> int:
        pub = self._published
        return 0 if pub is None else pub[0]

    def publish(self, arrays: Sequence[np.ndarray], meta: Any = None) -> int:
        """Publish a snapshot; must only be called from the single writer."""
        back = 1 - self._front
        slot = self._slots[back]
        if slot.arrays is None:
            slot.arrays = [np.empty_like(np.asarray(a)) for a in arrays]
            other = self._slots[self._front]
            if other.arrays is None:
                other.arrays = [np.empty_like(np.asarray(a)) for a in arrays]
        if len(arrays) != len(slot.arrays) or any(np.shape(a) != b.shape for a, b in zip(arrays, slot.arrays)):
            raise InvalidArgumentError("snapshot layout changed between publishes")
        version = self._version + 1
        slot.seq += 1
        for dst, src in zip(slot.arrays, arrays):
            np.copyto(dst, src)
        slot.meta = meta
        slot.version = version
        slot.seq += 1
        self._version = version
        self._front = back
        self._published = (version, back)
        return version

    def read_latest(self) -> CacheRead | None:
        """Copy of the newest complete snapshot, or None before the first publish."""
        retries = 0
        while True:
            pub = self._published
            if pub is None:
                return None
            version, idx = pub
            slot = self._slots[idx]
            s1 = slot.seq
            if not s1 & 1:
                arrays = [a.copy() for a in slot.arrays]
                meta, sv = slot.meta, slot.version
                if slot.seq == s1 and sv == version:
                    return CacheRead(version, meta, arrays, retries)
            retries += 1


def checksum(arrays: Sequence[np.ndarray]) -> int:
    crc = 0
    for a in arrays:
        crc = zlib.crc32(np.ascontiguousarray(a).tobytes(), crc)
    return crc


def pattern_snapshot(version: int, shapes: Sequence[tuple[int, ...]]) -> list[np.ndarray]:
    """Deterministic per-version payload for torn-read checks."""
    return [np.full(s, float(version)) + np.arange(int(np.prod(s))).reshape(s) * 1e-3 + i
            for i, s in enumerate(shapes)]


@dataclass
class BenchReport:
    mode: str
    iterations: int
    publishes: int
    reads: int
    empty_reads: int
    torn_reads: int
    retries: int
    max_read_us: float
    mean_read_us: float
    publish_per_s: float
    read_per_s: float

    @property
    def verdict(self) -> str:
        return "PASS" if self.torn_reads == 0 else "FAIL"

    def lines(self) -> list[str]:
        return [f"{k} = {v:.6g}" if isinstance(v, float) else f"{k} = {v}"
                for k, v in self.__dict__.items()] + [f"torn_read_verdict = {self.verdict}"]


def stress(iterations: int = 100_000, *, publishes: bool = True, threaded: bool = True,
           shapes: Sequence[tuple[int, ...]] = ((4, 8, 8), (4, 4, 4)), switch_interval: float = 1e-6,
           cache: SnapshotCache | None = None) -> BenchReport:
    """Interleave publishes and reads; every read is checked against the
    checksum recorded for its version before that version was published.

    ``iterations`` counts all operations; with ``threaded`` one writer thread
    and one reader thread split them, otherwise they alternate in-line.
    """
    import sys

    cache = cache or SnapshotCache()
    expected: dict[int, int] = {}
    stats = {"reads": 0, "empty": 0, "torn": 0, "retries": 0, "max": 0.0, "total": 0.0, "pubs": 0}
    last_seen = [0]

    def do_read():
        t0 = time.perf_counter()
        got = cache.read_latest()
        dt = time.perf_counter() - t0
        stats["reads"] += 1
        stats["max"] = max(stats["max"], dt)
        stats["total"] += dt
        if got is None:
            stats["empty"] += 1
            return
        stats["retries"] += got.retries
        if checksum(got.arrays) != expected.get(got.version) or got.version < last_seen[0]:
            stats["torn"] += 1
        last_seen[0] = got.version

    def do_publish():
        v = cache.version + 1
        snap = pattern_snapshot(v, shapes)
        expected[v] = checksum(snap)
        cache.publish(snap, meta=v)
        stats["pubs"] += 1

    n_pub = iterations // 2 if publishes else 0
    n_read = iterations - n_pub
    pub_time = [0.0]
    if threaded and publishes:
        old = sys.getswitchinterval()
        sys.setswitchinterval(switch_interval)

        def writer():
            t0 = time.perf_counter()
            for _ in range(n_pub):
                do_publish()
            pub_time[0] = time.perf_counter() - t0

        try:
            th = threading.Thread(target=writer)
            th.start()
            for _ in range(n_read):
                do_read()
            th.join()
        finally:
            sys.setswitchinterval(old)
    else:
        for i in range(iterations):
            if i % 2 == 0 and stats["pubs"] < n_pub:
                t0 = time.perf_counter()
                do_publish()
                pub_time[0] += time.perf_counter() - t0
            else:
                do_read()
    reads = stats["reads"]
    return BenchReport(
        mode="threaded" if threaded and publishes else "single-threaded",
        iterations=iterations,
        publishes=stats["pubs"],
        reads=reads,
        empty_reads=stats["empty"],
        torn_reads=stats["torn"],
        retries=stats["retries"],
        max_read_us=stats["max"] * 1e6,
        mean_read_us=stats["total"] / max(reads, 1) * 1e6,
        publish_per_s=stats["pubs"] / pub_time[0] if pub_time[0] > 0 else 0.0,
        read_per_s=reads / stats["total"] if stats["total"] > 0 else 0.0,
    )
