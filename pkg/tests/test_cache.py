import numpy as np
import pytest

from amde.cache import SnapshotCache, checksum, pattern_snapshot, stress
from amde.errors import InvalidArgumentError

SHAPES = ((3, 4, 4), (3, 2, 2))


def test_empty_read_is_none():
    assert SnapshotCache().read_latest() is None
    assert SnapshotCache().version == 0


def test_publish_then_read_is_bit_equal():
    cache = SnapshotCache()
    snap = pattern_snapshot(1, SHAPES)
    v = cache.publish(snap, meta="frame 0")
    got = cache.read_latest()
    assert v == 1 and got.version == 1 and got.meta == "frame 0"
    for a, b in zip(got.arrays, snap):
        assert np.array_equal(a, b)


def test_read_is_a_private_copy():
    cache = SnapshotCache()
    cache.publish(pattern_snapshot(1, SHAPES))
    got = cache.read_latest()
    got.arrays[0][:] = -1
    assert checksum(cache.read_latest().arrays) == checksum(pattern_snapshot(1, SHAPES))


def test_publisher_may_reuse_its_buffers():
    cache = SnapshotCache()
    buf = pattern_snapshot(1, SHAPES)
    cache.publish(buf)
    buf[0][:] = 99.0  # writer scribbles on its own array after publishing
    assert checksum(cache.read_latest().arrays) == checksum(pattern_snapshot(1, SHAPES))


def test_versions_monotone_and_repeatable():
    cache = SnapshotCache()
    seen = []
    for v in range(1, 6):
        cache.publish(pattern_snapshot(v, SHAPES), meta=v)
        a, b = cache.read_latest(), cache.read_latest()
        assert a.version == b.version == v
        seen.append(a.version)
    assert seen == sorted(seen)


def test_writer_only_touches_the_back_slot():
    cache = SnapshotCache()
    cache.publish(pattern_snapshot(1, SHAPES), meta=1)
    _, front = cache._published
    before = [a.copy() for a in cache._slots[front].arrays]
    cache.publish(pattern_snapshot(2, SHAPES), meta=2)
    for a, b in zip(cache._slots[front].arrays, before):
        assert np.array_equal(a, b)


def test_layout_change_rejected():
    cache = SnapshotCache()
    cache.publish(pattern_snapshot(1, SHAPES))
    with pytest.raises(InvalidArgumentError):
        cache.publish(pattern_snapshot(2, ((3, 4, 4),)))


def test_checksum_detects_a_torn_snapshot():
    # a single-buffer cache updated array by array: a read between the two
    # copies returns version-2 data in slot 0 and version-1 data in slot 1
    arrays = [a.copy() for a in pattern_snapshot(1, SHAPES)]
    expected = {1: checksum(arrays)}
    new = pattern_snapshot(2, SHAPES)
    expected[2] = checksum(new)
    np.copyto(arrays[0], new[0])
    torn = [a.copy() for a in arrays]
    assert checksum(torn) not in expected.values()


def test_zero_publishes_reports_empty_reads():
    report = stress(1000, publishes=False, threaded=True)
    assert report.empty_reads == report.reads == 1000
    assert report.torn_reads == 0


def test_single_threaded_has_no_torn_reads():
    report = stress(2000, threaded=False)
    assert report.torn_reads == 0 and report.publishes == 1000
    assert report.verdict == "PASS"


def test_threaded_stress_no_torn_reads():
    report = stress(20_000, threaded=True)
    assert report.torn_reads == 0
    assert report.publishes == 10_000 and report.reads == 10_000
    assert any(line == "torn_read_verdict = PASS" for line in report.lines())
