"""Fast path / slow path runtime.

The fast path runs project -> modulate -> smooth -> fuse -> commit -> decode
once per frame. Refreshes are described by a schedule ``{frame: source}``:
before processing ``frame``, memory is overwritten with the foundation
features of ``source``. Sync replay uses a fixed schedule; the async runner
discovers the schedule from whatever the slow path manages to publish, and
the same fast-path code executes it, so replaying an async log in sync mode
reproduces it exactly.
"""

from __future__ import annotations

import csv
import io
import logging
import threading
import time
from dataclasses import dataclass, replace
from typing import IO, Iterable, Sequence

import numpy as np

from .cache import SnapshotCache
from .errors import InvalidArgumentError, InvariantViolation, StateError
from .losses import LossConfig, total_loss
from .metrics import evaluate
from .modulator import ModulatorConfig, SmoothingState, constant_field, modulate, smooth
from .projector import ProjectorParams, project_all
from .smu import MemoryPyramid, commit, fastpath_fraction, fuse, init_memory, refresh
from .synthworld import FrameBundle, LinearDecoder
from .tensorcore import DepthMap, FeatureMap

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Model:
    """Everything the fast path needs besides memory and frames."""

    projector: ProjectorParams
    decoder: LinearDecoder
    modulator: ModulatorConfig = ModulatorConfig()
    trust_override: float | None = None  # constant T; 0.0 is the encoder-only ablation
    fastpath_threshold: float = 0.5
    supervised: bool = False
    loss: LossConfig = LossConfig()

    @property
    def sizes(self):
        return self.projector.sizes

    @classmethod
    def for_world(cls, world, **kw) -> "Model":
        return cls(world.projector_params(), world.decoder, **kw)


@dataclass(frozen=True)
class FastPathState:
    prev_obs: tuple[FeatureMap, ...] | None = None
    smoothing: SmoothingState = SmoothingState()
    source_frame: int | None = None
    cache_version: int = 0


@dataclass(eq=False)
class FrameResult:
    frame: int
    lag: int
    depth: DepthMap
    mean_t: float
    fastpath_pct: float
    cache_version: int = 0
    refreshed: bool = False
    source_frame: int = 0
    raw_t_l1_mean: float = float("nan")
    gt: DepthMap | None = None
    losses: dict[str, float] | None = None
    start: float = 0.0
    end: float = 0.0


def adopt(frame_source: FrameBundle, mem: MemoryPyramid | None, state: FastPathState, model: Model,
          version: int = 0) -> tuple[MemoryPyramid, FastPathState]:
    """Overwrite memory with ``frame_source``'s foundation features."""
    if mem is None:
        mem = init_memory(frame_source.foundation, model.sizes, model.projector.channels)
    else:
        mem = refresh(mem, frame_source.foundation)
    prev = tuple(project_all(frame_source.encoder, model.projector))
    return mem, replace(state, prev_obs=prev, source_frame=frame_source.t, cache_version=version)


def step_fast(frame: FrameBundle, mem: MemoryPyramid | None, state: FastPathState, model: Model,
              check: bool = True) -> tuple[FrameResult, MemoryPyramid, FastPathState]:
    if mem is None or state.source_frame is None:
        raise StateError("fast path called before memory was initialised")
    obs = tuple(project_all(frame.encoder, model.projector))
    prev = state.prev_obs if state.prev_obs is not None else obs
    raw, t_l1 = modulate(prev, obs, model.modulator, model.sizes)
    if model.trust_override is not None:
        raw = constant_field(model.trust_override, model.sizes)
    trust, smoothing = smooth(raw, state.smoothing, model.modulator.beta)
    if check and model.trust_override is None:
        for m in trust:
            if not (np.all(m.data > 0) and np.all(m.data < 1)):
                raise InvariantViolation(f"frame {frame.t}: trust left (0, 1) at level {m.level}")
    fused = fuse(mem, obs, trust)
    new_mem = commit(mem, fused)
    depth = model.decoder(fused)
    lag = frame.t - state.source_frame
    if check and lag < 0:
        raise InvariantViolation(f"frame {frame.t}: negative lag {lag}")
    losses = None
    if model.supervised:
        pseudo = model.decoder(frame.foundation)
        value, _, _ = total_loss(depth, pseudo, t_l1, model.loss)
        losses = {"loss_total": value}
    result = FrameResult(
        frame=frame.t,
        lag=lag,
        depth=depth,
        mean_t=float(trust.layer1.mean()),
        fastpath_pct=100.0 * fastpath_fraction(trust, model.fastpath_threshold),
        cache_version=state.cache_version,
        source_frame=state.source_frame,
        raw_t_l1_mean=float(t_l1.data.mean()),
        gt=frame.depth,
        losses=losses,
    )
    return result, new_mem, replace(state, prev_obs=obs, smoothing=smoothing)


class FastPath:
    """Stateful wrapper owning the working memory of one fast-path instance."""

    def __init__(self, model: Model, check: bool = True):
        self.model = model
        self.check = check
        self.memory: MemoryPyramid | None = None
        self.state = FastPathState()

    def adopt(self, source: FrameBundle, version: int = 0) -> None:
        self.memory, self.state = adopt(source, self.memory, self.state, self.model, version)

    def step(self, frame: FrameBundle) -> FrameResult:
        result, self.memory, self.state = step_fast(frame, self.memory, self.state, self.model, self.check)
        return result


# ---- sync replay ---------------------------------------------------------------

def sync_schedule(length: int, n: int) -> dict[int, int]:
    if n < 1:
        raise InvalidArgumentError("refresh interval must be >= 1")
    return {t: t for t in range(0, length, n)}


def replay(sequence: Sequence[FrameBundle], schedule: dict[int, int], model: Model,
           versions: dict[int, int] | None = None, check: bool = True) -> list[FrameResult]:
    """Run the fast path over ``sequence`` applying refreshes per ``schedule``."""
    if len(sequence) == 0:
        raise InvalidArgumentError("empty sequence")
    if 0 not in schedule:
        raise InvalidArgumentError("schedule must refresh at frame 0")
    fp = FastPath(model, check)
    out = []
    for i, frame in enumerate(sequence):
        if frame.t != i:
            raise InvalidArgumentError(f"sequence position {i} holds frame {frame.t}")
        refreshed = i in schedule
        if refreshed:
            src = schedule[i]
            if not 0 <= src <= i:
                raise InvalidArgumentError(f"frame {i} cannot refresh from future frame {src}")
            fp.adopt(sequence[src], (versions or {}).get(i, fp.state.cache_version + 1))
        res = fp.step(frame)
        res.refreshed = refreshed
        out.append(res)
    return out


def run_sync(sequence: Sequence[FrameBundle], model: Model, n: int, check: bool = True) -> list[FrameResult]:
    if len(sequence) == 0:
        raise InvalidArgumentError("empty sequence")
    results = replay(sequence, sync_schedule(len(sequence), n), model, check=check)
    if check:
        for r in results:
            if r.lag != r.frame % n:
                raise InvariantViolation(f"frame {r.frame}: lag {r.lag} != t mod N = {r.frame % n}")
    return results


def schedule_from_log(results: Iterable[FrameResult]) -> dict[int, int]:
    return {r.frame: r.source_frame for r in results if r.refreshed}


# ---- async ---------------------------------------------------------------------

def effective_interval(fast_rate: float, slow_rate: float) -> float:
    """Frames the fast path runs per slow-path refresh."""
    if not (fast_rate > 0 and slow_rate > 0):
        raise InvalidArgumentError(f"rates must be positive, got {fast_rate}, {slow_rate}")
    return fast_rate / slow_rate


@dataclass(frozen=True)
class AsyncConfig:
    fast_ms: float = 4.2
    slow_ms: float = 16.6
    virtual_clock: bool = True
    max_publishes: int | None = None  # counts the initial publish of frame 0
    stall: tuple[int, int] | None = None  # (after this many publishes, extra frames of delay)

    def __post_init__(self):
        if not (self.fast_ms > 0 and self.slow_ms > 0):
            raise InvalidArgumentError("latencies must be > 0")
        if self.max_publishes is not None and self.max_publishes < 1:
            raise InvalidArgumentError("max_publishes must be >= 1")
        if self.stall is not None and (self.stall[0] < 1 or self.stall[1] < 0):
            raise InvalidArgumentError("stall must be (publish count >= 1, frames >= 0)")


def _snapshot(frame: FrameBundle) -> list[np.ndarray]:
    return [f.data for f in frame.foundation]


def _adopt_from_cache(fp: FastPath, got, sequence) -> bool:
    if got is None or got.version == fp.state.cache_version:
        return False
    if got.version < fp.state.cache_version:
        raise InvariantViolation(f"cache version went backwards: {got.version} < {fp.state.cache_version}")
    source = sequence[got.meta]
    # the snapshot is the source frame's foundation features
    snap = FrameBundle(source.t, source.depth,
                       tuple(FeatureMap(a, lvl) for lvl, a in enumerate(got.arrays, start=1)), source.encoder)
    fp.adopt(snap, got.version)
    return True


def run_async(sequence: Sequence[FrameBundle], model: Model, cfg: AsyncConfig = AsyncConfig(),
              cache: SnapshotCache | None = None, check: bool = True) -> list[FrameResult]:
    if len(sequence) == 0:
        raise InvalidArgumentError("empty sequence")
    cache = cache or SnapshotCache()
    if cfg.virtual_clock:
        return _run_async_virtual(sequence, model, cfg, cache, check)
    return _run_async_wall(sequence, model, cfg, cache, check)


def _run_async_virtual(sequence, model, cfg: AsyncConfig, cache: SnapshotCache, check) -> list[FrameResult]:
    # integer microseconds so event ordering is exact
    lf = int(round(cfg.fast_ms * 1000))
    ls = int(round(cfg.slow_ms * 1000))
    n = len(sequence)
    cache.publish(_snapshot(sequence[0]), meta=0)  # initialisation phase
    publishes = 1
    last_src = 0
    free_at = 0
    pending: tuple[int, int] | None = None  # (source frame, completion time)

    def advance(now: int) -> None:
        nonlocal publishes, last_src, free_at, pending
        while True:
            if pending is not None:
                src, done = pending
                if done > now:
                    return
                cache.publish(_snapshot(sequence[src]), meta=src)
                publishes += 1
                free_at, last_src, pending = done, src, None
                continue
            if cfg.max_publishes is not None and publishes >= cfg.max_publishes:
                return
            if last_src + 1 >= n:
                return
            start = max(free_at, (last_src + 1) * lf)
            newest = min(start // lf, n - 1)
            extra = cfg.stall[1] * lf if cfg.stall and publishes == cfg.stall[0] else 0
            pending = (newest, start + ls + extra)

    fp = FastPath(model, check)
    out = []
    for i, frame in enumerate(sequence):
        start = i * lf
        advance(start)
        refreshed = _adopt_from_cache(fp, cache.read_latest(), sequence)
        res = fp.step(frame)
        res.refreshed = refreshed
        res.start, res.end = start / 1000.0, (start + lf) / 1000.0
        out.append(res)
    return out


def _run_async_wall(sequence, model, cfg: AsyncConfig, cache: SnapshotCache, check) -> list[FrameResult]:
    newest = [0]
    stop = threading.Event()
    cache.publish(_snapshot(sequence[0]), meta=0)
    count = [1]

    def slow_path():
        last = 0
        while not stop.is_set():
            if cfg.max_publishes is not None and count[0] >= cfg.max_publishes:
                return
            src = newest[0]
            if src == last:
                time.sleep(cfg.fast_ms / 4000.0)
                continue
            delay = cfg.slow_ms / 1000.0
            if cfg.stall and count[0] == cfg.stall[0]:
                delay += cfg.stall[1] * cfg.fast_ms / 1000.0
            if stop.wait(delay):
                return
            cache.publish(_snapshot(sequence[src]), meta=src)
            count[0] += 1
            last = src

    th = threading.Thread(target=slow_path, name="slow-path", daemon=True)
    th.start()
    fp = FastPath(model, check)
    out = []
    t0 = time.perf_counter()
    try:
        for i, frame in enumerate(sequence):
            target = t0 + i * cfg.fast_ms / 1000.0
            delay = target - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
            newest[0] = i
            begin = time.perf_counter()
            refreshed = _adopt_from_cache(fp, cache.read_latest(), sequence)
            res = fp.step(frame)
            res.refreshed = refreshed
            res.start = (begin - t0) * 1000.0
            res.end = (time.perf_counter() - t0) * 1000.0
            out.append(res)
    finally:
        stop.set()
        th.join()
    return out


def adoption_lags(results: Sequence[FrameResult]) -> list[int]:
    """Lag at each refresh adoption after the initial one."""
    return [r.lag for r in results if r.refreshed and r.frame > 0]


# ---- run log -------------------------------------------------------------------

LOG_FIELDS = ("frame", "lag", "cache_version", "refreshed", "source_frame", "mean_t", "fastpath_pct",
              "absrel", "rmse", "delta1")


def frame_records(results: Sequence[FrameResult], timing: bool = False) -> list[dict]:
    rows = []
    for r in results:
        row = {"frame": r.frame, "lag": r.lag, "cache_version": r.cache_version, "refreshed": int(r.refreshed),
               "source_frame": r.source_frame, "mean_t": r.mean_t, "fastpath_pct": r.fastpath_pct}
        if r.gt is not None:
            row.update(evaluate(r.depth, r.gt))
        if r.losses:
            row.update(r.losses)
        if timing:
            row.update(start_ms=r.start, end_ms=r.end)
        rows.append(row)
    return rows


def write_frame_log(results: Sequence[FrameResult], out: IO[str] | None = None, timing: bool = False) -> str:
    rows = frame_records(results, timing)
    fields = list(LOG_FIELDS)
    for row in rows:
        for k in row:
            if k not in fields:
                fields.append(k)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n", restval="")
    w.writeheader()
    for row in rows:
        w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in row.items()})
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text
