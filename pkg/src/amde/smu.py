"""Spatial memory: complementary fusion, autoregressive update, refresh, and
the decay / occupancy diagnostics."""

from __future__ import annotations

from dataclasses import dataclass
from os import PathLike
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError, ShapeError
from .modulator import ModulationField
from .tensorcore import LEVELS, FeatureMap, tensor_read, tensor_write

FOUNDATION = "foundation-refresh"
AUTOREGRESSIVE = "autoregressive"


@dataclass(frozen=True, eq=False)
class MemoryPyramid:
    levels: tuple[FeatureMap, ...]
    t: int = 0
    origin: str = FOUNDATION

    def __post_init__(self):
        levels = tuple(self.levels)
        if len(levels) != 4:
            raise InvalidArgumentError(f"memory needs 4 levels, got {len(levels)}")
        if len({m.channels for m in levels}) != 1:
            raise ShapeError("memory channel count must be uniform across levels")
        object.__setattr__(self, "levels", levels)

    @property
    def channels(self) -> int:
        return self.levels[0].channels

    @property
    def sizes(self) -> tuple[tuple[int, int], ...]:
        return tuple(m.size for m in self.levels)

    def save(self, directory: str | PathLike) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for lvl, m in zip(LEVELS, self.levels):
            tensor_write(directory / f"memory_l{lvl}.amde", m)

    @classmethod
    def load(cls, directory: str | PathLike, t: int = 0, origin: str = FOUNDATION) -> "MemoryPyramid":
        directory = Path(directory)
        return cls(tuple(tensor_read(directory / f"memory_l{lvl}.amde", FeatureMap, lvl) for lvl in LEVELS),
                   t, origin)


def _check_levels(ref: Sequence[FeatureMap], other: Sequence[FeatureMap], what: str) -> None:
    if len(other) != 4:
        raise InvalidArgumentError(f"{what} needs 4 levels, got {len(other)}")
    for lvl, (a, b) in enumerate(zip(ref, other), start=1):
        if a.data.shape != b.data.shape:
            raise ShapeError(f"{what} level {lvl}: shape {b.data.shape} != memory {a.data.shape}")


def init_memory(features: Sequence[FeatureMap], sizes: Sequence[tuple[int, int]] | None = None,
                channels: int | None = None) -> MemoryPyramid:
    features = tuple(features)
    if len(features) != 4:
        raise InvalidArgumentError(f"memory needs 4 levels, got {len(features)}")
    if sizes is not None:
        for lvl, (f, s) in enumerate(zip(features, sizes), start=1):
            if f.size != tuple(s):
                raise ShapeError(f"level {lvl}: features {f.size} != configured size {tuple(s)}")
    if channels is not None and any(f.channels != channels for f in features):
        raise ShapeError(f"features must have {channels} channels")
    return MemoryPyramid(tuple(FeatureMap(f.data.copy(), lvl) for lvl, f in zip(LEVELS, features)), 0, FOUNDATION)


def fuse(mem: MemoryPyramid, obs: Sequence[FeatureMap], trust: ModulationField) -> list[FeatureMap]:
    """T * M + (1 - T) * obs per level, single-channel T broadcast over channels."""
    _check_levels(mem.levels, obs, "observation")
    if len(trust) != 4:
        raise InvalidArgumentError("trust field needs 4 levels")
    out = []
    for m, o, t in zip(mem.levels, obs, trust):
        if t.size != m.size:
            raise ShapeError(f"trust {t.size} != memory {m.size} at level {m.level}")
        w = t.data
        fused = w * m.data + (1.0 - w) * o.data
        # rounding can land one ulp outside the hull of (M, obs)
        fused = np.clip(fused, np.minimum(m.data, o.data), np.maximum(m.data, o.data))
        out.append(FeatureMap(fused, m.level))
    return out


def commit(mem: MemoryPyramid, fused: Sequence[FeatureMap]) -> MemoryPyramid:
    _check_levels(mem.levels, fused, "fused output")
    return MemoryPyramid(tuple(fused), mem.t + 1, AUTOREGRESSIVE)


def refresh(mem: MemoryPyramid, foundation: Sequence[FeatureMap]) -> MemoryPyramid:
    _check_levels(mem.levels, foundation, "foundation features")
    return MemoryPyramid(tuple(FeatureMap(f.data.copy(), m.level) for m, f in zip(mem.levels, foundation)),
                         mem.t, FOUNDATION)


def decay_weight(history: Sequence[ModulationField | np.ndarray | FeatureMap], level: int = 1) -> np.ndarray:
    """Per-pixel weight of the initial memory after the given trust history:
    the running product of the level's trust maps."""
    if len(history) == 0:
        raise InvalidArgumentError("decay_weight needs a non-empty history")
    if level not in LEVELS:
        raise InvalidArgumentError(f"unknown level {level}")
    out = None
    for item in history:
        if isinstance(item, ModulationField):
            item = item[level - 1]
        field = item.data[0] if isinstance(item, FeatureMap) else np.asarray(item, dtype=np.float64)
        out = field.copy() if out is None else out * field
    return out


def fastpath_fraction(trust: ModulationField | np.ndarray, threshold: float = 0.5) -> float:
    """Share of layer-1 pixels whose trust is below ``threshold``."""
    if not 0 < threshold < 1:
        raise InvalidArgumentError(f"threshold must be in (0, 1), got {threshold}")
    t1 = trust.layer1 if isinstance(trust, ModulationField) else np.asarray(trust)
    return float(np.mean(t1 < threshold))
