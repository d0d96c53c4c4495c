"""Per-pixel trust field: two-scale change detection, semantic gating,
pyramid distribution and temporal smoothing."""

from __future__ import annotations

from dataclasses import dataclass
from os import PathLike
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError, ShapeError
from .tensorcore import (
    FeatureMap,
    concat_channels,
    conv2d_small,
    read_array,
    resize_array,
    sigmoid,
    sigmoid_map,
    write_array,
)


@dataclass(frozen=True)
class ConvGate:
    """Weights of one trust network: a single 3x3 conv to one channel."""

    kernel: np.ndarray  # 1 x 2C x 3 x 3
    bias: np.ndarray  # (1,)

    def __post_init__(self):
        kernel = np.asarray(self.kernel, dtype=np.float64)
        bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if kernel.ndim != 4 or kernel.shape[0] != 1 or kernel.shape[2:] != (3, 3):
            raise InvalidArgumentError(f"gate kernel must be 1 x C_in x 3 x 3, got {kernel.shape}")
        if bias.shape != (1,):
            raise InvalidArgumentError("gate bias must be a single value")
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "bias", bias)

    @classmethod
    def constant(cls, in_channels: int, bias: float = 0.0) -> "ConvGate":
        return cls(np.zeros((1, in_channels, 3, 3)), np.array([bias]))

    def save(self, path: str | PathLike) -> None:
        # 1 x (C_in*9 + 1): flattened kernel, bias last
        write_array(path, np.append(self.kernel.reshape(-1), self.bias)[None, :])

    @classmethod
    def load(cls, path: str | PathLike) -> "ConvGate":
        packed = read_array(path, ndim=2).astype(np.float64).reshape(-1)
        c_in, rem = divmod(packed.size - 1, 9)
        if rem or c_in < 1:
            raise InvalidArgumentError(f"{path}: {packed.size} values is not C_in*9 + 1")
        return cls(packed[:-1].reshape(1, c_in, 3, 3), packed[-1:])


@dataclass(frozen=True)
class ModulatorConfig:
    temperature: float = 4.0
    beta: float = 0.5
    h1: ConvGate | None = None
    h4: ConvGate | None = None
    # used for a scale whose gate network is None
    ref_a: float = 3.0
    ref_b: float = 8.0

    def __post_init__(self):
        if not self.temperature > 0:
            raise InvalidArgumentError(f"temperature must be > 0, got {self.temperature}")
        if not 0 < self.beta <= 1:
            raise InvalidArgumentError(f"beta must be in (0, 1], got {self.beta}")


class ModulationField(tuple):
    """Four single-channel trust maps, index 0 = level 1."""

    def __new__(cls, maps: Sequence[FeatureMap]):
        maps = tuple(maps)
        if len(maps) != 4:
            raise InvalidArgumentError(f"a modulation field has 4 levels, got {len(maps)}")
        for m in maps:
            if m.channels != 1:
                raise ShapeError("trust maps are single-channel")
        return super().__new__(cls, maps)

    @property
    def layer1(self) -> np.ndarray:
        return self[0].data[0]


@dataclass(frozen=True)
class SmoothingState:
    fields: tuple[np.ndarray, ...] | None = None


def _convex(w: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # w*a + (1-w)*b, held inside [min(a,b), max(a,b)] against rounding
    out = w * a + (1.0 - w) * b
    return np.clip(out, np.minimum(a, b), np.maximum(a, b))


def scale_trust(prev: FeatureMap, curr: FeatureMap, gate: ConvGate) -> FeatureMap:
    if prev.data.shape != curr.data.shape:
        raise ShapeError(f"prev {prev.data.shape} and curr {curr.data.shape} differ")
    stacked = concat_channels(prev, curr)
    return sigmoid_map(conv2d_small(stacked, gate.kernel, gate.bias))


def reference_modulator(prev: FeatureMap, curr: FeatureMap, a: float = 3.0, b: float = 8.0) -> FeatureMap:
    """sigmoid(a - b * ||prev - curr||^2) per pixel."""
    if prev.data.shape != curr.data.shape:
        raise ShapeError(f"prev {prev.data.shape} and curr {curr.data.shape} differ")
    dist2 = np.sum((prev.data - curr.data) ** 2, axis=0, keepdims=True)
    return FeatureMap(sigmoid(a - b * dist2), curr.level)


def semantic_gate(t_l1: FeatureMap, t_l4: FeatureMap, cfg: ModulatorConfig) -> FeatureMap:
    if t_l1.channels != 1 or t_l4.channels != 1:
        raise ShapeError("trust maps are single-channel")
    t4_up = resize_array(t_l4.data, *t_l1.size)
    g = sigmoid(cfg.temperature * (t4_up - 0.5))
    return FeatureMap(_convex(g, t_l1.data, t4_up), 1)


def distribute(t_final: FeatureMap, sizes: Sequence[tuple[int, int]]) -> ModulationField:
    if t_final.size != tuple(sizes[0]):
        raise ShapeError(f"T_final is {t_final.size}, level-1 size is {tuple(sizes[0])}")
    maps = [t_final]
    for lvl, (h, w) in enumerate(sizes[1:], start=2):
        maps.append(FeatureMap(resize_array(t_final.data, h, w), lvl))
    return ModulationField(maps)


def smooth(raw: ModulationField, state: SmoothingState, beta: float) -> tuple[ModulationField, SmoothingState]:
    if not 0 < beta <= 1:
        raise InvalidArgumentError(f"beta must be in (0, 1], got {beta}")
    if state.fields is None:
        return raw, SmoothingState(tuple(m.data for m in raw))
    if len(state.fields) != len(raw):
        raise InvalidArgumentError(f"state has {len(state.fields)} levels, field has {len(raw)}")
    out = []
    for m, prev in zip(raw, state.fields):
        if prev.shape != m.data.shape:
            raise ShapeError(f"smoothing state {prev.shape} does not match field {m.data.shape}")
        out.append(FeatureMap(_convex(beta, m.data, prev), m.level))
    return ModulationField(out), SmoothingState(tuple(m.data for m in out))


def level_trust(prev: FeatureMap, curr: FeatureMap, gate: ConvGate | None, cfg: ModulatorConfig) -> FeatureMap:
    if gate is None:
        return reference_modulator(prev, curr, cfg.ref_a, cfg.ref_b)
    return scale_trust(prev, curr, gate)


def modulate(prev: Sequence[FeatureMap], curr: Sequence[FeatureMap], cfg: ModulatorConfig,
             sizes: Sequence[tuple[int, int]]) -> tuple[ModulationField, FeatureMap]:
    """Raw (unsmoothed) trust pyramid from projected features of two frames.

    Returns the distributed field and the layer-1 scale trust ``T_L1``.
    """
    t_l1 = level_trust(prev[0], curr[0], cfg.h1, cfg)
    t_l4 = level_trust(prev[3], curr[3], cfg.h4, cfg)
    t_final = semantic_gate(t_l1, t_l4, cfg)
    return distribute(t_final, sizes), t_l1


def constant_field(value: float, sizes: Sequence[tuple[int, int]]) -> ModulationField:
    """Uniform trust pyramid; values 0 and 1 are allowed here for ablations."""
    return ModulationField(FeatureMap(np.full((1, h, w), float(value)), lvl)
                           for lvl, (h, w) in enumerate(sizes, start=1))
