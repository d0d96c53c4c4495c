"""Channel-then-space alignment of encoder observations to memory geometry."""

from __future__ import annotations

from dataclasses import dataclass
from os import PathLike
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError
from .tensorcore import FeatureMap, LEVELS, bilinear_resize, pointwise_linear, read_array, write_array


@dataclass(frozen=True)
class ProjectorParams:
    """Per-level 1x1 weights (C_mem x C_in), biases and memory sizes (h, w)."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    sizes: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.sizes) == 4):
            raise InvalidArgumentError("projector needs exactly 4 levels")
        ws = tuple(np.asarray(w, dtype=np.float64) for w in self.weights)
        bs = tuple(np.asarray(b, dtype=np.float64) for b in self.biases)
        c_out = {w.shape[0] for w in ws}
        if len(c_out) != 1:
            raise InvalidArgumentError(f"all levels must project to one channel count, got {sorted(c_out)}")
        for w, b in zip(ws, bs):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise InvalidArgumentError("each level needs a C_out x C_in matrix and a C_out bias")
        for w in ws:
            w.flags.writeable = False
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)
        object.__setattr__(self, "sizes", tuple((int(h), int(w)) for h, w in self.sizes))

    @property
    def channels(self) -> int:
        return self.weights[0].shape[0]

    def in_channels(self, level: int) -> int:
        return self.weights[level - 1].shape[1]

    @classmethod
    def identity(cls, channels: int, sizes: Sequence[tuple[int, int]]) -> "ProjectorParams":
        eye = np.eye(channels)
        zero = np.zeros(channels)
        return cls((eye,) * 4, (zero,) * 4, tuple(sizes))

    def save(self, directory: str | PathLike) -> None:
        """One file per level: a C_out x (C_in + 1) tensor, bias in the last column."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for lvl, (w, b) in enumerate(zip(self.weights, self.biases), start=1):
            write_array(directory / f"projector_l{lvl}.amde", np.column_stack([w, b]))

    @classmethod
    def load(cls, directory: str | PathLike, sizes: Sequence[tuple[int, int]]) -> "ProjectorParams":
        directory = Path(directory)
        ws, bs = [], []
        for lvl in LEVELS:
            packed = read_array(directory / f"projector_l{lvl}.amde", ndim=2).astype(np.float64)
            ws.append(packed[:, :-1])
            bs.append(packed[:, -1])
        return cls(tuple(ws), tuple(bs), tuple(sizes))


def project(level: int, obs: FeatureMap, params: ProjectorParams) -> FeatureMap:
    if level not in LEVELS:
        raise InvalidArgumentError(f"unknown level {level}")
    if obs.channels != params.in_channels(level):
        raise InvalidArgumentError(
            f"level {level} expects {params.in_channels(level)} channels, got {obs.channels}")
    mapped = pointwise_linear(obs, params.weights[level - 1], params.biases[level - 1])
    h, w = params.sizes[level - 1]
    out = bilinear_resize(mapped, h, w)
    return FeatureMap(out.data, level)


def project_all(obs: Sequence[FeatureMap], params: ProjectorParams) -> list[FeatureMap]:
    return [project(lvl, f, params) for lvl, f in zip(LEVELS, obs)]
