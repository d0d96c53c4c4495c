"""Depth accuracy metrics after per-frame least-squares alignment, and the
per-lag aggregation used for degradation curves and cycle averages."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import IO

import numpy as np

from .errors import DegenerateInputError, EmptyInputError, InvalidArgumentError, ShapeError
from .tensorcore import DepthMap, as_depth

RATIO_FLOOR = 1e-6
DELTA1_THRESHOLD = 1.25
CSV_HEADER = ("lag", "count", "absrel", "rmse", "delta1", "mean_t", "fastpath_pct")
_SUMS = CSV_HEADER[2:]


def _valid_pair(pred, gt):
    pred, gt = as_depth(pred), as_depth(gt)
    if pred.data.shape != gt.data.shape:
        raise ShapeError(f"prediction {pred.data.shape} and ground truth {gt.data.shape} differ")
    valid = pred.valid & gt.valid
    if not valid.any():
        raise EmptyInputError("no valid pixels")
    return pred.data[valid], gt.data[valid], pred, gt, valid


def lsq_coefficients(pred, gt) -> tuple[float, float]:
    """(a, b) minimising sum (a * pred + b - gt)^2 over valid pixels."""
    p, g, *_ = _valid_pair(pred, gt)
    if p.size < 2:
        raise EmptyInputError("alignment needs at least 2 valid pixels")
    pc = p - p.mean()
    var = np.dot(pc, pc)
    if var <= np.finfo(np.float64).tiny * p.size or np.ptp(p) == 0:
        raise DegenerateInputError("prediction is constant; alignment is undetermined")
    a = np.dot(pc, g - g.mean()) / var
    return float(a), float(g.mean() - a * p.mean())


def align_lsq(pred, gt) -> DepthMap:
    a, b = lsq_coefficients(pred, gt)
    pred = as_depth(pred)
    return DepthMap(a * pred.data + b, pred.mask)


def absrel(pred, gt) -> float:
    p, g, *_ = _valid_pair(pred, gt)
    p = np.maximum(p, RATIO_FLOOR)
    return float(np.mean(np.abs(p - g) / g))


def rmse(pred, gt) -> float:
    p, g, *_ = _valid_pair(pred, gt)
    return float(np.sqrt(np.mean((p - g) ** 2)))


def delta1(pred, gt) -> float:
    p, g, *_ = _valid_pair(pred, gt)
    p = np.maximum(p, RATIO_FLOOR)
    return float(np.mean(np.maximum(g / p, p / g) < DELTA1_THRESHOLD))


def evaluate(pred, gt) -> dict[str, float]:
    """Align, then compute all three metrics."""
    aligned = align_lsq(pred, gt)
    return {"absrel": absrel(aligned, gt), "rmse": rmse(aligned, gt), "delta1": delta1(aligned, gt)}


@dataclass
class LagProfile:
    n: int
    counts: np.ndarray = field(init=False)
    sums: dict[str, np.ndarray] = field(init=False)

    def __post_init__(self):
        if self.n < 1:
            raise InvalidArgumentError("refresh interval must be >= 1")
        self.counts = np.zeros(self.n, dtype=np.int64)
        self.sums = {k: np.zeros(self.n) for k in _SUMS}

    def add(self, lag: int, **values: float) -> "LagProfile":
        if not 0 <= lag < self.n:
            raise InvalidArgumentError(f"lag {lag} outside [0, {self.n - 1}]")
        self.counts[lag] += 1
        for k in _SUMS:
            self.sums[k][lag] += values.get(k, np.nan)
        return self

    def merge(self, other: "LagProfile") -> "LagProfile":
        if other.n != self.n:
            raise InvalidArgumentError("profiles have different intervals")
        self.counts += other.counts
        for k in _SUMS:
            self.sums[k] += other.sums[k]
        return self


def accumulate(profile: LagProfile, result, gt=None) -> LagProfile:
    """Add one frame result; ``gt`` defaults to the result's own ground truth."""
    gt = result.gt if gt is None else gt
    scores = evaluate(result.depth, gt)
    return profile.add(result.lag, mean_t=result.mean_t, fastpath_pct=result.fastpath_pct, **scores)


def cycle_average(profile: LagProfile):
    """Per-lag rows plus the count-weighted mean row; None when empty."""
    total = profile.counts.sum()
    if total == 0:
        return None
    rows = []
    for lag in range(profile.n):
        c = profile.counts[lag]
        if c == 0:
            continue
        rows.append({"lag": lag, "count": int(c), **{k: profile.sums[k][lag] / c for k in _SUMS}})
    avg = {"lag": "cycle_avg", "count": int(total), **{k: profile.sums[k].sum() / total for k in _SUMS}}
    return {"rows": rows, "cycle_avg": avg}


def _fmt(v) -> str:
    return v if isinstance(v, str) else str(v) if isinstance(v, (int, np.integer)) else f"{v:.6g}"


def write_lag_csv(summary, out: IO[str] | None = None) -> str:
    """Write the lag table as CSV; returns the text as well."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    if summary is not None:
        for row in summary["rows"] + [summary["cycle_avg"]]:
            w.writerow([_fmt(row[k]) for k in CSV_HEADER])
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text
