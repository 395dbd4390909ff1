"""Dynamic time warping kernels.

Full-matrix DTW with an optional Sakoe-Chiba band, streaming Spring column
updates with subsequence start pointers, and greedy traceback. The inner
loops are compiled with numba; the Python wrappers own validation and the
result types.
"""
import math
from dataclasses import dataclass
from typing import Optional

import numba as nb
import numpy as np

from src.errors import ConfigurationError, NoPathError
from src.logging_config import get_logger

logger = get_logger(__name__)

# no fastmath: costs are compared exactly against reference values
jitkw = {
    "nopython": True,
    "nogil": True,
    "cache": False,
    "error_model": "numpy",
}

UNCONSTRAINED = -1


@nb.jit(**jitkw)
def _accumulate(x, y, band, squared):
    n = x.shape[0]
    m = y.shape[0]
    cells = np.full((n, m), np.inf, dtype=np.float64)

    for i in range(n):
        if band < 0:
            lo, hi = 0, m
        else:
            lo, hi = max(0, i - band), min(m, i + band + 1)
        for j in range(lo, hi):
            diff = x[i] - y[j]
            cost = diff * diff if squared else abs(diff)
            if i == 0 and j == 0:
                cells[i, j] = cost
                continue
            best = np.inf
            if i > 0 and j > 0:
                best = cells[i - 1, j - 1]
            if i > 0 and cells[i - 1, j] < best:
                best = cells[i - 1, j]
            if j > 0 and cells[i, j - 1] < best:
                best = cells[i, j - 1]
            cells[i, j] = cost + best
    return cells


@nb.jit(**jitkw)
def _traceback(cells, end_i):
    m = cells.shape[1]
    i = end_i
    j = m - 1
    path = np.empty((end_i + m, 2), dtype=np.int64)
    k = 0
    path[k, 0] = i
    path[k, 1] = j
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag = cells[i - 1, j - 1]
            up = cells[i - 1, j]
            left = cells[i, j - 1]
            # diagonal > vertical > horizontal on ties
            if diag <= up and diag <= left:
                i -= 1
                j -= 1
            elif up <= left:
                i -= 1
            else:
                j -= 1
        k += 1
        path[k, 0] = i
        path[k, 1] = j
    return path[: k + 1][::-1].copy()


@nb.jit(**jitkw)
def _spring_step(acc, start, x_t, y, t, squared):
    m = y.shape[0]
    diff = x_t - y[0]
    diag = acc[0]
    diag_start = start[0]
    acc[0] = diff * diff if squared else abs(diff)
    start[0] = t
    for j in range(1, m):
        diff = x_t - y[j]
        cost = diff * diff if squared else abs(diff)
        old = acc[j]
        old_start = start[j]
        best = diag
        best_start = diag_start
        if old < best:
            best = old
            best_start = old_start
        if acc[j - 1] < best:
            best = acc[j - 1]
            best_start = start[j - 1]
        acc[j] = cost + best
        start[j] = best_start
        diag = old
        diag_start = old_start


@nb.jit(**jitkw)
def _spring_scan(x, y, squared):
    n = x.shape[0]
    m = y.shape[0]
    acc = np.full(m, np.inf, dtype=np.float64)
    start = np.full(m, -1, dtype=np.int64)
    acc_last = np.empty(n, dtype=np.float64)
    start_last = np.empty(n, dtype=np.int64)
    for t in range(n):
        _spring_step(acc, start, x[t], y, t, squared)
        acc_last[t] = acc[m - 1]
        start_last[t] = start[m - 1]
    return acc_last, start_last


def _as_series(values, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty one-dimensional sequence")
    return arr


@dataclass(frozen=True, eq=False)
class CostMatrix:
    n: int
    m: int
    cells: np.ndarray
    band_width: Optional[int]
    x: np.ndarray
    y: np.ndarray
    squared: bool = False

    @property
    def final_cost(self) -> float:
        return float(self.cells[-1, -1])


@dataclass(frozen=True, eq=False)
class WarpingPath:
    """Aligned (stream_index, template_index) pairs, ordered from (s, 0) to (e, m-1)."""

    pairs: np.ndarray
    cost: float
    local_costs: np.ndarray

    def __len__(self) -> int:
        return self.pairs.shape[0]

    @property
    def start(self) -> int:
        return int(self.pairs[0, 0])

    @property
    def end(self) -> int:
        return int(self.pairs[-1, 0])

    def shifted(self, offset: int) -> "WarpingPath":
        pairs = self.pairs.copy()
        pairs[:, 0] += offset
        return WarpingPath(pairs, self.cost, self.local_costs)


@dataclass(frozen=True, eq=False)
class SpringState:
    m: int
    acc: np.ndarray
    start: np.ndarray
    t: int = -1

    @classmethod
    def initial(cls, m: int) -> "SpringState":
        return cls(m, np.full(m, np.inf), np.full(m, -1, dtype=np.int64), -1)

    @property
    def best_cost(self) -> float:
        return float(self.acc[-1])

    @property
    def best_start(self) -> int:
        return int(self.start[-1])


@dataclass(frozen=True, eq=False)
class SpringScan:
    """``acc[m-1]`` and ``start[m-1]`` recorded after every stream sample."""

    acc_last: np.ndarray
    start_last: np.ndarray


def pairwise_dist(a: float, b: float) -> float:
    return abs(a - b)


def sakoe_chiba_width(n: int, m: int, fraction: float = 0.10) -> int:
    """Band half-width ``ceil(fraction * max(n, m))``, widened to ``|n - m|`` so a path always exists."""
    return max(int(math.ceil(fraction * max(n, m))), abs(n - m))


def dtw_full(x, y, band_width: Optional[int] = None, squared: bool = False) -> CostMatrix:
    """
    Accumulated DTW cost matrix.

    Args:
        x: Stream-side sequence (rows)
        y: Template-side sequence (columns)
        band_width: Sakoe-Chiba half-width on |i - j|, None for unconstrained
        squared: Use the squared pairwise difference instead of the absolute one

    Returns:
        CostMatrix; cells outside the band are +inf
    """
    x = _as_series(x, "x")
    y = _as_series(y, "y")
    if band_width is not None and band_width < 0:
        raise ConfigurationError(f"band_width must be non-negative, got {band_width}", field="band_width")

    band = UNCONSTRAINED if band_width is None else int(band_width)
    cells = _accumulate(x, y, band, squared)
    if not np.isfinite(cells[-1, -1]):
        raise NoPathError(
            f"band width {band_width} admits no path between lengths {x.size} and {y.size}",
            {"n": x.size, "m": y.size, "band_width": band_width},
        )
    return CostMatrix(x.size, y.size, cells, band_width, x, y, squared)


def traceback(matrix: CostMatrix, end_stream_index: Optional[int] = None) -> WarpingPath:
    end = matrix.n - 1 if end_stream_index is None else int(end_stream_index)
    if not 0 <= end < matrix.n or not np.isfinite(matrix.cells[end, -1]):
        raise NoPathError(f"no finite path ends at stream index {end}", {"end": end})

    pairs = _traceback(matrix.cells, end)
    diff = matrix.x[pairs[:, 0]] - matrix.y[pairs[:, 1]]
    local_costs = diff * diff if matrix.squared else np.abs(diff)
    return WarpingPath(pairs, float(matrix.cells[end, -1]), local_costs)


def spring_update(state: SpringState, x_t: float, y) -> SpringState:
    """Advance a Spring column by one stream sample and return the new state."""
    y = _as_series(y, "y")
    if state.m != y.size:
        raise ValueError(f"state tracks a template of length {state.m}, got {y.size}")
    acc = state.acc.copy()
    start = state.start.copy()
    t = state.t + 1
    _spring_step(acc, start, float(x_t), y, t, False)
    return SpringState(state.m, acc, start, t)


def spring_scan(x, y, squared: bool = False) -> SpringScan:
    """Run Spring over a whole stream in one compiled pass."""
    x = _as_series(x, "x")
    y = _as_series(y, "y")
    acc_last, start_last = _spring_scan(x, y, squared)
    logger.debug(f"Spring scan over {x.size} samples against template of length {y.size}")
    return SpringScan(acc_last, start_last)
