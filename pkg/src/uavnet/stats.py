"""Distribution statistics over flight datasets.

Empirical CDFs with quality thresholds, per-altitude profiles, 3D voxel
aggregation, cell dominance, packet delivery, and correlation helpers.
Nulls are always dropped, never imputed.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .model import FlightDataset, Sample, local_projection
from .ingest import AltitudeBin

#: Metric accessors usable wherever a metric name is accepted.
METRIC_GETTERS = {
    "rsrp": lambda s: s.serving.rsrp if s.serving else None,
    "rsrq": lambda s: s.serving.rsrq if s.serving else None,
    "rssi": lambda s: s.serving.rssi if s.serving else None,
    "sinr": lambda s: s.serving.sinr if s.serving else None,
    "rtt_ms": lambda s: s.e2e.rtt_ms if s.e2e else None,
    "dl_mbps": lambda s: s.e2e.dl_throughput_mbps if s.e2e else None,
    "ul_mbps": lambda s: s.e2e.ul_throughput_mbps if s.e2e else None,
}

RADIO_METRICS = ("rsrp", "rsrq", "rssi", "sinr")
E2E_METRICS = ("rtt_ms", "dl_mbps", "ul_mbps")


def metric_values(samples: Iterable[Sample], metric: str) -> list[Optional[float]]:
    getter = METRIC_GETTERS[metric]
    return [getter(s) for s in samples]


def _finite(values: Iterable[Optional[float]]) -> list[float]:
    return [v for v in values if v is not None and math.isfinite(v)]


@dataclass(frozen=True)
class EmpiricalCDF:
    """Exact order-statistic CDF of a finite sample."""

    sorted_values: tuple[float, ...]

    @property
    def n(self) -> int:
        return len(self.sorted_values)

    def eval(self, x: float) -> float:
        """F(x) = fraction of values <= x."""
        return bisect_right(self.sorted_values, x) / self.n

    def quantile(self, p: float) -> float:
        """Smallest value v with F(v) >= p."""
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"p={p} outside [0, 1]")
        k = max(1, math.ceil(p * self.n - 1e-9))
        return self.sorted_values[k - 1]

    __call__ = eval


def cdf(values: Iterable[Optional[float]]) -> EmpiricalCDF:
    """Build an empirical CDF; nulls and non-finite values are dropped."""
    finite = _finite(values)
    if not finite:
        raise ValueError("no finite values to build a CDF from")
    return EmpiricalCDF(sorted_values=tuple(sorted(finite)))


@dataclass(frozen=True)
class QualityThresholds:
    """'Poor' cutoffs for the four radio metrics (strictly below = poor)."""

    rsrp_poor: float = -100.0
    rsrq_poor: float = -20.0
    rssi_poor: float = -95.0
    sinr_poor: float = 0.0

    def for_metric(self, metric: str) -> float:
        return getattr(self, f"{metric}_poor")


def threshold_report(ds: FlightDataset,
                     th: QualityThresholds = QualityThresholds()
                     ) -> dict[str, Optional[float]]:
    """Fraction of measurements below the poor threshold, per radio metric.

    Nulls are excluded from both numerator and denominator; a metric with
    no data at all reports None.
    """
    out: dict[str, Optional[float]] = {}
    for metric in RADIO_METRICS:
        vals = _finite(metric_values(ds.samples, metric))
        if not vals:
            out[metric] = None
            continue
        out[metric] = sum(1 for v in vals if v < th.for_metric(metric)) / len(vals)
    return out


@dataclass(frozen=True)
class ProfileStats:
    mean: float
    std: float
    median: float
    count: int


def altitude_profile(binned: dict[AltitudeBin, list[Sample]],
                     metric: str) -> dict[AltitudeBin, ProfileStats]:
    """Per-altitude-bin statistics for one metric; empty bins are omitted."""
    out: dict[AltitudeBin, ProfileStats] = {}
    for b, samples in binned.items():
        vals = _finite(metric_values(samples, metric))
        if not vals:
            continue
        arr = np.asarray(vals, dtype=float)
        out[b] = ProfileStats(mean=float(arr.mean()),
                              std=float(arr.std()),
                              median=float(np.median(arr)),
                              count=len(vals))
    return out


def dominance(ds: FlightDataset) -> dict[int, float]:
    """Normalized share of serving samples per cell, largest first."""
    counts = Counter(s.serving.cell_id for s in ds.samples
                     if s.serving is not None and s.serving.cell_id is not None)
    total = sum(counts.values())
    if total == 0:
        raise ValueError("no non-null serving cell ids")
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return {cid: cnt / total for cid, cnt in ordered}


@dataclass(frozen=True)
class VoxelStats:
    mean: float
    std: float
    count: int


@dataclass(frozen=True)
class VoxelGrid:
    """Sparse 3D aggregation over local coordinates.

    The grid is anchored at the minimum contributing coordinate (origin),
    so the world-space lower corner of voxel (i, j, k) is
    origin + (i*dx, j*dy, k*dz). Anchoring at the data minimum keeps
    tightly clustered samples in one voxel instead of straddling the
    centroid corner.
    """

    metric: str
    cell_size: tuple[float, float, float]
    origin: tuple[float, float, float]
    cells: dict[tuple[int, int, int], VoxelStats]

    @property
    def total_count(self) -> int:
        return sum(c.count for c in self.cells.values())

    def corner(self, key: tuple[int, int, int]) -> tuple[float, float, float]:
        return tuple(o + i * s for o, i, s in zip(self.origin, key, self.cell_size))


DEFAULT_VOXEL_SIZE = (50.0, 50.0, 10.0)


def voxelize(ds: FlightDataset, metric: str,
             cell_size: tuple[float, float, float] = DEFAULT_VOXEL_SIZE) -> VoxelGrid:
    """Aggregate one metric into a sparse voxel grid in local meters."""
    dx, dy, dz = cell_size
    if dx <= 0 or dy <= 0 or dz <= 0:
        raise ValueError("cell dimensions must be positive")
    coords = local_projection(ds)
    values = metric_values(ds.samples, metric)
    contributing = [(c, v) for c, v in zip(coords, values)
                    if v is not None and math.isfinite(v)]
    if not contributing:
        return VoxelGrid(metric=metric, cell_size=cell_size,
                         origin=(0.0, 0.0, 0.0), cells={})
    origin = tuple(min(c[axis] for c, _ in contributing) for axis in range(3))
    buckets: dict[tuple[int, int, int], list[float]] = {}
    for (x, y, z), v in contributing:
        key = (math.floor((x - origin[0]) / dx),
               math.floor((y - origin[1]) / dy),
               math.floor((z - origin[2]) / dz))
        buckets.setdefault(key, []).append(v)
    cells = {}
    for key in sorted(buckets):
        arr = np.asarray(buckets[key], dtype=float)
        cells[key] = VoxelStats(mean=float(arr.mean()), std=float(arr.std()),
                                count=len(buckets[key]))
    return VoxelGrid(metric=metric, cell_size=cell_size, origin=origin,
                     cells=cells)


def delivery_rate(pkts_sent: int, pkts_delivered: int) -> float:
    """Delivery percentage, reported to two decimals."""
    if pkts_sent <= 0:
        raise ValueError("pkts_sent must be positive")
    if pkts_delivered < 0 or pkts_delivered > pkts_sent:
        raise ValueError("pkts_delivered must be within [0, pkts_sent]")
    return round(100.0 * pkts_delivered / pkts_sent, 2)


def pearson(x: Sequence[Optional[float]], y: Sequence[Optional[float]]) -> float:
    """Pearson correlation over pairwise non-null entries."""
    if len(x) != len(y):
        raise ValueError("x and y must have equal length")
    pairs = [(a, b) for a, b in zip(x, y)
             if a is not None and b is not None
             and math.isfinite(a) and math.isfinite(b)]
    if len(pairs) < 2:
        raise ValueError("need at least 2 paired non-null values")
    ax = np.asarray([p[0] for p in pairs], dtype=float)
    ay = np.asarray([p[1] for p in pairs], dtype=float)
    sx = ax.std()
    sy = ay.std()
    if sx == 0.0 or sy == 0.0:
        raise ValueError("zero variance")
    r = float(((ax - ax.mean()) * (ay - ay.mean())).mean() / (sx * sy))
    # Guard against rounding drift just past the ends of the interval.
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True)
class CDFBand:
    grid: tuple[float, ...]
    mean_f: tuple[float, ...]
    std_f: tuple[float, ...]

    @property
    def lower(self) -> tuple[float, ...]:
        return tuple(m - s for m, s in zip(self.mean_f, self.std_f))

    @property
    def upper(self) -> tuple[float, ...]:
        return tuple(m + s for m, s in zip(self.mean_f, self.std_f))


def mean_cdf_band(cdfs: Sequence[EmpiricalCDF],
                  grid: Optional[Sequence[float]] = None,
                  n_grid: int = 200) -> CDFBand:
    """Mean CDF across flights with a +/- one-standard-deviation band.

    Each curve is evaluated exactly at the grid points; the default grid is
    n_grid points spanning the pooled min/max.
    """
    if len(cdfs) < 2:
        raise ValueError("need at least 2 CDFs")
    if grid is None:
        lo = min(c.sorted_values[0] for c in cdfs)
        hi = max(c.sorted_values[-1] for c in cdfs)
        grid = [lo] * n_grid if hi == lo else list(np.linspace(lo, hi, n_grid))
    else:
        grid = list(grid)
        if any(b < a for a, b in zip(grid, grid[1:])):
            raise ValueError("grid must be sorted ascending")
    rows = np.asarray([[c.eval(x) for x in grid] for c in cdfs], dtype=float)
    return CDFBand(grid=tuple(grid),
                   mean_f=tuple(float(v) for v in rows.mean(axis=0)),
                   std_f=tuple(float(v) for v in rows.std(axis=0)))
