"""Canonical data model for UAV network-measurement records.

Every downstream analysis consumes these types. All of them are immutable
value objects: construct once, then share freely across threads. Radio and
end-to-end fields are nullable because real logs have gaps; a null always
means "skip this value" in aggregations, never zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

EARTH_RADIUS_M = 6_371_000.0

# 3GPP-plausible reporting ranges. These are validator bounds, not clamps:
# out-of-range values are reported by validate_dataset, never rewritten.
RSRP_RANGE = (-156.0, -31.0)
RSRQ_RANGE = (-34.0, 3.0)
RSSI_RANGE = (-120.0, -10.0)
SINR_RANGE = (-23.0, 40.0)
PCI_RANGE = (0, 503)

MAX_NEIGHBORS = 3

# Test-area convention: ground level sits at 240 m ASL, so AGL = ASL - 240
# unless a dataset-specific elevation is supplied.
DEFAULT_GROUND_ELEVATION_M = 240.0

# Serving-cell nulls above this fraction get a warning; above 1% the
# dataset is reported as violating its own contract.
SERVING_NULL_WARN_FRACTION = 0.001
SERVING_NULL_MAX_FRACTION = 0.01


class LinkType(Enum):
    """Which radio carried the measurement."""

    CELLULAR = "cellular"
    SATELLITE = "satellite"


@dataclass(frozen=True)
class GeoPosition:
    """WGS84 position; altitude is meters above sea level."""

    latitude: float
    longitude: float
    altitude_asl: float


@dataclass(frozen=True)
class CellObservation:
    """Identifiers plus signal metrics for one cell at one instant.

    cell_id is the globally unique identifier used for handover detection;
    pci is locally reused (0-503) and kept only for reference.
    """

    cell_id: Optional[int] = None
    pci: Optional[int] = None
    tac: Optional[int] = None
    rsrp: Optional[float] = None
    rsrq: Optional[float] = None
    rssi: Optional[float] = None
    sinr: Optional[float] = None


@dataclass(frozen=True)
class E2EMetrics:
    """End-to-end path metrics against the fixed measurement server."""

    rtt_ms: Optional[float] = None
    dl_throughput_mbps: Optional[float] = None
    ul_throughput_mbps: Optional[float] = None
    pkts_sent: Optional[int] = None
    pkts_delivered: Optional[int] = None


@dataclass(frozen=True)
class FlightState:
    speed_mps: float
    heading_deg: float
    roll_deg: float
    pitch_deg: float


def _neighbor_order(obs: CellObservation):
    # Descending rsrp, nulls last; stable for ties.
    return (obs.rsrp is None, -(obs.rsrp if obs.rsrp is not None else 0.0))


@dataclass(frozen=True)
class Sample:
    """One timestamped spatiotemporal record."""

    timestamp: int  # UTC nanoseconds since epoch
    position: GeoPosition
    link: LinkType
    flight: Optional[FlightState] = None
    serving: Optional[CellObservation] = None
    neighbors: tuple[CellObservation, ...] = ()
    e2e: Optional[E2EMetrics] = None

    def __post_init__(self):
        if len(self.neighbors) > MAX_NEIGHBORS:
            raise ValueError(
                f"at most {MAX_NEIGHBORS} neighbor observations, got {len(self.neighbors)}"
            )
        ordered = tuple(sorted(self.neighbors, key=_neighbor_order))
        object.__setattr__(self, "neighbors", ordered)


@dataclass(frozen=True)
class FlightDataset:
    """Ordered sample sequence for one flight."""

    flight_id: str
    samples: tuple[Sample, ...]
    nominal_period_s: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if not self.samples:
            raise ValueError("dataset must contain at least one sample")

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class Violation:
    """One contract breach found by validate_dataset.

    index is the offending sample's position, or -1 for dataset-level
    findings (e.g. the serving-cell null budget).
    """

    index: int
    field: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    n_samples: int
    violations: tuple[Violation, ...]
    null_counts: dict[str, int]
    timestamp_regressions: int
    serving_null_fraction: float
    serving_null_warning: bool

    @property
    def ok(self) -> bool:
        return not self.violations


_CELL_RANGES = {
    "rsrp": RSRP_RANGE,
    "rsrq": RSRQ_RANGE,
    "rssi": RSSI_RANGE,
    "sinr": SINR_RANGE,
}


def _check_cell(obs: CellObservation, index: int, prefix: str,
                violations: list[Violation]) -> None:
    for name, (lo, hi) in _CELL_RANGES.items():
        v = getattr(obs, name)
        if v is None:
            continue
        if not math.isfinite(v) or not lo <= v <= hi:
            violations.append(Violation(
                index, f"{prefix}.{name}",
                f"{name}={v} outside [{lo}, {hi}]"))
    if obs.pci is not None and not PCI_RANGE[0] <= obs.pci <= PCI_RANGE[1]:
        violations.append(Violation(
            index, f"{prefix}.pci", f"pci={obs.pci} outside {PCI_RANGE}"))


def validate_dataset(ds: FlightDataset) -> ValidationReport:
    """Report every range violation, null, and timestamp regression.

    Purely observational: the dataset is never modified and nothing is
    raised. Callers decide what to do with a dirty report.
    """
    violations: list[Violation] = []
    null_counts: dict[str, int] = {
        "serving": 0, "serving.cell_id": 0, "flight": 0, "e2e": 0, "e2e.rtt_ms": 0,
    }
    regressions = 0
    prev_ts = None

    for i, s in enumerate(ds.samples):
        if prev_ts is not None and s.timestamp <= prev_ts:
            regressions += 1
            violations.append(Violation(
                i, "timestamp",
                f"timestamp {s.timestamp} not after previous {prev_ts}"))
        prev_ts = s.timestamp

        p = s.position
        if not -90.0 <= p.latitude <= 90.0:
            violations.append(Violation(i, "position.latitude",
                                         f"latitude={p.latitude} outside [-90, 90]"))
        if not -180.0 <= p.longitude <= 180.0:
            violations.append(Violation(i, "position.longitude",
                                         f"longitude={p.longitude} outside [-180, 180]"))
        if not math.isfinite(p.altitude_asl):
            violations.append(Violation(i, "position.altitude_asl",
                                         f"altitude_asl={p.altitude_asl} not finite"))

        if s.flight is None:
            null_counts["flight"] += 1
        else:
            if s.flight.speed_mps < 0:
                violations.append(Violation(i, "flight.speed_mps",
                                             f"speed_mps={s.flight.speed_mps} negative"))
            if not 0.0 <= s.flight.heading_deg < 360.0:
                violations.append(Violation(i, "flight.heading_deg",
                                             f"heading_deg={s.flight.heading_deg} outside [0, 360)"))

        if s.serving is None or s.serving.cell_id is None:
            null_counts["serving.cell_id"] += 1
        if s.serving is None:
            null_counts["serving"] += 1
        else:
            _check_cell(s.serving, i, "serving", violations)
        for j, nb in enumerate(s.neighbors):
            _check_cell(nb, i, f"nb{j + 1}", violations)

        if s.e2e is None:
            null_counts["e2e"] += 1
            null_counts["e2e.rtt_ms"] += 1
        else:
            e = s.e2e
            if e.rtt_ms is None:
                null_counts["e2e.rtt_ms"] += 1
            for name in ("rtt_ms", "dl_throughput_mbps", "ul_throughput_mbps",
                         "pkts_sent", "pkts_delivered"):
                v = getattr(e, name)
                if v is not None and v < 0:
                    violations.append(Violation(i, f"e2e.{name}",
                                                 f"{name}={v} negative"))
            if (e.pkts_sent is not None and e.pkts_delivered is not None
                    and e.pkts_delivered > e.pkts_sent):
                violations.append(Violation(
                    i, "e2e.pkts_delivered",
                    f"pkts_delivered={e.pkts_delivered} > pkts_sent={e.pkts_sent}"))

    null_fraction = null_counts["serving.cell_id"] / len(ds.samples)
    if null_fraction >= SERVING_NULL_MAX_FRACTION:
        violations.append(Violation(
            -1, "serving.cell_id",
            f"null fraction {null_fraction:.4f} >= {SERVING_NULL_MAX_FRACTION}"))

    return ValidationReport(
        n_samples=len(ds.samples),
        violations=tuple(violations),
        null_counts=null_counts,
        timestamp_regressions=regressions,
        serving_null_fraction=null_fraction,
        serving_null_warning=null_fraction > SERVING_NULL_WARN_FRACTION,
    )


def local_projection(ds: FlightDataset) -> list[tuple[float, float, float]]:
    """Project samples to local meters about the dataset centroid.

    Equirectangular projection: x east, y north, altitude passed through.
    Adequate within the few-kilometer extent of a flight; distances near
    the centroid match great-circle distances to well under 0.5%.
    """
    if not ds.samples:
        raise ValueError("cannot project an empty dataset")
    lat0 = sum(s.position.latitude for s in ds.samples) / len(ds.samples)
    lon0 = sum(s.position.longitude for s in ds.samples) / len(ds.samples)
    rad = math.pi / 180.0
    cos_lat0 = math.cos(lat0 * rad)
    out = []
    for s in ds.samples:
        p = s.position
        x = EARTH_RADIUS_M * (p.longitude - lon0) * cos_lat0 * rad
        y = EARTH_RADIUS_M * (p.latitude - lat0) * rad
        out.append((x, y, p.altitude_asl))
    return out


def altitudes_agl(ds: FlightDataset,
                  ground_elevation_m: float = DEFAULT_GROUND_ELEVATION_M) -> list[float]:
    """Heights above ground level, from stored ASL altitudes."""
    return [s.position.altitude_asl - ground_elevation_m for s in ds.samples]
