"""Handover detection, cause classification, and impact analysis.

A handover is a serving cell_id change between consecutive samples. Each
detected event is classified from the signal state at the last sample
before the change, using a strict priority chain:

  E1  strongest neighbor beats serving by >= 3 dB   (strength-based)
  E2  serving RSRP strong but RSRQ poor             (interference)
  E3  serving RSRP at or below the coverage floor   (coverage)
  E4  anything else (load balancing / network-side optimization)

Runs of null serving cell ids are bridged: A -> null... -> B collapses to
a single A -> B event, classified from the last non-null pre-state, so
brief radio-link failures do not hide or split handovers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence

from .ingest import PhaseSegment
from .model import FlightDataset, Sample

NS_PER_MINUTE = 60_000_000_000


class HandoverCause(Enum):
    E1 = "E1"
    E2 = "E2"
    E3 = "E3"
    E4 = "E4"


@dataclass(frozen=True)
class HandoverThresholds:
    a3_delta_db: float = 3.0
    e2_rsrp_dbm: float = -95.0
    e2_rsrq_db: float = -18.0
    e3_rsrp_dbm: float = -110.0

    def __post_init__(self):
        if self.a3_delta_db <= 0:
            raise ValueError("a3_delta_db must be positive")


@dataclass(frozen=True)
class HandoverEvent:
    t: int  # UTC ns of the first sample on the new cell
    from_cell: int
    to_cell: int
    cause: HandoverCause
    pre_rsrp: Optional[float]
    pre_rsrq: Optional[float]
    pre_nb_rsrp: Optional[float]  # strongest neighbor at the pre-state
    rtt_delta_ms: Optional[float] = None

    def __post_init__(self):
        if self.to_cell is None:
            raise ValueError("to_cell must be non-null")
        if self.from_cell == self.to_cell:
            raise ValueError("from_cell and to_cell must differ")


def classify_pre_state(pre_rsrp: Optional[float], pre_rsrq: Optional[float],
                       pre_nb_rsrp: Optional[float],
                       th: HandoverThresholds = HandoverThresholds()) -> HandoverCause:
    """Classify a handover from its pre-state, checking E1 -> E2 -> E3 in order.

    Guard comparisons are deliberately exact (>= for E1, strict > and <=
    for E2, <= for E3); a null input simply fails the guard that needs it.
    """
    if pre_nb_rsrp is not None and pre_rsrp is not None:
        if pre_nb_rsrp - pre_rsrp >= th.a3_delta_db:
            return HandoverCause.E1
    if pre_rsrp is not None and pre_rsrq is not None:
        if pre_rsrp > th.e2_rsrp_dbm and pre_rsrq <= th.e2_rsrq_db:
            return HandoverCause.E2
    if pre_rsrp is not None and pre_rsrp <= th.e3_rsrp_dbm:
        return HandoverCause.E3
    return HandoverCause.E4


def _strongest_neighbor_rsrp(s: Sample) -> Optional[float]:
    # Neighbors are kept rsrp-sorted with nulls last, so the head is it.
    if s.neighbors and s.neighbors[0].rsrp is not None:
        return s.neighbors[0].rsrp
    return None


def detect_and_classify(ds: FlightDataset,
                        th: HandoverThresholds = HandoverThresholds()
                        ) -> list[HandoverEvent]:
    """Single pass detection + classification over a time-ordered dataset."""
    events: list[HandoverEvent] = []
    last_cell: Optional[int] = None
    last_sample: Optional[Sample] = None
    for s in ds.samples:
        cid = s.serving.cell_id if s.serving is not None else None
        if cid is None:
            continue  # null itself is never an event; bridging happens here
        if last_cell is not None and cid != last_cell:
            pre = last_sample
            nb_rsrp = _strongest_neighbor_rsrp(pre)
            cause = classify_pre_state(pre.serving.rsrp, pre.serving.rsrq, nb_rsrp, th)
            events.append(HandoverEvent(
                t=s.timestamp, from_cell=last_cell, to_cell=cid, cause=cause,
                pre_rsrp=pre.serving.rsrp, pre_rsrq=pre.serving.rsrq,
                pre_nb_rsrp=nb_rsrp))
        last_cell = cid
        last_sample = s
    return events


@dataclass(frozen=True)
class RateBin:
    t_start: int  # UTC ns
    counts: dict  # HandoverCause -> int
    total: int


def handover_rate(events: Sequence[HandoverEvent], ds: FlightDataset,
                  bin_minutes: float = 10.0) -> list[RateBin]:
    """Handover counts per fixed time block, anchored at the first sample.

    Every block in the dataset's span is emitted, including empty ones, so
    the series always covers the whole flight.
    """
    if bin_minutes <= 0:
        raise ValueError("bin_minutes must be positive")
    bin_ns = int(bin_minutes * NS_PER_MINUTE)
    t0 = ds.samples[0].timestamp
    span = ds.samples[-1].timestamp - t0
    n_bins = span // bin_ns + 1
    counters = [{c: 0 for c in HandoverCause} for _ in range(n_bins)]
    for ev in events:
        idx = (ev.t - t0) // bin_ns
        if not 0 <= idx < n_bins:
            raise ValueError(f"event at {ev.t} outside dataset span")
        counters[idx][ev.cause] += 1
    return [RateBin(t_start=t0 + i * bin_ns, counts=counters[i],
                    total=sum(counters[i].values()))
            for i in range(n_bins)]


@dataclass(frozen=True)
class VisibilityStats:
    segment: PhaseSegment
    unique_cells: int
    handovers: int
    handovers_per_min: float


def cell_visibility(ds: FlightDataset, segments: Sequence[PhaseSegment],
                    events: Optional[Sequence[HandoverEvent]] = None,
                    th: HandoverThresholds = HandoverThresholds()
                    ) -> list[VisibilityStats]:
    """Unique cell count (serving plus neighbors) and handover rate per phase."""
    if events is None:
        events = detect_and_classify(ds, th)
    out = []
    for i, seg in enumerate(segments):
        final = i == len(segments) - 1

        def inside(t: int) -> bool:
            return seg.t_start <= t <= seg.t_end if final else seg.t_start <= t < seg.t_end

        cells = set()
        for s in ds.samples:
            if not inside(s.timestamp):
                continue
            if s.serving is not None and s.serving.cell_id is not None:
                cells.add(s.serving.cell_id)
            for nb in s.neighbors:
                if nb.cell_id is not None:
                    cells.add(nb.cell_id)
        n_events = sum(1 for ev in events if inside(ev.t))
        minutes = (seg.t_end - seg.t_start) / NS_PER_MINUTE
        out.append(VisibilityStats(segment=seg, unique_cells=len(cells),
                                   handovers=n_events,
                                   handovers_per_min=n_events / minutes))
    return out


@dataclass(frozen=True)
class RttImpactSummary:
    n_events: int
    n_with_delta: int
    n_improve: int   # delta < 0
    n_degrade: int   # delta > 0
    max_increase: Optional[float]
    max_decrease: Optional[float]


def rtt_impact(events: Sequence[HandoverEvent], ds: FlightDataset,
               window_s: float = 30.0, k: int = 3
               ) -> tuple[list[HandoverEvent], RttImpactSummary]:
    """Annotate each event with its RTT change across the handover.

    delta = mean of up to k RTT samples just after the event minus the mean
    of up to k just before, both within window_s. Either side empty makes
    the delta null, and null deltas are excluded from the summary.
    """
    if window_s <= 0:
        raise ValueError("window_s must be positive")
    if k < 1:
        raise ValueError("k must be >= 1")
    window_ns = int(window_s * 1e9)
    series = [(s.timestamp, s.e2e.rtt_ms) for s in ds.samples
              if s.e2e is not None and s.e2e.rtt_ms is not None
              and math.isfinite(s.e2e.rtt_ms)]

    annotated = []
    deltas = []
    for ev in events:
        before = [r for t, r in series if ev.t - window_ns <= t < ev.t][-k:]
        after = [r for t, r in series if ev.t < t <= ev.t + window_ns][:k]
        if before and after:
            delta = sum(after) / len(after) - sum(before) / len(before)
            deltas.append(delta)
        else:
            delta = None
        annotated.append(replace(ev, rtt_delta_ms=delta))

    increases = [d for d in deltas if d > 0]
    decreases = [d for d in deltas if d < 0]
    summary = RttImpactSummary(
        n_events=len(events),
        n_with_delta=len(deltas),
        n_improve=len(decreases),
        n_degrade=len(increases),
        max_increase=max(increases) if increases else None,
        max_decrease=min(decreases) if decreases else None,
    )
    return annotated, summary
