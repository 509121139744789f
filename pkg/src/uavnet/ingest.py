"""Dataset file I/O, altitude binning, and flight-phase segmentation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .model import (
    CellObservation,
    E2EMetrics,
    FlightDataset,
    FlightState,
    GeoPosition,
    LinkType,
    Sample,
)

# Canonical column order of the tabular dataset format. A header line is
# mandatory; an empty field means null.
COLUMNS = (
    "ts_ns", "lat", "lon", "alt_asl_m",
    "speed_mps", "heading_deg", "roll_deg", "pitch_deg",
    "link",
    "srv_cell_id", "srv_pci", "srv_tac",
    "srv_rsrp", "srv_rsrq", "srv_rssi", "srv_sinr",
    "nb1_cell_id", "nb2_cell_id", "nb3_cell_id",
    "nb1_rsrp", "nb2_rsrp", "nb3_rsrp",
    "nb1_rsrq", "nb2_rsrq", "nb3_rsrq",
    "rtt_ms", "dl_mbps", "ul_mbps",
    "pkts_sent", "pkts_delivered",
)

_INT_COLUMNS = frozenset((
    "ts_ns", "srv_cell_id", "srv_pci", "srv_tac",
    "nb1_cell_id", "nb2_cell_id", "nb3_cell_id",
    "pkts_sent", "pkts_delivered",
))

MALFORMED_ABORT_FRACTION = 0.05


class ParseError(ValueError):
    """Unreadable file or too many malformed lines."""


@dataclass(frozen=True)
class ParseResult:
    dataset: FlightDataset
    rejected: tuple[tuple[int, str], ...]  # (line number, reason)
    reorder_count: int


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        # float() first: numpy scalars subclass float but repr differently
        return repr(float(value))
    return str(value)


def _sample_to_row(s: Sample) -> dict:
    row = {
        "ts_ns": s.timestamp,
        "lat": s.position.latitude,
        "lon": s.position.longitude,
        "alt_asl_m": s.position.altitude_asl,
        "link": s.link.value,
    }
    f = s.flight
    row["speed_mps"] = f.speed_mps if f else None
    row["heading_deg"] = f.heading_deg if f else None
    row["roll_deg"] = f.roll_deg if f else None
    row["pitch_deg"] = f.pitch_deg if f else None
    srv = s.serving or CellObservation()
    row["srv_cell_id"] = srv.cell_id
    row["srv_pci"] = srv.pci
    row["srv_tac"] = srv.tac
    row["srv_rsrp"] = srv.rsrp
    row["srv_rsrq"] = srv.rsrq
    row["srv_rssi"] = srv.rssi
    row["srv_sinr"] = srv.sinr
    for j in range(3):
        nb = s.neighbors[j] if j < len(s.neighbors) else CellObservation()
        row[f"nb{j + 1}_cell_id"] = nb.cell_id
        row[f"nb{j + 1}_rsrp"] = nb.rsrp
        row[f"nb{j + 1}_rsrq"] = nb.rsrq
    e = s.e2e or E2EMetrics()
    row["rtt_ms"] = e.rtt_ms
    row["dl_mbps"] = e.dl_throughput_mbps
    row["ul_mbps"] = e.ul_throughput_mbps
    row["pkts_sent"] = e.pkts_sent
    row["pkts_delivered"] = e.pkts_delivered
    return row


def _row_to_sample(row: dict, default_link: Optional[LinkType]) -> Sample:
    def num(key):
        v = row.get(key)
        if v is None:
            return None
        if key in _INT_COLUMNS:
            return int(v)
        return float(v)

    ts = row.get("ts_ns")
    if ts is None:
        raise ValueError("missing ts_ns")
    link_raw = row.get("link")
    if link_raw:
        link = LinkType(link_raw)
    elif default_link is not None:
        link = default_link
    else:
        link = LinkType.CELLULAR

    pos = GeoPosition(
        latitude=_require(num("lat"), "lat"),
        longitude=_require(num("lon"), "lon"),
        altitude_asl=_require(num("alt_asl_m"), "alt_asl_m"),
    )

    flight_vals = [num("speed_mps"), num("heading_deg"), num("roll_deg"), num("pitch_deg")]
    flight = FlightState(*flight_vals) if all(v is not None for v in flight_vals) else None

    srv_fields = {k: num(f"srv_{k}") for k in ("cell_id", "pci", "tac", "rsrp", "rsrq", "rssi", "sinr")}
    serving = CellObservation(**srv_fields) if any(v is not None for v in srv_fields.values()) else None

    neighbors = []
    for j in (1, 2, 3):
        nb = CellObservation(cell_id=num(f"nb{j}_cell_id"),
                             rsrp=num(f"nb{j}_rsrp"),
                             rsrq=num(f"nb{j}_rsrq"))
        if nb.cell_id is not None or nb.rsrp is not None or nb.rsrq is not None:
            neighbors.append(nb)

    e2e_fields = {
        "rtt_ms": num("rtt_ms"),
        "dl_throughput_mbps": num("dl_mbps"),
        "ul_throughput_mbps": num("ul_mbps"),
        "pkts_sent": num("pkts_sent"),
        "pkts_delivered": num("pkts_delivered"),
    }
    e2e = E2EMetrics(**e2e_fields) if any(v is not None for v in e2e_fields.values()) else None

    return Sample(timestamp=int(ts), position=pos, link=link, flight=flight,
                  serving=serving, neighbors=tuple(neighbors), e2e=e2e)


def _require(value, name):
    if value is None:
        raise ValueError(f"missing {name}")
    return value


def write_dataset(ds: FlightDataset, path, fmt: Optional[str] = None) -> None:
    """Write a dataset in the interchange format (csv or jsonl).

    With fmt=None the format follows the file extension, defaulting to csv.
    """
    path = Path(path)
    if fmt is None:
        fmt = _infer_format(path)
    if fmt == "csv":
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(COLUMNS)
            for s in ds.samples:
                row = _sample_to_row(s)
                writer.writerow([_fmt(row[c]) for c in COLUMNS])
    elif fmt == "jsonl":
        with path.open("w") as fh:
            for s in ds.samples:
                row = _sample_to_row(s)
                obj = {c: row[c] for c in COLUMNS if row[c] is not None}
                fh.write(json.dumps(obj, separators=(",", ":")) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")


def _infer_format(path: Path) -> str:
    return "jsonl" if path.suffix in (".jsonl", ".ndjson", ".json") else "csv"


def parse_dataset(path, link: Optional[LinkType] = None,
                  fmt: Optional[str] = None,
                  flight_id: Optional[str] = None) -> ParseResult:
    """Parse a dataset file, rejecting malformed lines individually.

    Samples come back ordered by timestamp; out-of-order input is re-sorted
    and counted. More than 5% malformed lines aborts with a summary, since
    at that point the file as a whole cannot be trusted.
    """
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"no such file: {path}")
    fmt = fmt or _infer_format(path)

    rows: list[dict] = []
    rejected: list[tuple[int, str]] = []
    n_lines = 0

    if fmt == "csv":
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ParseError(f"{path}: empty file (header line is mandatory)")
            missing = [c for c in ("ts_ns", "lat", "lon", "alt_asl_m") if c not in header]
            if missing:
                raise ParseError(f"{path}: header missing required columns {missing}")
            for lineno, fields in enumerate(reader, start=2):
                if not fields:
                    continue
                n_lines += 1
                if len(fields) != len(header):
                    rejected.append((lineno, f"expected {len(header)} fields, got {len(fields)}"))
                    continue
                rows.append({"__line__": lineno,
                             **{k: (v if v != "" else None) for k, v in zip(header, fields)}})
    elif fmt == "jsonl":
        with path.open() as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                n_lines += 1
                try:
                    obj = json.loads(line)
                    if not isinstance(obj, dict):
                        raise ValueError("record is not an object")
                except ValueError as exc:
                    rejected.append((lineno, str(exc)))
                    continue
                rows.append({"__line__": lineno, **obj})
    else:
        raise ValueError(f"unknown format {fmt!r}")

    samples: list[Sample] = []
    for row in rows:
        lineno = row.pop("__line__")
        try:
            samples.append(_row_to_sample(row, link))
        except (ValueError, TypeError, KeyError) as exc:
            rejected.append((lineno, str(exc)))

    if n_lines == 0:
        raise ParseError(f"{path}: no data lines")
    if len(rejected) / n_lines > MALFORMED_ABORT_FRACTION:
        raise ParseError(
            f"{path}: {len(rejected)}/{n_lines} lines malformed "
            f"(> {MALFORMED_ABORT_FRACTION:.0%}); first: "
            f"line {rejected[0][0]}: {rejected[0][1]}")
    if not samples:
        raise ParseError(f"{path}: no parseable samples")

    reorder = sum(1 for a, b in zip(samples, samples[1:]) if b.timestamp < a.timestamp)
    if reorder:
        samples.sort(key=lambda s: s.timestamp)

    ds = FlightDataset(flight_id=flight_id or path.stem, samples=tuple(samples))
    return ParseResult(dataset=ds, rejected=tuple(sorted(rejected)), reorder_count=reorder)


@dataclass(frozen=True)
class AltitudeBin:
    """Half-open altitude interval [lo_m, hi_m) anchored at a width multiple."""

    lo_m: float
    hi_m: float
    width: float = 10.0

    def __post_init__(self):
        if not math.isclose(self.hi_m - self.lo_m, self.width):
            raise ValueError(f"bin [{self.lo_m}, {self.hi_m}) does not span width {self.width}")


def bin_for_altitude(alt_m: float, width_m: float = 10.0) -> AltitudeBin:
    lo = math.floor(alt_m / width_m) * width_m
    return AltitudeBin(lo_m=lo, hi_m=lo + width_m, width=width_m)


def bin_by_altitude(ds: FlightDataset, width_m: float = 10.0) -> dict[AltitudeBin, list[Sample]]:
    """Partition samples into fixed-width ASL altitude bins.

    Pure function of (altitude, width): every sample with finite altitude
    lands in exactly one bin. Keys come back sorted by lower edge.
    """
    if width_m <= 0:
        raise ValueError("width_m must be positive")
    bins: dict[AltitudeBin, list[Sample]] = {}
    for s in ds.samples:
        alt = s.position.altitude_asl
        if not math.isfinite(alt):
            continue
        bins.setdefault(bin_for_altitude(alt, width_m), []).append(s)
    return dict(sorted(bins.items(), key=lambda kv: kv[0].lo_m))


@dataclass(frozen=True)
class PhaseSegment:
    """One named, contiguous slice of a flight's timeline."""

    name: str
    t_start: int  # UTC ns, inclusive
    t_end: int    # UTC ns, exclusive except for the final segment

    def __post_init__(self):
        if self.t_start >= self.t_end:
            raise ValueError(f"segment {self.name!r}: t_start must precede t_end")


def segment_phases(ds: FlightDataset, boundaries: Iterable[int],
                   names: Optional[Iterable[str]] = None) -> list[PhaseSegment]:
    """Cut the flight into contiguous phases at the given timestamps.

    Boundaries are user-supplied mission times (phases are known from the
    flight plan, not auto-detected). They must be sorted and strictly
    inside the dataset's time span.
    """
    boundaries = list(boundaries)
    t_first = ds.samples[0].timestamp
    t_last = ds.samples[-1].timestamp
    if any(b <= a for a, b in zip(boundaries, boundaries[1:])):
        raise ValueError("boundaries must be strictly increasing")
    for b in boundaries:
        if not t_first < b < t_last:
            raise ValueError(f"boundary {b} outside dataset span ({t_first}, {t_last})")
    if names is None:
        names = [f"phase-{i + 1}" for i in range(len(boundaries) + 1)]
    else:
        names = list(names)
        if len(names) != len(boundaries) + 1:
            raise ValueError(f"need {len(boundaries) + 1} names, got {len(names)}")

    edges = [t_first, *boundaries, t_last]
    return [PhaseSegment(name=names[i], t_start=edges[i], t_end=edges[i + 1])
            for i in range(len(names))]


def samples_in_segment(ds: FlightDataset, seg: PhaseSegment, *,
                       last: bool = False) -> list[Sample]:
    """Samples whose timestamp falls in the segment (final segment closed)."""
    if last:
        return [s for s in ds.samples if seg.t_start <= s.timestamp <= seg.t_end]
    return [s for s in ds.samples if seg.t_start <= s.timestamp < seg.t_end]
