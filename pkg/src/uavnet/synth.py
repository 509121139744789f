"""Synthetic flight and multi-cell propagation generator.

Produces datasets with known ground truth: per-sample per-cell received
power, the serving-cell sequence, and the exact handover instants. The
propagation model is deliberately minimal - log-distance path loss with an
altitude-dependent line-of-sight probability - which is enough to
reproduce the two behaviors that matter for verification: signal power
improving with altitude, and interference pressure rising with it.

Line-of-sight state per site is drawn once per flight as a uniform
threshold against p_LOS(h_agl). Marginally each sample's state is still
Bernoulli(p_LOS); sharing the draw across samples makes the state flip at
one deterministic altitude per site, which is also the physically sensible
behavior (terrain does not re-randomize every second).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .model import (
    DEFAULT_GROUND_ELEVATION_M,
    EARTH_RADIUS_M,
    RSRP_RANGE,
    RSRQ_RANGE,
    RSSI_RANGE,
    SINR_RANGE,
    CellObservation,
    E2EMetrics,
    FlightDataset,
    FlightState,
    GeoPosition,
    LinkType,
    Sample,
)

# 100 resource blocks x 12 subcarriers (20 MHz carrier).
N_RB = 100
RE_AGGREGATION_DB = 10.0 * math.log10(N_RB * 12)

GRAVITY_MPS2 = 9.81
RACETRACK_STRAIGHT_M = 600.0
RACETRACK_TURN_RADIUS_M = 150.0

PHASE_KINDS = ("hover", "climb", "descend", "racetrack", "transit")

DEFAULT_T0_NS = 1_748_736_000_000_000_000  # 2025-06-01T00:00:00Z


@dataclass(frozen=True)
class CellSite:
    """One transmitting sector; null azimuth/beamwidth means omnidirectional."""

    id: int
    position: GeoPosition
    eirp_dbm: float
    sector_azimuth_deg: Optional[float] = None
    sector_beamwidth_deg: Optional[float] = None

    def __post_init__(self):
        if not 30.0 <= self.eirp_dbm <= 70.0:
            raise ValueError(f"eirp_dbm={self.eirp_dbm} outside [30, 70]")
        if (self.sector_azimuth_deg is None) != (self.sector_beamwidth_deg is None):
            raise ValueError("sector azimuth and beamwidth must be set together")
        if self.sector_beamwidth_deg is not None and not 0 < self.sector_beamwidth_deg <= 360:
            raise ValueError("beamwidth must be in (0, 360]")


@dataclass(frozen=True)
class PropagationConfig:
    pl0_db: float = 62.0          # reference loss at d0 = 1 m
    n_los: float = 2.0
    n_nlos: float = 3.3
    shadow_sigma_db: float = 4.0
    nlos_extra_db: float = 18.0
    los_alt_scale_m: float = 160.0
    noise_dbm: float = -121.0     # per resource element
    seed: int = 0

    def __post_init__(self):
        if not self.n_los > 0 or self.n_nlos < self.n_los:
            raise ValueError("need n_nlos >= n_los > 0")
        if self.shadow_sigma_db < 0:
            raise ValueError("shadow_sigma_db must be >= 0")
        if self.los_alt_scale_m <= 0:
            raise ValueError("los_alt_scale_m must be positive")


@dataclass(frozen=True)
class FlightPhase:
    kind: str
    duration_s: float
    target_alt_m: float
    speed_mps: float = 0.0

    def __post_init__(self):
        if self.kind not in PHASE_KINDS:
            raise ValueError(f"unknown phase kind {self.kind!r}")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")
        if self.speed_mps < 0:
            raise ValueError("speed_mps must be >= 0")


@dataclass(frozen=True)
class TrajectoryPlan:
    phases: tuple[FlightPhase, ...]
    origin: GeoPosition = GeoPosition(38.90, -95.30, DEFAULT_GROUND_ELEVATION_M)
    start_alt_m: float = 240.0
    start_heading_deg: float = 90.0
    alt_min_m: float = 240.0
    alt_max_m: float = 400.0

    def __post_init__(self):
        if not self.phases:
            raise ValueError("plan needs at least one phase")
        for ph in self.phases:
            if not self.alt_min_m <= ph.target_alt_m <= self.alt_max_m:
                raise ValueError(
                    f"target_alt_m={ph.target_alt_m} outside "
                    f"[{self.alt_min_m}, {self.alt_max_m}]")
        if not self.alt_min_m <= self.start_alt_m <= self.alt_max_m:
            raise ValueError("start_alt_m outside altitude bounds")


@dataclass(frozen=True)
class TrackPoint:
    x: float
    y: float
    alt: float
    speed_mps: float
    heading_deg: float
    roll_deg: float
    pitch_deg: float


def _racetrack_state(s: float, x0: float, y0: float) -> tuple[float, float, float, float]:
    """Position, compass heading, and turn curvature sign along a stadium path."""
    L = RACETRACK_STRAIGHT_M
    R = RACETRACK_TURN_RADIUS_M
    s = s % (2 * L + 2 * math.pi * R)
    if s < L:
        return x0 + s, y0, 90.0, 0.0
    s -= L
    if s < math.pi * R:
        theta = s / R
        cx, cy = x0 + L, y0 + R
        x = cx + R * math.sin(theta)
        y = cy - R * math.cos(theta)
        heading = math.degrees(math.atan2(math.cos(theta), math.sin(theta))) % 360.0
        return x, y, heading, -1.0
    s -= math.pi * R
    if s < L:
        return x0 + L - s, y0 + 2 * R, 270.0, 0.0
    s -= L
    theta = s / R
    cx, cy = x0, y0 + R
    x = cx - R * math.sin(theta)
    y = cy + R * math.cos(theta)
    heading = math.degrees(math.atan2(-math.cos(theta), -math.sin(theta))) % 360.0
    return x, y, heading, -1.0


def build_trajectory(plan: TrajectoryPlan, period_s: float = 1.0) -> list[TrackPoint]:
    """Expand a plan into one kinematic state per sample period."""
    if period_s <= 0:
        raise ValueError("period_s must be positive")
    points: list[TrackPoint] = []
    x, y = 0.0, 0.0
    alt = plan.start_alt_m
    heading = plan.start_heading_deg % 360.0

    for ph in plan.phases:
        n = max(1, round(ph.duration_s / period_s))
        a0 = alt
        climb_rate = (ph.target_alt_m - a0) / ph.duration_s
        for j in range(n):
            t = j * period_s
            alt_j = a0 + (ph.target_alt_m - a0) * j / n
            if ph.kind in ("hover", "climb", "descend"):
                speed = abs(climb_rate) if ph.kind != "hover" else 0.0
                points.append(TrackPoint(x, y, alt_j, speed, heading, 0.0, 0.0))
            elif ph.kind == "transit":
                hrad = math.radians(heading)
                px = x + ph.speed_mps * t * math.sin(hrad)
                py = y + ph.speed_mps * t * math.cos(hrad)
                pitch = math.degrees(math.atan2(climb_rate, max(ph.speed_mps, 1e-9)))
                points.append(TrackPoint(px, py, alt_j, ph.speed_mps, heading, 0.0, pitch))
            else:  # racetrack
                px, py, hdg, turn = _racetrack_state(ph.speed_mps * t, x, y)
                bank = math.degrees(math.atan(
                    ph.speed_mps ** 2 / (GRAVITY_MPS2 * RACETRACK_TURN_RADIUS_M)))
                roll = turn * bank
                pitch = math.degrees(math.atan2(climb_rate, max(ph.speed_mps, 1e-9)))
                points.append(TrackPoint(px, py, alt_j, ph.speed_mps, hdg, roll, pitch))
        # Advance state to the end of the phase.
        if ph.kind == "transit":
            hrad = math.radians(heading)
            x += ph.speed_mps * ph.duration_s * math.sin(hrad)
            y += ph.speed_mps * ph.duration_s * math.cos(hrad)
        elif ph.kind == "racetrack":
            x, y, heading, _ = _racetrack_state(ph.speed_mps * ph.duration_s, x, y)
        alt = ph.target_alt_m
    return points


def _local_site_coords(sites: Sequence[CellSite], origin: GeoPosition) -> np.ndarray:
    rad = math.pi / 180.0
    cos0 = math.cos(origin.latitude * rad)
    out = np.empty((len(sites), 3))
    for i, site in enumerate(sites):
        p = site.position
        out[i, 0] = EARTH_RADIUS_M * (p.longitude - origin.longitude) * cos0 * rad
        out[i, 1] = EARTH_RADIUS_M * (p.latitude - origin.latitude) * rad
        out[i, 2] = p.altitude_asl
    return out


def local_to_geo(x: float, y: float, alt: float, origin: GeoPosition) -> GeoPosition:
    """Inverse of the local equirectangular projection about origin."""
    rad = math.pi / 180.0
    cos0 = math.cos(origin.latitude * rad)
    lat = origin.latitude + (y / EARTH_RADIUS_M) / rad
    lon = origin.longitude + (x / (EARTH_RADIUS_M * cos0)) / rad
    return GeoPosition(latitude=lat, longitude=lon, altitude_asl=alt)


@dataclass(frozen=True)
class GroundTruth:
    """Everything the generator knows that an analyzer must rediscover."""

    cell_ids: tuple[int, ...]
    rsrp_dbm: np.ndarray               # (n_samples, n_cells), unclipped
    serving_cell_ids: tuple[int, ...]  # one per sample
    handovers: tuple[tuple[int, int, int], ...]  # (t_ns, from_id, to_id)


def _sector_loss_db(dx: np.ndarray, dy: np.ndarray,
                    azimuth_deg: float, beamwidth_deg: float) -> np.ndarray:
    bearing = np.degrees(np.arctan2(dx, dy)) % 360.0
    delta = (bearing - azimuth_deg + 180.0) % 360.0 - 180.0
    return np.minimum(12.0 * (2.0 * delta / beamwidth_deg) ** 2, 30.0)


def _clip(value: float, bounds: tuple[float, float]) -> float:
    # float() also normalizes numpy scalars before they reach the dataset
    return float(min(max(value, bounds[0]), bounds[1]))


def generate(sites: Sequence[CellSite], prop: PropagationConfig,
             plan: TrajectoryPlan, period_s: float = 1.0, *,
             hysteresis_db: float = 3.0,
             flight_id: str = "synth",
             t0_ns: int = DEFAULT_T0_NS,
             ground_elevation_m: float = DEFAULT_GROUND_ELEVATION_M,
             e2e: Optional[dict] = None) -> tuple[FlightDataset, GroundTruth]:
    """Simulate one flight over the given sites.

    Serving-cell selection is a sticky argmax: the current cell is kept
    until some candidate's received power exceeds it by hysteresis_db.
    Reported metrics are clipped to the modem reporting ranges; the raw
    (unclipped) powers are preserved in the GroundTruth.
    """
    if not sites:
        raise ValueError("need at least one cell site")
    ids = [s.id for s in sites]
    if len(set(ids)) != len(ids):
        raise ValueError("cell site ids must be unique")

    track = build_trajectory(plan, period_s)
    n = len(track)
    m = len(sites)
    rng = np.random.default_rng(prop.seed)
    los_u = rng.uniform(size=m)
    shadow = rng.normal(0.0, prop.shadow_sigma_db, size=(n, m))

    pos = np.array([[p.x, p.y, p.alt] for p in track])
    site_xyz = _local_site_coords(sites, plan.origin)
    dx = pos[:, 0:1] - site_xyz[None, :, 0].reshape(1, m)
    dy = pos[:, 1:2] - site_xyz[None, :, 1].reshape(1, m)
    dz = pos[:, 2:3] - site_xyz[None, :, 2].reshape(1, m)
    dist = np.maximum(np.sqrt(dx ** 2 + dy ** 2 + dz ** 2), 1.0)

    h_agl = np.maximum(pos[:, 2] - ground_elevation_m, 0.0)
    p_los = np.minimum(1.0, 0.2 + 0.8 * h_agl / prop.los_alt_scale_m)
    los = los_u[None, :] <= p_los[:, None]

    path_exp = np.where(los, prop.n_los, prop.n_nlos)
    extra = np.where(los, 0.0, prop.nlos_extra_db)
    sector = np.zeros((n, m))
    for j, site in enumerate(sites):
        if site.sector_azimuth_deg is not None:
            # dx, dy hold the site-to-UAV vector.
            sector[:, j] = _sector_loss_db(dx[:, j], dy[:, j],
                                           site.sector_azimuth_deg,
                                           site.sector_beamwidth_deg)
    eirp = np.array([s.eirp_dbm for s in sites])
    rsrp = (eirp[None, :]
            - (prop.pl0_db + 10.0 * path_exp * np.log10(dist))
            - sector - extra - shadow)

    lin = 10.0 ** (rsrp / 10.0)
    lin_noise = 10.0 ** (prop.noise_dbm / 10.0)
    total = lin.sum(axis=1) + lin_noise

    t_ns = [t0_ns + round(i * period_s * 1e9) for i in range(n)]
    serving_idx: list[int] = []
    handovers: list[tuple[int, int, int]] = []
    cur = -1
    for i in range(n):
        best = int(np.argmax(rsrp[i]))
        if cur < 0:
            cur = best
        elif best != cur and rsrp[i, best] - rsrp[i, cur] >= hysteresis_db:
            handovers.append((t_ns[i], ids[cur], ids[best]))
            cur = best
        serving_idx.append(cur)

    e2e_stream: list[Optional[E2EMetrics]]
    if e2e is not None:
        e2e_stream = _e2e_stream(n, rng, **{**CELLULAR_E2E_DEFAULTS, **e2e})
    else:
        e2e_stream = [None] * n

    samples = []
    for i, tp in enumerate(track):
        srv = serving_idx[i]
        rssi_raw = 10.0 * math.log10(total[i]) + RE_AGGREGATION_DB
        interference = total[i] - lin[i, srv]
        sinr_raw = rsrp[i, srv] - 10.0 * math.log10(interference)
        order = np.argsort(-rsrp[i], kind="stable")
        nb_idx = [int(j) for j in order if j != srv][:3]
        rssi = _clip(rssi_raw, RSSI_RANGE)
        serving_obs = CellObservation(
            cell_id=ids[srv],
            pci=ids[srv] % 504,
            tac=1,
            rsrp=_clip(rsrp[i, srv], RSRP_RANGE),
            rsrq=_clip(rsrp[i, srv] - rssi_raw + RE_AGGREGATION_DB, RSRQ_RANGE),
            rssi=rssi,
            sinr=_clip(sinr_raw, SINR_RANGE),
        )
        neighbors = tuple(
            CellObservation(
                cell_id=ids[j],
                rsrp=_clip(rsrp[i, j], RSRP_RANGE),
                rsrq=_clip(rsrp[i, j] - rssi_raw + RE_AGGREGATION_DB, RSRQ_RANGE),
            )
            for j in nb_idx)
        samples.append(Sample(
            timestamp=t_ns[i],
            position=local_to_geo(tp.x, tp.y, tp.alt, plan.origin),
            link=LinkType.CELLULAR,
            flight=FlightState(speed_mps=tp.speed_mps, heading_deg=tp.heading_deg,
                               roll_deg=tp.roll_deg, pitch_deg=tp.pitch_deg),
            serving=serving_obs,
            neighbors=neighbors,
            e2e=e2e_stream[i],
        ))

    ds = FlightDataset(flight_id=flight_id, samples=tuple(samples),
                       nominal_period_s=period_s)
    truth = GroundTruth(cell_ids=tuple(ids), rsrp_dbm=rsrp,
                        serving_cell_ids=tuple(ids[j] for j in serving_idx),
                        handovers=tuple(handovers))
    return ds, truth


def _trunc_normal(rng: np.random.Generator, mean: float, std: float,
                  floor: float = 0.1) -> float:
    for _ in range(64):
        v = rng.normal(mean, std)
        if v > floor:
            return v
    return floor


def _e2e_stream(n: int, rng: np.random.Generator, *,
                base_rtt_ms: float = 35.0,
                rtt_jitter_ms: float = 4.0,
                dl_mean_mbps: float = 75.0,
                ul_mean_mbps: float = 15.0,
                dl_std_mbps: float = 12.0,
                ul_std_mbps: float = 4.0,
                outage_prob: float = 0.005,
                outage_mean_s: float = 5.0,
                loss_prob: float = 0.0) -> list[Optional[E2EMetrics]]:
    if dl_mean_mbps <= 0 or ul_mean_mbps <= 0:
        raise ValueError("throughput means must be positive")
    stream: list[Optional[E2EMetrics]] = []
    outage_left = 0
    for _ in range(n):
        if outage_left > 0:
            outage_left -= 1
            stream.append(None)
            continue
        if outage_prob > 0 and rng.random() < outage_prob:
            outage_left = max(1, round(rng.exponential(outage_mean_s))) - 1
            stream.append(None)
            continue
        delivered = loss_prob <= 0 or rng.random() >= loss_prob
        rtt = base_rtt_ms + rng.exponential(rtt_jitter_ms) if delivered else None
        stream.append(E2EMetrics(
            rtt_ms=rtt,
            dl_throughput_mbps=_trunc_normal(rng, dl_mean_mbps, dl_std_mbps),
            ul_throughput_mbps=_trunc_normal(rng, ul_mean_mbps, ul_std_mbps),
            pkts_sent=1,
            pkts_delivered=int(delivered),
        ))
    return stream


# E2E defaults that give a rural-LTE-looking distribution when attaching an
# end-to-end stream to a cellular dataset.
CELLULAR_E2E_DEFAULTS = {
    "base_rtt_ms": 60.0,
    "rtt_jitter_ms": 45.0,
    "dl_mean_mbps": 8.0,
    "ul_mean_mbps": 4.5,
    "dl_std_mbps": 1.8,
    "ul_std_mbps": 1.5,
    "outage_prob": 0.002,
    "loss_prob": 0.005,
}


def starlink_e2e_model(plan: TrajectoryPlan,
                       base_rtt_ms: float = 35.0,
                       rtt_jitter_ms: float = 4.0,
                       dl_mean_mbps: float = 75.0,
                       ul_mean_mbps: float = 15.0,
                       outage_prob: float = 0.005,
                       seed: int = 0, *,
                       dl_std_mbps: float = 12.0,
                       ul_std_mbps: float = 4.0,
                       outage_mean_s: float = 5.0,
                       loss_prob: float = 0.0,
                       period_s: float = 1.0,
                       flight_id: str = "starlink-synth",
                       t0_ns: int = DEFAULT_T0_NS) -> FlightDataset:
    """Statistical stand-in for a LEO satellite link along a flight plan.

    RTT is base plus exponential jitter, throughput is truncated-normal,
    and outages null out every metric for their duration. The satellite
    link is treated as an end-to-end black box: no orbits, no radio
    metrics.
    """
    rng = np.random.default_rng(seed)
    track = build_trajectory(plan, period_s)
    stream = _e2e_stream(
        len(track), rng,
        base_rtt_ms=base_rtt_ms, rtt_jitter_ms=rtt_jitter_ms,
        dl_mean_mbps=dl_mean_mbps, ul_mean_mbps=ul_mean_mbps,
        dl_std_mbps=dl_std_mbps, ul_std_mbps=ul_std_mbps,
        outage_prob=outage_prob, outage_mean_s=outage_mean_s,
        loss_prob=loss_prob)
    samples = tuple(
        Sample(
            timestamp=t0_ns + round(i * period_s * 1e9),
            position=local_to_geo(tp.x, tp.y, tp.alt, plan.origin),
            link=LinkType.SATELLITE,
            flight=FlightState(speed_mps=tp.speed_mps, heading_deg=tp.heading_deg,
                               roll_deg=tp.roll_deg, pitch_deg=tp.pitch_deg),
            e2e=stream[i],
        )
        for i, tp in enumerate(track))
    return FlightDataset(flight_id=flight_id, samples=samples,
                         nominal_period_s=period_s)


def attach_e2e(ds: FlightDataset, seed: int = 0, **params) -> FlightDataset:
    """Overlay a synthetic end-to-end stream onto an existing dataset."""
    rng = np.random.default_rng(seed)
    merged = {**CELLULAR_E2E_DEFAULTS, **params}
    stream = _e2e_stream(len(ds.samples), rng, **merged)
    samples = tuple(replace(s, e2e=stream[i]) for i, s in enumerate(ds.samples))
    return FlightDataset(flight_id=ds.flight_id, samples=samples,
                         nominal_period_s=ds.nominal_period_s)


# ---------------------------------------------------------------------------
# Scenario files

@dataclass(frozen=True)
class Scenario:
    flight_id: str
    link: LinkType
    sites: tuple[CellSite, ...]
    prop: PropagationConfig
    plan: TrajectoryPlan
    hysteresis_db: float
    ground_elevation_m: float
    e2e: Optional[dict]


def load_scenario(path) -> Scenario:
    """Read a scenario description (JSON) into typed configuration."""
    path = Path(path)
    with path.open() as fh:
        raw = json.load(fh)

    origin_raw = raw.get("origin", {})
    ground = float(raw.get("ground_elevation_m", DEFAULT_GROUND_ELEVATION_M))
    origin = GeoPosition(latitude=float(origin_raw.get("lat", 38.90)),
                         longitude=float(origin_raw.get("lon", -95.30)),
                         altitude_asl=ground)

    phases = tuple(
        FlightPhase(kind=p["kind"], duration_s=float(p["duration_s"]),
                    target_alt_m=float(p["target_alt_m"]),
                    speed_mps=float(p.get("speed_mps", 0.0)))
        for p in raw.get("plan", []))
    plan = TrajectoryPlan(
        phases=phases, origin=origin,
        start_alt_m=float(raw.get("start_alt_m", 240.0)),
        start_heading_deg=float(raw.get("start_heading_deg", 90.0)),
        alt_min_m=float(raw.get("alt_min_m", 240.0)),
        alt_max_m=float(raw.get("alt_max_m", 400.0)))

    sites = tuple(
        CellSite(id=int(s["id"]),
                 position=GeoPosition(latitude=float(s["lat"]),
                                      longitude=float(s["lon"]),
                                      altitude_asl=float(s["alt_asl_m"])),
                 eirp_dbm=float(s["eirp_dbm"]),
                 sector_azimuth_deg=s.get("sector_azimuth_deg"),
                 sector_beamwidth_deg=s.get("sector_beamwidth_deg"))
        for s in raw.get("sites", []))

    prop = PropagationConfig(**raw.get("propagation", {}))
    return Scenario(
        flight_id=str(raw.get("flight_id", path.stem)),
        link=LinkType(raw.get("link", "cellular")),
        sites=sites,
        prop=prop,
        plan=plan,
        hysteresis_db=float(raw.get("hysteresis_db", 3.0)),
        ground_elevation_m=ground,
        e2e=raw.get("e2e"),
    )


def run_scenario(sc: Scenario, seed: Optional[int] = None,
                 period_s: float = 1.0) -> tuple[FlightDataset, Optional[GroundTruth]]:
    """Execute a scenario; seed (when given) overrides the configured one."""
    if sc.link is LinkType.SATELLITE:
        kwargs = dict(sc.e2e or {})
        use_seed = seed if seed is not None else sc.prop.seed
        ds = starlink_e2e_model(sc.plan, seed=use_seed, period_s=period_s,
                                flight_id=sc.flight_id, **kwargs)
        return ds, None
    prop = sc.prop if seed is None else replace(sc.prop, seed=seed)
    return generate(sc.sites, prop, sc.plan, period_s,
                    hysteresis_db=sc.hysteresis_db, flight_id=sc.flight_id,
                    ground_elevation_m=sc.ground_elevation_m, e2e=sc.e2e)


def save_ground_truth(truth: GroundTruth, path) -> None:
    payload = {
        "cell_ids": list(truth.cell_ids),
        "serving_cell_ids": list(truth.serving_cell_ids),
        "handovers": [list(h) for h in truth.handovers],
        "rsrp_dbm": truth.rsrp_dbm.tolist(),
    }
    with Path(path).open("w") as fh:
        json.dump(payload, fh, separators=(",", ":"))
        fh.write("\n")


def load_ground_truth(path) -> GroundTruth:
    with Path(path).open() as fh:
        raw = json.load(fh)
    return GroundTruth(
        cell_ids=tuple(raw["cell_ids"]),
        rsrp_dbm=np.asarray(raw["rsrp_dbm"], dtype=float),
        serving_cell_ids=tuple(raw["serving_cell_ids"]),
        handovers=tuple((int(a), int(b), int(c)) for a, b, c in raw["handovers"]),
    )
