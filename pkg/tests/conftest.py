"""Shared builders for the test suite."""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from uavnet.model import (
    CellObservation,
    E2EMetrics,
    FlightDataset,
    FlightState,
    GeoPosition,
    LinkType,
    Sample,
)
from uavnet.synth import CellSite, local_to_geo

T0_NS = 1_748_736_000_000_000_000
NS = 1_000_000_000

ORIGIN = GeoPosition(38.90, -95.30, 240.0)


def make_sample(t_s=0, *, lat=38.90, lon=-95.30, alt=300.0, cell=None,
                rsrp=None, rsrq=None, rssi=None, sinr=None, nb=(),
                rtt=None, dl=None, ul=None, pkts=None, flight=None,
                link=LinkType.CELLULAR):
    """One sample at T0 + t_s seconds; nb is a list of (cell_id, rsrp) pairs."""
    serving = None
    if cell is not None or rsrp is not None or rsrq is not None:
        serving = CellObservation(cell_id=cell, rsrp=rsrp, rsrq=rsrq,
                                  rssi=rssi, sinr=sinr)
    neighbors = tuple(CellObservation(cell_id=c, rsrp=r) for c, r in nb)
    e2e = None
    if rtt is not None or dl is not None or ul is not None or pkts is not None:
        sent, delivered = pkts if pkts is not None else (None, None)
        e2e = E2EMetrics(rtt_ms=rtt, dl_throughput_mbps=dl,
                         ul_throughput_mbps=ul, pkts_sent=sent,
                         pkts_delivered=delivered)
    return Sample(timestamp=T0_NS + int(t_s * NS),
                  position=GeoPosition(lat, lon, alt), link=link,
                  flight=flight, serving=serving, neighbors=neighbors, e2e=e2e)


def trace(cells, **common):
    """Dataset from a serving cell_id per second; None means a radio gap."""
    samples = [make_sample(i, cell=c, rsrp=-90.0 if c is not None else None,
                           **common)
               for i, c in enumerate(cells)]
    return FlightDataset(flight_id="trace", samples=tuple(samples))


def dataset_of(samples, flight_id="test"):
    return FlightDataset(flight_id=flight_id, samples=tuple(samples))


def inject_serving_nulls(ds: FlightDataset, indices) -> FlightDataset:
    samples = list(ds.samples)
    for i in indices:
        samples[i] = replace(samples[i], serving=None)
    return FlightDataset(flight_id=ds.flight_id, samples=tuple(samples),
                         nominal_period_s=ds.nominal_period_s)


def site_at(local_x, local_y, alt_asl, cell_id, eirp=58.0, origin=ORIGIN):
    return CellSite(id=cell_id,
                    position=local_to_geo(local_x, local_y, alt_asl, origin),
                    eirp_dbm=eirp)


def ring_sites(n=10, radius=2500.0, alt_asl=700.0, eirp=58.0, origin=ORIGIN):
    """Sites on elevated terrain around the origin; distance to a climbing
    UAV shrinks with altitude, so within a LOS state the received power can
    only improve."""
    sites = []
    for i in range(n):
        ang = 2 * math.pi * i / n
        sites.append(site_at(radius * math.cos(ang), radius * math.sin(ang),
                             alt_asl, cell_id=i + 1, eirp=eirp, origin=origin))
    return sites


def haversine_m(lat1, lon1, lat2, lon2):
    """Independent great-circle distance for checking the local projection."""
    r = 6_371_000.0
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * r * math.asin(math.sqrt(a))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
