"""Live end-to-end measurement against a fixed server endpoint.

Sequence-numbered UDP echo for RTT and delivery, a minimal TCP bulk
transfer for throughput, and a scheduler that runs both on their own
periods. The server endpoint is fixed by design: auto-selected speed-test
servers would add variability that makes flights incomparable.

RTT is always differenced on the monotonic clock; the wall-clock timestamp
inside each packet only labels records and aids debugging, so NTP steps
can never corrupt a measurement.
"""

from __future__ import annotations

import math
import os
import socket
import struct
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence

from .model import (
    E2EMetrics,
    FlightDataset,
    GeoPosition,
    LinkType,
    Sample,
)

ECHO_MAGIC = b"UAVP"
ECHO_VERSION = 1
KIND_REQUEST = 0
KIND_REPLY = 1
_ECHO_WIRE = struct.Struct(">4sBBQQ")
ECHO_PACKET_LEN = _ECHO_WIRE.size  # 22 bytes, exactly

TP_MAGIC = b"UAVT"
_TP_HEADER = struct.Struct(">4sBH")  # magic, direction, duration seconds
_TP_CHUNK = 16384

_U64_MAX = 2 ** 64 - 1
_RCVBUF = 1 << 20


@dataclass(frozen=True)
class EchoPacket:
    """One echo datagram. Replies preserve seq and client_ts_ns verbatim."""

    kind: int
    seq: int
    client_ts_ns: int
    magic: bytes = ECHO_MAGIC
    version: int = ECHO_VERSION

    def encode(self) -> bytes:
        if self.kind not in (KIND_REQUEST, KIND_REPLY):
            raise ValueError(f"bad kind {self.kind}")
        if not 0 <= self.seq <= _U64_MAX:
            raise ValueError("seq outside unsigned 64-bit range")
        if not 0 <= self.client_ts_ns <= _U64_MAX:
            raise ValueError("client_ts_ns outside unsigned 64-bit range")
        if len(self.magic) != 4:
            raise ValueError("magic must be 4 bytes")
        if not 0 <= self.version <= 255:
            raise ValueError("version must fit one byte")
        return _ECHO_WIRE.pack(self.magic, self.version, self.kind,
                               self.seq, self.client_ts_ns)


def decode_echo_packet(buf: bytes) -> EchoPacket:
    if len(buf) != ECHO_PACKET_LEN:
        raise ValueError(f"echo packet must be {ECHO_PACKET_LEN} bytes, got {len(buf)}")
    magic, version, kind, seq, ts = _ECHO_WIRE.unpack(buf)
    if magic != ECHO_MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != ECHO_VERSION:
        raise ValueError(f"unsupported version {version}")
    if kind not in (KIND_REQUEST, KIND_REPLY):
        raise ValueError(f"bad kind {kind}")
    return EchoPacket(kind=kind, seq=seq, client_ts_ns=ts)


class EchoServer:
    """Echoes valid requests back with kind=reply; drops everything else.

    drop_fn, when given, suppresses the reply for selected sequence numbers
    (used by tests to create deterministic loss).
    """

    def __init__(self, bind: tuple[str, int] = ("127.0.0.1", 0),
                 drop_fn: Optional[Callable[[int], bool]] = None):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, _RCVBUF)
        self._sock.bind(bind)
        self._sock.settimeout(0.05)
        self.address: tuple[str, int] = self._sock.getsockname()
        self._drop_fn = drop_fn
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def start(self) -> "EchoServer":
        self._thread = threading.Thread(target=self._serve, daemon=True)
        self._thread.start()
        return self

    def _serve(self) -> None:
        while not self._stop.is_set():
            try:
                data, addr = self._sock.recvfrom(2048)
            except socket.timeout:
                continue
            except OSError:
                break
            try:
                pkt = decode_echo_packet(data)
            except ValueError:
                continue  # malformed datagrams die silently
            if pkt.kind != KIND_REQUEST:
                continue
            if self._drop_fn is not None and self._drop_fn(pkt.seq):
                continue
            reply = EchoPacket(kind=KIND_REPLY, seq=pkt.seq,
                               client_ts_ns=pkt.client_ts_ns)
            try:
                self._sock.sendto(reply.encode(), addr)
            except OSError:
                continue

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
        self._sock.close()

    def __enter__(self) -> "EchoServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


@dataclass(frozen=True)
class ProbeResult:
    """Outcome of an echo run plus optional throughput phase results."""

    rtt_ms: tuple[Optional[float], ...]
    pkts_sent: int
    pkts_delivered: int
    dl_mbps: Optional[float] = None
    ul_mbps: Optional[float] = None

    def __post_init__(self):
        delivered = sum(1 for r in self.rtt_ms if r is not None)
        if delivered != self.pkts_delivered:
            raise ValueError("pkts_delivered must equal the non-null rtt count")
        if self.pkts_delivered > self.pkts_sent:
            raise ValueError("pkts_delivered cannot exceed pkts_sent")

    @property
    def delivery_fraction(self) -> float:
        return self.pkts_delivered / self.pkts_sent if self.pkts_sent else 0.0


class _EchoSession:
    """Connected UDP socket with a background reply collector."""

    def __init__(self, server: tuple[str, int], timeout_s: float):
        self.timeout_ns = int(timeout_s * 1e9)
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, _RCVBUF)
        self.sock.connect(server)
        self.sock.settimeout(0.05)
        self.send_mono: dict[int, int] = {}
        self.send_wall: dict[int, int] = {}
        self.arrival: dict[int, int] = {}
        self._stop = threading.Event()
        self._rx = threading.Thread(target=self._recv_loop, daemon=True)
        self._rx.start()

    def _recv_loop(self) -> None:
        while not self._stop.is_set():
            try:
                data = self.sock.recv(2048)
            except socket.timeout:
                continue
            except OSError:
                # ICMP unreachable surfaces here on connected sockets when
                # the server is down; there is simply no reply to record.
                if self._stop.is_set():
                    break
                continue
            now = time.perf_counter_ns()
            try:
                pkt = decode_echo_packet(data)
            except ValueError:
                continue
            if pkt.kind != KIND_REPLY:
                continue
            if pkt.seq in self.send_mono and pkt.seq not in self.arrival:
                self.arrival[pkt.seq] = now  # duplicates ignored after the first

    def send(self, seq: int) -> None:
        wall = time.time_ns()
        self.send_wall[seq] = wall
        self.send_mono[seq] = time.perf_counter_ns()
        try:
            self.sock.send(EchoPacket(kind=KIND_REQUEST, seq=seq,
                                      client_ts_ns=wall).encode())
        except OSError:
            pass  # counted as sent; the reply just never comes

    def drain(self) -> None:
        """Wait up to the timeout for stragglers, then stop collecting."""
        deadline = time.perf_counter_ns() + self.timeout_ns
        while (time.perf_counter_ns() < deadline
               and len(self.arrival) < len(self.send_mono)):
            time.sleep(0.002)
        self._stop.set()
        self._rx.join()
        self.sock.close()

    def rtt_ms(self, seq: int) -> Optional[float]:
        got = self.arrival.get(seq)
        if got is None:
            return None
        delta = got - self.send_mono[seq]
        if delta < 0 or delta > self.timeout_ns:
            return None  # replies after the timeout count as lost
        return delta / 1e6


def echo_client(server: tuple[str, int], count: int,
                interval_s: float = 1.0, timeout_s: float = 2.0) -> ProbeResult:
    """Send count echo requests at a fixed pace and collect the replies."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if interval_s < 0 or timeout_s <= 0:
        raise ValueError("interval_s must be >= 0 and timeout_s > 0")
    session = _EchoSession(server, timeout_s)
    t0 = time.perf_counter()
    for seq in range(count):
        target = t0 + seq * interval_s
        delay = target - time.perf_counter()
        if delay > 0:
            time.sleep(delay)
        session.send(seq)
    session.drain()
    rtts = tuple(session.rtt_ms(seq) for seq in range(count))
    return ProbeResult(rtt_ms=rtts, pkts_sent=count,
                       pkts_delivered=sum(1 for r in rtts if r is not None))


class Direction(Enum):
    DOWN = 0
    UP = 1


@dataclass(frozen=True)
class ThroughputResult:
    mbps: float
    bytes_moved: int
    elapsed_s: float
    partial: bool


class ThroughputServer:
    """Serves bulk-transfer requests; one thread per connection.

    rate_limit_mbps paces the downlink byte stream with a token bucket,
    which doubles as the reference rate source in tests.
    """

    def __init__(self, bind: tuple[str, int] = ("127.0.0.1", 0),
                 rate_limit_mbps: Optional[float] = None):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind(bind)
        self._sock.listen(8)
        self._sock.settimeout(0.05)
        self.address: tuple[str, int] = self._sock.getsockname()
        self.rate_limit_mbps = rate_limit_mbps
        self._chunk = os.urandom(_TP_CHUNK)
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def start(self) -> "ThroughputServer":
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._thread.start()
        return self

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            threading.Thread(target=self._handle, args=(conn,), daemon=True).start()

    def _recv_exact(self, conn: socket.socket, n: int) -> Optional[bytes]:
        buf = b""
        while len(buf) < n:
            part = conn.recv(n - len(buf))
            if not part:
                return None
            buf += part
        return buf

    def _handle(self, conn: socket.socket) -> None:
        try:
            conn.settimeout(10.0)
            header = self._recv_exact(conn, _TP_HEADER.size)
            if header is None:
                return
            magic, direction, duration_s = _TP_HEADER.unpack(header)
            if magic != TP_MAGIC or direction not in (Direction.DOWN.value,
                                                      Direction.UP.value):
                return
            if direction == Direction.DOWN.value:
                self._send_bulk(conn, duration_s)
                conn.shutdown(socket.SHUT_WR)
                # Let the client finish reading before teardown.
                conn.settimeout(5.0)
                while conn.recv(65536):
                    pass
            else:
                conn.settimeout(duration_s + 10.0)
                while conn.recv(65536):
                    pass
        except OSError:
            pass
        finally:
            conn.close()

    def _send_bulk(self, conn: socket.socket, duration_s: float) -> None:
        bytes_per_s = (self.rate_limit_mbps * 1e6 / 8.0
                       if self.rate_limit_mbps else None)
        start = time.perf_counter()
        sent = 0
        while True:
            elapsed = time.perf_counter() - start
            if elapsed >= duration_s:
                break
            if bytes_per_s is not None and sent + len(self._chunk) > bytes_per_s * elapsed:
                time.sleep(0.001)
                continue
            conn.sendall(self._chunk)
            sent += len(self._chunk)

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
        self._sock.close()

    def __enter__(self) -> "ThroughputServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def throughput_test(server: tuple[str, int], direction: Direction,
                    duration_s: float = 5.0) -> ThroughputResult:
    """Bulk-transfer for duration_s; rate is 8*bytes/elapsed in Mbit/s.

    A connection reset mid-test yields a partial result over the bytes that
    did move rather than an exception.
    """
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    header_duration = min(int(math.ceil(duration_s)), 0xFFFF)
    conn = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    conn.settimeout(duration_s + 10.0)
    partial = False
    moved = 0
    try:
        conn.connect(server)
        conn.sendall(_TP_HEADER.pack(TP_MAGIC, direction.value, header_duration))
        start = time.perf_counter()
        if direction is Direction.DOWN:
            try:
                while True:
                    part = conn.recv(65536)
                    if not part:
                        break
                    moved += len(part)
            except OSError:
                partial = True
            elapsed = time.perf_counter() - start
        else:
            payload = os.urandom(_TP_CHUNK)
            try:
                while time.perf_counter() - start < duration_s:
                    conn.sendall(payload)
                    moved += len(payload)
                conn.shutdown(socket.SHUT_WR)
            except OSError:
                partial = True
            elapsed = time.perf_counter() - start
    finally:
        conn.close()
    if moved == 0:
        return ThroughputResult(mbps=0.0, bytes_moved=0,
                                elapsed_s=elapsed, partial=True)
    return ThroughputResult(mbps=8.0 * moved / elapsed / 1e6,
                            bytes_moved=moved, elapsed_s=elapsed, partial=partial)


@dataclass(frozen=True)
class ProbeConfig:
    echo_server: tuple[str, int]
    duration_s: float
    throughput_server: Optional[tuple[str, int]] = None
    echo_interval_s: float = 1.0
    echo_timeout_s: float = 2.0
    throughput_every_s: Optional[float] = 60.0
    throughput_duration_s: float = 5.0

    def __post_init__(self):
        if self.duration_s <= 0 or self.echo_interval_s <= 0:
            raise ValueError("duration_s and echo_interval_s must be positive")
        if self.throughput_every_s is not None and self.throughput_every_s <= 0:
            raise ValueError("throughput_every_s must be positive when set")


@dataclass(frozen=True)
class ProbeRecord:
    """One scheduler emission, timestamped at probe start (wall clock)."""

    t_ns: int
    kind: str  # "echo" or "throughput"
    rtt_ms: Optional[float] = None
    dl_mbps: Optional[float] = None
    ul_mbps: Optional[float] = None
    pkts_sent: int = 0
    pkts_delivered: int = 0
    during_transfer: bool = False


def _overlaps(a0: int, a1: int, windows: Sequence[tuple[int, int]]) -> bool:
    return any(a0 < w1 and w0 < a1 for w0, w1 in windows)


def probe_scheduler(cfg: ProbeConfig) -> list[ProbeRecord]:
    """Run periodic echo and throughput probes concurrently.

    Echo results whose round-trip window overlaps an active bulk transfer
    carry during_transfer=True, since a saturated link biases the RTT.
    Shutdown drains in-flight echo sequences up to the echo timeout.
    """
    session = _EchoSession(cfg.echo_server, cfg.echo_timeout_s)
    transfer_windows: list[tuple[int, int]] = []
    tp_records: list[ProbeRecord] = []
    lock = threading.Lock()

    run_throughput = (cfg.throughput_server is not None
                      and cfg.throughput_every_s is not None)

    def tp_loop() -> None:
        start = time.perf_counter()
        k = 0
        while True:
            target = k * cfg.throughput_every_s
            if target >= cfg.duration_s:
                break
            delay = start + target - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
            wall = time.time_ns()
            w0 = time.perf_counter_ns()
            try:
                dl = throughput_test(cfg.throughput_server, Direction.DOWN,
                                     cfg.throughput_duration_s)
                ul = throughput_test(cfg.throughput_server, Direction.UP,
                                     cfg.throughput_duration_s)
                record = ProbeRecord(t_ns=wall, kind="throughput",
                                     dl_mbps=dl.mbps, ul_mbps=ul.mbps)
            except OSError:
                record = ProbeRecord(t_ns=wall, kind="throughput")
            w1 = time.perf_counter_ns()
            with lock:
                transfer_windows.append((w0, w1))
                tp_records.append(record)
            k += 1

    tp_thread = None
    if run_throughput:
        tp_thread = threading.Thread(target=tp_loop, daemon=True)
        tp_thread.start()

    t0 = time.perf_counter()
    seq = 0
    while seq * cfg.echo_interval_s < cfg.duration_s:
        delay = t0 + seq * cfg.echo_interval_s - time.perf_counter()
        if delay > 0:
            time.sleep(delay)
        session.send(seq)
        seq += 1
    if tp_thread is not None:
        tp_thread.join()
    session.drain()

    records: list[ProbeRecord] = []
    with lock:
        records.extend(tp_records)
        windows = list(transfer_windows)
    for s in range(seq):
        rtt = session.rtt_ms(s)
        sent_mono = session.send_mono[s]
        end_mono = session.arrival.get(s, sent_mono + session.timeout_ns)
        records.append(ProbeRecord(
            t_ns=session.send_wall[s], kind="echo", rtt_ms=rtt,
            pkts_sent=1, pkts_delivered=int(rtt is not None),
            during_transfer=_overlaps(sent_mono, end_mono, windows)))
    records.sort(key=lambda r: (r.t_ns, r.kind))
    return records


def records_to_dataset(records: Sequence[ProbeRecord],
                       position: GeoPosition = GeoPosition(0.0, 0.0, 0.0),
                       link: LinkType = LinkType.CELLULAR,
                       flight_id: str = "probe") -> FlightDataset:
    """Convert scheduler records into the interchange dataset shape.

    Radio columns stay null; the transfer-bias flag has no column in the
    interchange format and is dropped here, so callers needing it must keep
    the records.
    """
    if not records:
        raise ValueError("no records")
    samples = []
    last_ts = None
    for r in sorted(records, key=lambda r: r.t_ns):
        ts = r.t_ns if last_ts is None else max(r.t_ns, last_ts + 1)
        last_ts = ts
        samples.append(Sample(
            timestamp=ts, position=position, link=link,
            e2e=E2EMetrics(rtt_ms=r.rtt_ms, dl_throughput_mbps=r.dl_mbps,
                           ul_throughput_mbps=r.ul_mbps,
                           pkts_sent=r.pkts_sent or None,
                           pkts_delivered=(r.pkts_delivered
                                           if r.pkts_sent else None))))
    return FlightDataset(flight_id=flight_id, samples=tuple(samples))
