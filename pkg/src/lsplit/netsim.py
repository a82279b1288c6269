"""Deterministic channel model, traffic metering, eavesdropper tap, and
plaintext-leak detection.

The channel is lossless and in-order. Communication latency is modeled,
never measured: each message costs rtt/2 + bits/bandwidth, which keeps the
latency columns of every report bit-deterministic.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .errors import ParameterError
from .wire import MSG_NAMES, decode_frame

DIR_UPLINK = "uplink"
DIR_DOWNLINK = "downlink"


@dataclass(frozen=True)
class ChannelConfig:
    bandwidth_bits_per_s: float = 1e9
    rtt_s: float = 0.0

    def __post_init__(self):
        if not self.bandwidth_bits_per_s > 0:
            raise ParameterError("bandwidth must be > 0")
        if self.rtt_s < 0:
            raise ParameterError("rtt must be >= 0")


def deliver(channel: ChannelConfig, n_bytes: int, t_send: float) -> float:
    """Arrival time for one frame: t_send + rtt/2 + serialized bits / bandwidth."""
    return t_send + channel.rtt_s / 2.0 + (n_bytes * 8.0) / channel.bandwidth_bits_per_s


def analytic_llm_traffic(l_in: int, l_out: int, dim: int, bytes_per_elem: int,
                         caching: bool) -> int:
    """Hidden-state payload bytes per direction for one generation.

    Without caching the full (L_in + i, D) matrix crosses at step i, so the
    total is sum_{i=0}^{L_out-1} (L_in + i) * D * s, which is O(L^2 D). With
    caching only the newest rows cross: (L_in + L_out - 1) * D * s, O(L D).
    """
    if l_in <= 0 or l_out <= 0 or dim <= 0 or bytes_per_elem <= 0:
        raise ParameterError("analytic_llm_traffic needs positive arguments")
    if caching:
        rows = l_in + l_out - 1
    else:
        rows = sum(l_in + i for i in range(l_out))
    return rows * dim * bytes_per_elem


@dataclass
class TrafficReport:
    """Byte/message accounting plus the modeled and measured latencies."""

    uplink_payload_bytes: int = 0
    downlink_payload_bytes: int = 0
    uplink_overhead_bytes: int = 0
    downlink_overhead_bytes: int = 0
    uplink_messages: int = 0
    downlink_messages: int = 0
    message_counts: dict = field(default_factory=dict)
    comm_latency_s: float = 0.0
    local_compute_s: float = 0.0
    cloud_compute_s: float = 0.0
    units_generated: int = 0

    @property
    def uplink_total_bytes(self) -> int:
        return self.uplink_payload_bytes + self.uplink_overhead_bytes

    @property
    def downlink_total_bytes(self) -> int:
        return self.downlink_payload_bytes + self.downlink_overhead_bytes

    @property
    def total_bytes(self) -> int:
        return self.uplink_total_bytes + self.downlink_total_bytes

    @property
    def total_latency_s(self) -> float:
        return self.comm_latency_s + self.local_compute_s + self.cloud_compute_s

    @property
    def throughput_per_s(self) -> float:
        t = self.total_latency_s
        return self.units_generated / t if t > 0 else 0.0

    def payload_bytes_for(self, msg_type: int, direction: str) -> int:
        return self.message_counts.get((direction, MSG_NAMES[msg_type]), {}).get("payload", 0)

    def count_for(self, msg_type: int, direction: str) -> int:
        return self.message_counts.get((direction, MSG_NAMES[msg_type]), {}).get("count", 0)

    def record(self, direction: str, msg_name: str, payload: int, overhead: int) -> None:
        if direction == DIR_UPLINK:
            self.uplink_payload_bytes += payload
            self.uplink_overhead_bytes += overhead
            self.uplink_messages += 1
        else:
            self.downlink_payload_bytes += payload
            self.downlink_overhead_bytes += overhead
            self.downlink_messages += 1
        slot = self.message_counts.setdefault((direction, msg_name), {"count": 0, "payload": 0})
        slot["count"] += 1
        slot["payload"] += payload

    def as_dict(self) -> dict:
        return {
            "uplink_payload_bytes": self.uplink_payload_bytes,
            "downlink_payload_bytes": self.downlink_payload_bytes,
            "uplink_overhead_bytes": self.uplink_overhead_bytes,
            "downlink_overhead_bytes": self.downlink_overhead_bytes,
            "uplink_total_bytes": self.uplink_total_bytes,
            "downlink_total_bytes": self.downlink_total_bytes,
            "total_bytes": self.total_bytes,
            "uplink_messages": self.uplink_messages,
            "downlink_messages": self.downlink_messages,
            "message_counts": {
                f"{d}:{name}": dict(v) for (d, name), v in sorted(self.message_counts.items())
            },
            "comm_latency_s": self.comm_latency_s,
            "local_compute_s": self.local_compute_s,
            "cloud_compute_s": self.cloud_compute_s,
            "total_latency_s": self.total_latency_s,
            "units_generated": self.units_generated,
            "throughput_per_s": self.throughput_per_s,
        }


@dataclass
class CaptureEntry:
    timestamp: float
    direction: str
    data: bytes


class CaptureLog:
    """Byte-faithful, append-only record of everything that crossed the channel."""

    def __init__(self):
        self.entries: list[CaptureEntry] = []

    def record(self, timestamp: float, direction: str, data: bytes) -> None:
        self.entries.append(CaptureEntry(timestamp, direction, bytes(data)))

    def __len__(self) -> int:
        return len(self.entries)

    def export_binary(self, path) -> None:
        """Length-prefixed export: u32 len, u8 direction (0 up / 1 down), f64 t, bytes."""
        with open(path, "wb") as fh:
            for e in self.entries:
                fh.write(struct.pack("<IBd", len(e.data), 0 if e.direction == DIR_UPLINK else 1,
                                     e.timestamp))
                fh.write(e.data)

    @staticmethod
    def import_binary(path) -> "CaptureLog":
        log = CaptureLog()
        with open(path, "rb") as fh:
            raw = fh.read()
        pos = 0
        while pos < len(raw):
            n, d, t = struct.unpack_from("<IBd", raw, pos)
            pos += struct.calcsize("<IBd")
            log.record(t, DIR_UPLINK if d == 0 else DIR_DOWNLINK, raw[pos : pos + n])
            pos += n
        return log

    def hexdump_lines(self, entry_index: int) -> list[str]:
        return hexdump(self.entries[entry_index].data)

    def export_hexdump(self, path) -> None:
        """Human-readable text export: one header + dump block per entry."""
        with open(path, "w") as fh:
            for i, e in enumerate(self.entries):
                fh.write(f"# entry {i} {e.direction} t={e.timestamp:.9f}s "
                         f"len={len(e.data)}\n")
                for line in hexdump(e.data):
                    fh.write(line + "\n")


def hexdump(data: bytes) -> list[str]:
    """Classic 16-bytes-per-row dump: offset, hex columns, printable gutter."""
    lines = []
    for off in range(0, len(data), 16):
        chunk = data[off : off + 16]
        hex_cols = " ".join(f"{b:02x}" for b in chunk[:8])
        if len(chunk) > 8:
            hex_cols += "  " + " ".join(f"{b:02x}" for b in chunk[8:])
        printable = "".join(chr(b) if 32 <= b < 127 else "." for b in chunk)
        lines.append(f"{off:08x}  {hex_cols:<49} |{printable}|")
    if not data:
        lines.append("00000000  (empty)")
    return lines


def tap_record(capture: CaptureLog, direction: str, data: bytes, timestamp: float = 0.0) -> None:
    """Append one byte-faithful entry to the eavesdropper's capture."""
    capture.record(timestamp, direction, data)


@dataclass(frozen=True)
class Leak:
    entry_index: int
    payload_start: int
    payload_end: int  # exclusive
    frame_start: int  # offset within the captured frame bytes
    frame_end: int

    @property
    def length(self) -> int:
        return self.payload_end - self.payload_start


MIN_LEAK_LEN = 4


def detect_plaintext_leak(capture: CaptureLog, secret: bytes) -> list[Leak]:
    """Find every occurrence of any >=4-byte contiguous substring of ``secret``
    inside any captured frame payload.

    Matching is purely byte-wise, so there are no false positives by
    construction; any contiguous copy of >= 4 secret bytes contains a 4-gram
    and is therefore always found (completeness). Overlapping hits are merged
    into maximal intervals.
    """
    secret = bytes(secret)
    if len(secret) < MIN_LEAK_LEN:
        raise ParameterError(f"secret must be at least {MIN_LEAK_LEN} bytes")
    grams = {secret[i : i + MIN_LEAK_LEN] for i in range(len(secret) - MIN_LEAK_LEN + 1)}
    leaks: list[Leak] = []
    for idx, entry in enumerate(capture.entries):
        try:
            frame = decode_frame(entry.data)
        except Exception:
            continue  # non-frame bytes never carry a payload to scan
        payload = frame.payload
        if len(payload) < MIN_LEAK_LEN:
            continue
        offset = len(entry.data) - len(payload)
        hit_starts = set()
        for gram in grams:
            start = payload.find(gram)
            while start != -1:
                hit_starts.add(start)
                start = payload.find(gram, start + 1)
        if not hit_starts:
            continue
        # merge 4-gram hits into maximal intervals
        starts = sorted(hit_starts)
        intervals = []
        lo = starts[0]
        hi = starts[0] + MIN_LEAK_LEN
        for s in starts[1:]:
            if s <= hi - MIN_LEAK_LEN + 1:
                hi = max(hi, s + MIN_LEAK_LEN)
            else:
                intervals.append((lo, hi))
                lo, hi = s, s + MIN_LEAK_LEN
        intervals.append((lo, hi))
        for lo, hi in intervals:
            leaks.append(Leak(idx, lo, hi, offset + lo, offset + hi))
    return leaks
