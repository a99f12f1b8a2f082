"""Packet arrival processes and per-flow FIFO queues."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Optional

import numpy as np


class TrafficError(Exception):
    pass


class TrafficKind(str, Enum):
    CBR = "CBR"
    POISSON = "POISSON"
    VBR_VIDEO = "VBR_VIDEO"


# VBR frames larger than this multiple of the mean are clipped
VBR_TRUNCATION_FACTOR = 8.0


@dataclass(frozen=True)
class TrafficSource:
    flow_id: int
    src_aid: int
    dst_aid: int
    kind: TrafficKind
    mean_rate_bps: int
    packet_size_bytes: int = 1500
    frame_interval_us: int = 16_667
    frame_jitter_us: int = 0
    frame_size_sigma: float = 0.3
    start_us: int = 0
    stop_us: Optional[int] = None

    def __post_init__(self):
        if self.mean_rate_bps <= 0:
            raise TrafficError(f"flow {self.flow_id}: meanRate must be > 0")
        if self.packet_size_bytes <= 0:
            raise TrafficError(f"flow {self.flow_id}: packetSize must be > 0")
        if self.kind is TrafficKind.VBR_VIDEO and self.frame_interval_us <= 0:
            raise TrafficError(f"flow {self.flow_id}: frameInterval must be > 0")

    @property
    def packet_size_bits(self) -> int:
        return self.packet_size_bytes * 8

    @property
    def mean_interarrival_us(self) -> int:
        """Mean packet (CBR/Poisson) or frame (VBR) spacing in microseconds."""
        if self.kind is TrafficKind.VBR_VIDEO:
            return self.frame_interval_us
        return max(1, round(self.packet_size_bits * 1e6 / self.mean_rate_bps))

    @property
    def mean_frame_bytes(self) -> float:
        return self.mean_rate_bps * self.frame_interval_us / 8e6


def _draw_frame_bits(src: TrafficSource, rng: np.random.Generator) -> int:
    """Log-normal frame size with the configured mean, clipped at the tail."""
    mean = src.mean_frame_bytes
    sigma = src.frame_size_sigma
    if sigma > 0:
        mu = np.log(mean) - sigma * sigma / 2.0
        size_bytes = float(rng.lognormal(mu, sigma))
    else:
        size_bytes = mean
    size_bytes = min(size_bytes, VBR_TRUNCATION_FACTOR * mean)
    return max(1, round(size_bytes)) * 8


def next_arrival(src: TrafficSource, now_us: int, rng: np.random.Generator) -> tuple[int, int]:
    """Next arrival after `now_us` as (time_us, size_bits).

    For VBR video the returned size is a whole frame; fragment it with
    `fragment_bits` before queueing.
    """
    if src.kind is TrafficKind.CBR:
        return now_us + src.mean_interarrival_us, src.packet_size_bits
    if src.kind is TrafficKind.POISSON:
        gap = max(1, round(rng.exponential(src.mean_interarrival_us)))
        return now_us + gap, src.packet_size_bits
    # VBR video: jittered frame clock, log-normal frame size
    jitter = 0
    if src.frame_jitter_us > 0:
        jitter = int(rng.integers(-src.frame_jitter_us, src.frame_jitter_us + 1))
    gap = max(1, src.frame_interval_us + jitter)
    return now_us + gap, _draw_frame_bits(src, rng)


def fragment_bits(size_bits: int, mtu_bytes: int) -> list[int]:
    """Split a frame into MTU-sized packets (whole bytes, last one short)."""
    mtu_bits = mtu_bytes * 8
    out = []
    left = size_bits
    while left > 0:
        part = min(left, mtu_bits)
        out.append(part)
        left -= part
    return out


def packet_stream(
    src: TrafficSource,
    rng: np.random.Generator,
    horizon_us: int,
) -> Iterator[tuple[int, int]]:
    """Yield (arrival_us, size_bits) packets in time order up to the horizon.

    CBR and VBR emit their first packet/frame exactly at start_us; Poisson
    draws the first gap from start_us. VBR frames are fragmented into
    MTU-sized packets sharing the frame arrival time.
    """
    stop = horizon_us if src.stop_us is None else min(src.stop_us, horizon_us)
    if src.kind is TrafficKind.POISSON:
        t, size = next_arrival(src, src.start_us, rng)
        while t < stop:
            yield t, size
            t, size = next_arrival(src, t, rng)
        return
    t = src.start_us
    if src.kind is TrafficKind.CBR:
        while t < stop:
            yield t, src.packet_size_bits
            t += src.mean_interarrival_us
        return
    # VBR: first frame at start_us, then a jittered frame clock
    size = _draw_frame_bits(src, rng)
    while t < stop:
        for part in fragment_bits(size, src.packet_size_bytes):
            yield t, part
        t, size = next_arrival(src, t, rng)


@dataclass(frozen=True)
class Packet:
    arrival_us: int
    size_bits: int

    @property
    def size_bytes(self) -> int:
        return (self.size_bits + 7) // 8


class FlowQueue:
    """Tail-drop FIFO with byte-conservation counters."""

    def __init__(self, flow_id: int, capacity_bytes: int = 2_000_000):
        self.flow_id = flow_id
        self.capacity_bytes = capacity_bytes
        self.packets: deque[Packet] = deque()
        self.bytes_in = 0
        self.bytes_out = 0
        self.bytes_dropped = 0
        self.queued_bytes = 0

    def __len__(self) -> int:
        return len(self.packets)

    @property
    def queued_bits(self) -> int:
        return self.queued_bytes * 8

    @property
    def backlogged(self) -> bool:
        return bool(self.packets)

    def enqueue(self, pkt: Packet) -> bool:
        """Append the packet; False means it was tail-dropped."""
        size = pkt.size_bytes
        self.bytes_in += size
        if self.queued_bytes + size > self.capacity_bytes:
            self.bytes_dropped += size
            return False
        self.packets.append(pkt)
        self.queued_bytes += size
        return True

    def dequeue_up_to(self, budget_bits: int) -> list[Packet]:
        """Remove the longest FIFO prefix that fits the bit budget whole."""
        out: list[Packet] = []
        while self.packets and self.packets[0].size_bits <= budget_bits:
            pkt = self.packets.popleft()
            budget_bits -= pkt.size_bits
            self.queued_bytes -= pkt.size_bytes
            self.bytes_out += pkt.size_bytes
            out.append(pkt)
        return out

    def pop_head(self) -> Packet:
        pkt = self.packets.popleft()
        self.queued_bytes -= pkt.size_bytes
        self.bytes_out += pkt.size_bytes
        return pkt

    def head(self) -> Packet:
        return self.packets[0]

    def conservation_holds(self) -> bool:
        return self.bytes_in == self.bytes_out + self.bytes_dropped + self.queued_bytes
