"""Sectorized 60 GHz link model: path loss, sector gains, SINR, MCS selection.

The antenna pattern is a flat-top abstraction: full main-lobe gain inside
the sector wedge pointed at the peer, a constant side-lobe level
everywhere else. Beam training is assumed done; each link uses the static
best sector toward its peer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence

CARRIER_FREQ_HZ = 60e9
SPEED_OF_LIGHT = 3e8
REFERENCE_DISTANCE_M = 1.0
THERMAL_NOISE_DBM_HZ = -174.0
MAX_PHY_RATE_BPS = 6_750_000_000

TWO_PI = 2.0 * math.pi


class RadioError(Exception):
    pass


class DegenerateGeometry(RadioError):
    """Two stations share the same position."""


class Role(str, Enum):
    PCP_AP = "PCP_AP"
    STA = "STA"


@dataclass(frozen=True)
class SectorPattern:
    main_lobe_gain_dbi: float = 15.0
    side_lobe_gain_dbi: float = -10.0

    def __post_init__(self):
        if self.main_lobe_gain_dbi <= self.side_lobe_gain_dbi:
            raise RadioError("mainLobeGain must exceed sideLobeGain")


@dataclass(frozen=True)
class Station:
    aid: int
    position: tuple[float, float]
    n_sectors: int = 8
    boresight_rad: float = 0.0
    tx_power_dbm: float = 10.0
    noise_figure_db: float = 10.0
    role: Role = Role.STA
    pattern: SectorPattern = SectorPattern()

    def __post_init__(self):
        if self.n_sectors < 1:
            raise RadioError(f"station {self.aid}: nSectors must be >= 1")

    @property
    def sector_width_rad(self) -> float:
        return TWO_PI / self.n_sectors

    def sector_toward(self, target: tuple[float, float]) -> int:
        """Index of the wedge containing the direction to the target."""
        angle = math.atan2(target[1] - self.position[1], target[0] - self.position[0])
        rel = (angle - self.boresight_rad) % TWO_PI
        return min(int(rel / self.sector_width_rad), self.n_sectors - 1)

    def sector_gain_dbi(self, sector: int, target: tuple[float, float]) -> float:
        """Gain of a given sector in the direction of the target point."""
        if self.sector_toward(target) == sector % self.n_sectors:
            return self.pattern.main_lobe_gain_dbi
        return self.pattern.side_lobe_gain_dbi


def distance_m(a: Station, b: Station) -> float:
    return math.hypot(a.position[0] - b.position[0], a.position[1] - b.position[1])


def path_gain_db(
    tx: Station,
    rx: Station,
    tx_sector: int,
    rx_sector: int,
    path_loss_exponent: float = 2.5,
) -> float:
    """Directional channel gain tx->rx in dB (antenna gains minus path loss)."""
    d = distance_m(tx, rx)
    if d == 0.0:
        raise DegenerateGeometry(f"stations {tx.aid} and {rx.aid} are co-located")
    fspl = 20.0 * math.log10(4.0 * math.pi * d * CARRIER_FREQ_HZ / SPEED_OF_LIGHT)
    fspl += 10.0 * (path_loss_exponent - 2.0) * math.log10(d / REFERENCE_DISTANCE_M)
    g_tx = tx.sector_gain_dbi(tx_sector, rx.position)
    g_rx = rx.sector_gain_dbi(rx_sector, tx.position)
    return g_tx + g_rx - fspl


@dataclass(frozen=True)
class McsEntry:
    index: int
    min_sinr_db: float
    phy_rate_bps: int


class McsTable:
    """Ordered MCS entries with strictly increasing SINR thresholds."""

    def __init__(self, entries: Sequence[McsEntry]):
        if not entries:
            raise RadioError("MCS table must not be empty")
        for i, e in enumerate(entries):
            if e.index != i:
                raise RadioError("MCS indices must be 0..n-1 in order")
            if i > 0:
                if e.min_sinr_db <= entries[i - 1].min_sinr_db:
                    raise RadioError("MCS thresholds must be strictly increasing")
                if e.phy_rate_bps < entries[i - 1].phy_rate_bps:
                    raise RadioError("MCS rates must be non-decreasing")
        if entries[-1].phy_rate_bps > MAX_PHY_RATE_BPS:
            raise RadioError(f"MCS rate above {MAX_PHY_RATE_BPS} bps")
        self.entries = tuple(entries)

    def __len__(self) -> int:
        return len(self.entries)

    def rate_bps(self, index: int) -> int:
        return self.entries[index].phy_rate_bps

    def min_sinr_db(self, index: int) -> float:
        return self.entries[index].min_sinr_db

    @property
    def top_rate_bps(self) -> int:
        return self.entries[-1].phy_rate_bps


def default_mcs_table() -> McsTable:
    """8 entries, thresholds every 3 dB from 1 dB, rates geometric to the cap."""
    lo, hi = 385_000_000, MAX_PHY_RATE_BPS
    return McsTable(
        [
            McsEntry(k, 1.0 + 3.0 * k, round(lo * (hi / lo) ** (k / 7.0)))
            for k in range(8)
        ]
    )


def select_mcs(sinr_db: float, table: McsTable, margin_db: float = 2.0) -> Optional[int]:
    """Highest MCS whose threshold plus margin is met; None means outage."""
    best = None
    for e in table.entries:
        if e.min_sinr_db + margin_db <= sinr_db:
            best = e.index
        else:
            break
    return best


def noise_floor_dbm(rx: Station, bandwidth_hz: float) -> float:
    return THERMAL_NOISE_DBM_HZ + 10.0 * math.log10(bandwidth_hz) + rx.noise_figure_db


@dataclass(frozen=True)
class World:
    """Static geometry and channel parameters shared by all links."""

    stations: dict[int, Station]
    path_loss_exponent: float = 2.5
    bandwidth_hz: float = 1.76e9

    def station(self, aid: int) -> Station:
        return self.stations[aid]


@dataclass
class LinkState:
    """Resolved directed link: best sectors, SNR and the MCS it supports."""

    src_aid: int
    dst_aid: int
    best_tx_sector: int
    best_rx_sector: int
    base_snr_db: float
    attenuation_db: float = 0.0
    mcs: Optional[int] = None
    phy_rate_bps: int = 0

    @property
    def snr_db(self) -> float:
        return self.base_snr_db - self.attenuation_db

    @property
    def blocked(self) -> bool:
        return self.mcs is None

    # static links expose the same time-indexed accessors as the engine's
    # blockage-aware link timelines
    def mcs_at(self, t_us: int) -> Optional[int]:
        return self.mcs

    def rate_at(self, t_us: int) -> int:
        return self.phy_rate_bps

    def next_change_us(self, t_us: int) -> Optional[int]:
        return None


def resolve_link(
    world: World,
    src_aid: int,
    dst_aid: int,
    table: McsTable,
    margin_db: float = 2.0,
) -> LinkState:
    """Build the LinkState for a directed pair under the best-sector assumption."""
    tx = world.station(src_aid)
    rx = world.station(dst_aid)
    tx_sector = tx.sector_toward(rx.position)
    rx_sector = rx.sector_toward(tx.position)
    gain = path_gain_db(tx, rx, tx_sector, rx_sector, world.path_loss_exponent)
    snr = tx.tx_power_dbm + gain - noise_floor_dbm(rx, world.bandwidth_hz)
    link = LinkState(
        src_aid=src_aid,
        dst_aid=dst_aid,
        best_tx_sector=tx_sector,
        best_rx_sector=rx_sector,
        base_snr_db=snr,
    )
    return _reselect(link, table, margin_db)


def _reselect(link: LinkState, table: McsTable, margin_db: float) -> LinkState:
    link.mcs = select_mcs(link.snr_db, table, margin_db)
    link.phy_rate_bps = table.rate_bps(link.mcs) if link.mcs is not None else 0
    return link


def sinr_db(
    world: World,
    link: LinkState,
    concurrent: list[tuple[Station, int]],
) -> float:
    """SINR at the link's receiver with the given concurrent transmitters.

    Interference is accumulated in the linear domain through each
    interferer's own transmit sector and the receiver's serving sector.
    """
    tx = world.station(link.src_aid)
    rx = world.station(link.dst_aid)
    s_dbm = tx.tx_power_dbm + path_gain_db(
        tx, rx, link.best_tx_sector, link.best_rx_sector, world.path_loss_exponent
    ) - link.attenuation_db
    n_mw = 10.0 ** (noise_floor_dbm(rx, world.bandwidth_hz) / 10.0)
    i_mw = 0.0
    for itx, itx_sector in concurrent:
        if itx.aid == link.src_aid:
            raise RadioError("link transmitter listed among concurrent interferers")
        gain = path_gain_db(
            itx, rx, itx_sector, link.best_rx_sector, world.path_loss_exponent
        )
        i_mw += 10.0 ** ((itx.tx_power_dbm + gain) / 10.0)
    s_mw = 10.0 ** (s_dbm / 10.0)
    return 10.0 * math.log10(s_mw / (n_mw + i_mw))


def spatial_compatibility(
    link_a: LinkState,
    link_b: LinkState,
    world: World,
    table: McsTable,
    margin_db: float,
) -> bool:
    """True when both links keep their current MCS (plus margin) while
    transmitting concurrently. Symmetric in its link arguments."""
    if {link_a.src_aid, link_a.dst_aid} & {link_b.src_aid, link_b.dst_aid}:
        return False
    if link_a.mcs is None or link_b.mcs is None:
        return False
    for own, other in ((link_a, link_b), (link_b, link_a)):
        itx = world.station(other.src_aid)
        sinr = sinr_db(world, own, [(itx, other.best_tx_sector)])
        if sinr < table.min_sinr_db(own.mcs) + margin_db:
            return False
    return True


@dataclass(frozen=True)
class BlockageEvent:
    """Square-wave attenuation on one directed link."""

    src_aid: int
    dst_aid: int
    start_us: int
    duration_us: int
    attenuation_db: float

    @property
    def end_us(self) -> int:
        return self.start_us + self.duration_us


def apply_blockage(
    link: LinkState, event: BlockageEvent, table: McsTable, margin_db: float = 2.0
) -> LinkState:
    """Link state while the event is active (SNR reduced, MCS re-selected)."""
    out = replace(link, attenuation_db=link.attenuation_db + event.attenuation_db)
    return _reselect(out, table, margin_db)


def clear_blockage(
    link: LinkState, event: BlockageEvent, table: McsTable, margin_db: float = 2.0
) -> LinkState:
    """Link state after the event expires; restores the prior MCS exactly."""
    out = replace(link, attenuation_db=link.attenuation_db - event.attenuation_db)
    return _reselect(out, table, margin_db)
