"""Scenario documents: schema validation, defaults, effective-config echo.

A scenario is a JSON-compatible mapping with top-level keys
bi, stations, flows, tspecs, mcsTable, mac, blockages, sim.
Loading fills every default explicitly, so the effective configuration
can be echoed back verbatim and re-loaded to the identical scenario.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Optional

from .mac import MacConfig
from .radio import (
    BlockageEvent,
    McsEntry,
    McsTable,
    Role,
    SectorPattern,
    Station,
    World,
    default_mcs_table,
)
from .schedule import BiConfig, MalformedTspec, ScheduleError, TSpec
from .traffic import TrafficError, TrafficKind, TrafficSource


class SchemaError(Exception):
    """A scenario document violates the schema; the message names the key."""


class UnknownReferenceError(SchemaError):
    """A flow, tspec or blockage references an aid or flowId that does not exist."""


@dataclass(frozen=True)
class SimParams:
    duration_us: int = 1_000_000
    seed: int = 1
    path_loss_exponent: float = 2.5
    channel_bandwidth_hz: float = 1.76e9


@dataclass(frozen=True)
class FlowSpec:
    """One traffic flow plus its queueing parameters."""

    source: TrafficSource
    queue_capacity_bytes: int = 2_000_000


@dataclass
class Scenario:
    bi: BiConfig
    stations: list[Station]
    flows: list[FlowSpec]
    tspecs: list[TSpec]
    mcs_table: McsTable
    mac: MacConfig
    blockages: list[BlockageEvent]
    sim: SimParams

    @property
    def n_bis(self) -> int:
        return self.sim.duration_us // self.bi.bi_duration_us

    def world(self) -> World:
        return World(
            stations={s.aid: s for s in self.stations},
            path_loss_exponent=self.sim.path_loss_exponent,
            bandwidth_hz=self.sim.channel_bandwidth_hz,
        )

    def with_overrides(
        self, seed: Optional[int] = None, duration_us: Optional[int] = None
    ) -> "Scenario":
        sim = self.sim
        if seed is not None:
            sim = replace(sim, seed=seed)
        if duration_us is not None:
            if duration_us % self.bi.bi_duration_us != 0:
                raise SchemaError("sim.durationUs: must be a multiple of bi.biDuration")
            sim = replace(sim, duration_us=duration_us)
        return replace(self, sim=sim)


TOP_KEYS = {"bi", "stations", "flows", "tspecs", "mcsTable", "mac", "blockages", "sim"}


def _check_keys(d: dict, allowed: set, where: str) -> None:
    for k in d:
        if k not in allowed:
            raise SchemaError(f"{where}.{k}: unknown key")


def _get(d: dict, key: str, kind, where: str, default=..., required=False):
    if key not in d:
        if required:
            raise SchemaError(f"{where}.{key}: missing required key")
        return default
    v = d[key]
    if kind is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if kind is int and isinstance(v, float) and v.is_integer():
        v = int(v)
    if not isinstance(v, kind) or (kind is int and isinstance(v, bool)):
        raise SchemaError(f"{where}.{key}: expected {kind.__name__}")
    return v


def _load_bi(doc: dict) -> BiConfig:
    d = doc.get("bi", {})
    _check_keys(d, {"biDuration", "bhiDuration", "guardTime", "defaultCbap"}, "bi")
    try:
        return BiConfig(
            bi_duration_us=_get(d, "biDuration", int, "bi", 100_000),
            bhi_duration_us=_get(d, "bhiDuration", int, "bi", 2_000),
            guard_time_us=_get(d, "guardTime", int, "bi", 1),
            default_cbap=_get(d, "defaultCbap", bool, "bi", True),
        )
    except ScheduleError as e:
        raise SchemaError(f"bi: {e}") from e


STATION_KEYS = {
    "aid",
    "role",
    "position",
    "nSectors",
    "boresight",
    "txPowerDbm",
    "noiseFigureDb",
    "mainLobeGainDbi",
    "sideLobeGainDbi",
}


def _load_station(d: dict, i: int) -> Station:
    where = f"stations[{i}]"
    _check_keys(d, STATION_KEYS, where)
    pos = _get(d, "position", list, where, required=True)
    if len(pos) != 2 or not all(isinstance(x, (int, float)) for x in pos):
        raise SchemaError(f"{where}.position: expected [x, y] meters")
    role_s = _get(d, "role", str, where, "STA")
    if role_s not in (r.value for r in Role):
        raise SchemaError(f"{where}.role: unknown role {role_s!r}")
    return Station(
        aid=_get(d, "aid", int, where, required=True),
        position=(float(pos[0]), float(pos[1])),
        n_sectors=_get(d, "nSectors", int, where, 8),
        boresight_rad=_get(d, "boresight", float, where, 0.0),
        tx_power_dbm=_get(d, "txPowerDbm", float, where, 10.0),
        noise_figure_db=_get(d, "noiseFigureDb", float, where, 10.0),
        role=Role(role_s),
        pattern=SectorPattern(
            main_lobe_gain_dbi=_get(d, "mainLobeGainDbi", float, where, 15.0),
            side_lobe_gain_dbi=_get(d, "sideLobeGainDbi", float, where, -10.0),
        ),
    )


FLOW_KEYS = {
    "flowId",
    "srcAid",
    "dstAid",
    "kind",
    "meanRateBps",
    "packetSizeBytes",
    "frameIntervalUs",
    "frameJitterUs",
    "frameSizeSigma",
    "startUs",
    "stopUs",
    "queueCapacityBytes",
}


def _load_flow(d: dict, i: int, aids: set) -> FlowSpec:
    where = f"flows[{i}]"
    _check_keys(d, FLOW_KEYS, where)
    kind_s = _get(d, "kind", str, where, required=True)
    if kind_s not in (k.value for k in TrafficKind):
        raise SchemaError(f"{where}.kind: unknown traffic kind {kind_s!r}")
    src = _get(d, "srcAid", int, where, required=True)
    dst = _get(d, "dstAid", int, where, required=True)
    for aid in (src, dst):
        if aid not in aids:
            raise UnknownReferenceError(f"{where}: unknown aid {aid}")
    if src == dst:
        raise SchemaError(f"{where}: srcAid == dstAid")
    stop = d.get("stopUs", None)
    if stop is not None:
        stop = _get(d, "stopUs", int, where)
    try:
        source = TrafficSource(
            flow_id=_get(d, "flowId", int, where, required=True),
            src_aid=src,
            dst_aid=dst,
            kind=TrafficKind(kind_s),
            mean_rate_bps=_get(d, "meanRateBps", int, where, required=True),
            packet_size_bytes=_get(d, "packetSizeBytes", int, where, 1500),
            frame_interval_us=_get(d, "frameIntervalUs", int, where, 16_667),
            frame_jitter_us=_get(d, "frameJitterUs", int, where, 0),
            frame_size_sigma=_get(d, "frameSizeSigma", float, where, 0.3),
            start_us=_get(d, "startUs", int, where, 0),
            stop_us=stop,
        )
    except TrafficError as e:
        raise SchemaError(f"{where}: {e}") from e
    return FlowSpec(
        source=source,
        queue_capacity_bytes=_get(d, "queueCapacityBytes", int, where, 2_000_000),
    )


TSPEC_KEYS = {"flowId", "allocationPeriodUs", "minDurationUs", "maxDurationUs", "delayTargetUs"}


def _load_tspec(d: dict, i: int, flows_by_id: dict, bi: BiConfig) -> TSpec:
    where = f"tspecs[{i}]"
    _check_keys(d, TSPEC_KEYS, where)
    flow_id = _get(d, "flowId", int, where, required=True)
    if flow_id not in flows_by_id:
        raise UnknownReferenceError(f"{where}: unknown flowId {flow_id}")
    src = flows_by_id[flow_id].source
    delay = d.get("delayTargetUs", None)
    if delay is not None:
        delay = _get(d, "delayTargetUs", int, where)
    t = TSpec(
        flow_id=flow_id,
        src_aid=src.src_aid,
        dst_aid=src.dst_aid,
        allocation_period_us=_get(d, "allocationPeriodUs", int, where, required=True),
        min_duration_us=_get(d, "minDurationUs", int, where, required=True),
        max_duration_us=_get(d, "maxDurationUs", int, where, required=True),
        delay_target_us=delay,
    )
    try:
        t.validate(bi)
    except MalformedTspec as e:
        raise SchemaError(f"{where}: {e}") from e
    return t


MAC_KEY_MAP = {
    "cwMin": "cw_min",
    "cwMax": "cw_max",
    "slotUs": "slot_us",
    "perPacketOverheadUs": "per_packet_overhead_us",
    "truncationOverheadUs": "truncation_overhead_us",
    "extensionOverheadUs": "extension_overhead_us",
    "measurementOverheadUs": "measurement_overhead_us",
    "mcsMarginDb": "mcs_margin_db",
    "groupingMarginDb": "grouping_margin_db",
    "tspecStepUs": "tspec_step_us",
    "tspecHoldBis": "tspec_hold_bis",
    "enableTruncation": "enable_truncation",
    "enableExtension": "enable_extension",
    "enableSpatialSharing": "enable_spatial_sharing",
    "tspecAdaptation": "tspec_adaptation",
}


def _load_mac(doc: dict) -> MacConfig:
    d = doc.get("mac", {})
    _check_keys(d, set(MAC_KEY_MAP), "mac")
    defaults = MacConfig()
    kwargs = {}
    for json_key, attr in MAC_KEY_MAP.items():
        cur = getattr(defaults, attr)
        kind = bool if isinstance(cur, bool) else (float if isinstance(cur, float) else int)
        kwargs[attr] = _get(d, json_key, kind, "mac", cur)
    return MacConfig(**kwargs)


def _load_mcs_table(doc: dict) -> McsTable:
    entries = doc.get("mcsTable", None)
    if entries is None:
        return default_mcs_table()
    if not isinstance(entries, list) or not entries:
        raise SchemaError("mcsTable: expected a non-empty list")
    out = []
    for i, d in enumerate(entries):
        where = f"mcsTable[{i}]"
        _check_keys(d, {"index", "minSinrDb", "phyRateBps"}, where)
        out.append(
            McsEntry(
                index=_get(d, "index", int, where, required=True),
                min_sinr_db=_get(d, "minSinrDb", float, where, required=True),
                phy_rate_bps=_get(d, "phyRateBps", int, where, required=True),
            )
        )
    try:
        return McsTable(out)
    except Exception as e:
        raise SchemaError(f"mcsTable: {e}") from e


BLOCKAGE_KEYS = {"srcAid", "dstAid", "startUs", "durationUs", "attenuationDb"}


def _load_blockage(d: dict, i: int, aids: set) -> BlockageEvent:
    where = f"blockages[{i}]"
    _check_keys(d, BLOCKAGE_KEYS, where)
    src = _get(d, "srcAid", int, where, required=True)
    dst = _get(d, "dstAid", int, where, required=True)
    for aid in (src, dst):
        if aid not in aids:
            raise UnknownReferenceError(f"{where}: unknown aid {aid}")
    return BlockageEvent(
        src_aid=src,
        dst_aid=dst,
        start_us=_get(d, "startUs", int, where, required=True),
        duration_us=_get(d, "durationUs", int, where, required=True),
        attenuation_db=_get(d, "attenuationDb", float, where, required=True),
    )


def _load_sim(doc: dict, bi: BiConfig) -> SimParams:
    d = doc.get("sim", {})
    _check_keys(
        d, {"durationUs", "seed", "pathLossExponent", "channelBandwidthHz"}, "sim"
    )
    sim = SimParams(
        duration_us=_get(d, "durationUs", int, "sim", 1_000_000),
        seed=_get(d, "seed", int, "sim", 1),
        path_loss_exponent=_get(d, "pathLossExponent", float, "sim", 2.5),
        channel_bandwidth_hz=_get(d, "channelBandwidthHz", float, "sim", 1.76e9),
    )
    if sim.duration_us < 0:
        raise SchemaError("sim.durationUs: must be >= 0")
    if sim.duration_us % bi.bi_duration_us != 0:
        raise SchemaError("sim.durationUs: must be a multiple of bi.biDuration")
    if not 0 <= sim.seed < 2**64:
        raise SchemaError("sim.seed: must fit in 64 bits")
    return sim


def load_scenario(doc: dict) -> Scenario:
    """Validate a scenario document and fill every default explicitly."""
    if not isinstance(doc, dict):
        raise SchemaError("scenario: expected a mapping")
    _check_keys(doc, TOP_KEYS, "scenario")
    bi = _load_bi(doc)
    stations_doc = doc.get("stations", None)
    if not isinstance(stations_doc, list) or not stations_doc:
        raise SchemaError("stations: expected a non-empty list")
    stations = [_load_station(d, i) for i, d in enumerate(stations_doc)]
    aids = {s.aid for s in stations}
    if len(aids) != len(stations):
        raise SchemaError("stations: duplicate aid")
    if sum(1 for s in stations if s.role is Role.PCP_AP) != 1:
        raise SchemaError("stations: exactly one station must have role PCP_AP")
    sim = _load_sim(doc, bi)
    flows = [_load_flow(d, i, aids) for i, d in enumerate(doc.get("flows", []))]
    flows_by_id = {f.source.flow_id: f for f in flows}
    if len(flows_by_id) != len(flows):
        raise SchemaError("flows: duplicate flowId")
    tspecs = [
        _load_tspec(d, i, flows_by_id, bi) for i, d in enumerate(doc.get("tspecs", []))
    ]
    if len({t.flow_id for t in tspecs}) != len(tspecs):
        raise SchemaError("tspecs: duplicate flowId")
    blockages = [
        _load_blockage(d, i, aids) for i, d in enumerate(doc.get("blockages", []))
    ]
    return Scenario(
        bi=bi,
        stations=stations,
        flows=flows,
        tspecs=tspecs,
        mcs_table=_load_mcs_table(doc),
        mac=_load_mac(doc),
        blockages=blockages,
        sim=sim,
    )


def load_scenario_file(path: str) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise SchemaError(f"scenario: invalid JSON ({e})") from e
    return load_scenario(doc)


def to_document(sc: Scenario) -> dict:
    """Effective configuration echo; re-loading it yields the same scenario."""
    return {
        "bi": {
            "biDuration": sc.bi.bi_duration_us,
            "bhiDuration": sc.bi.bhi_duration_us,
            "guardTime": sc.bi.guard_time_us,
            "defaultCbap": sc.bi.default_cbap,
        },
        "stations": [
            {
                "aid": s.aid,
                "role": s.role.value,
                "position": [s.position[0], s.position[1]],
                "nSectors": s.n_sectors,
                "boresight": s.boresight_rad,
                "txPowerDbm": s.tx_power_dbm,
                "noiseFigureDb": s.noise_figure_db,
                "mainLobeGainDbi": s.pattern.main_lobe_gain_dbi,
                "sideLobeGainDbi": s.pattern.side_lobe_gain_dbi,
            }
            for s in sc.stations
        ],
        "flows": [
            {
                "flowId": f.source.flow_id,
                "srcAid": f.source.src_aid,
                "dstAid": f.source.dst_aid,
                "kind": f.source.kind.value,
                "meanRateBps": f.source.mean_rate_bps,
                "packetSizeBytes": f.source.packet_size_bytes,
                "frameIntervalUs": f.source.frame_interval_us,
                "frameJitterUs": f.source.frame_jitter_us,
                "frameSizeSigma": f.source.frame_size_sigma,
                "startUs": f.source.start_us,
                "stopUs": f.source.stop_us,
                "queueCapacityBytes": f.queue_capacity_bytes,
            }
            for f in sc.flows
        ],
        "tspecs": [
            {
                "flowId": t.flow_id,
                "allocationPeriodUs": t.allocation_period_us,
                "minDurationUs": t.min_duration_us,
                "maxDurationUs": t.max_duration_us,
                "delayTargetUs": t.delay_target_us,
            }
            for t in sc.tspecs
        ],
        "mcsTable": [
            {"index": e.index, "minSinrDb": e.min_sinr_db, "phyRateBps": e.phy_rate_bps}
            for e in sc.mcs_table.entries
        ],
        "mac": {
            json_key: getattr(sc.mac, attr) for json_key, attr in MAC_KEY_MAP.items()
        },
        "blockages": [
            {
                "srcAid": b.src_aid,
                "dstAid": b.dst_aid,
                "startUs": b.start_us,
                "durationUs": b.duration_us,
                "attenuationDb": b.attenuation_db,
            }
            for b in sc.blockages
        ],
        "sim": {
            "durationUs": sc.sim.duration_us,
            "seed": sc.sim.seed,
            "pathLossExponent": sc.sim.path_loss_exponent,
            "channelBandwidthHz": sc.sim.channel_bandwidth_hz,
        },
    }
