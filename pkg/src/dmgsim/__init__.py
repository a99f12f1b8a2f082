"""dmgsim: discrete-event simulator of hybrid CBAP/SP scheduling in
60 GHz WLAN beacon intervals, with a per-BI RL environment server."""

from .config import Scenario, SchemaError, UnknownReferenceError, load_scenario, load_scenario_file, to_document
from .engine import Action, BiResult, Simulation, run
from .mac import (
    AddtsRequest,
    AddtsResponse,
    Coordinator,
    MacConfig,
    Verdict,
    admission_check,
    form_spatial_groups,
    run_cbap,
    run_sp,
)
from .metrics import MetricsReport, collect_metrics, jain_index
from .radio import (
    BlockageEvent,
    LinkState,
    McsEntry,
    McsTable,
    SectorPattern,
    Station,
    World,
    default_mcs_table,
    path_gain_db,
    select_mcs,
    sinr_db,
    spatial_compatibility,
)
from .schedule import (
    Allocation,
    AllocationKind,
    BiConfig,
    Schedule,
    TSpec,
    build_beacon_interval,
    place_periodic_allocation,
    serialize_ese,
    validate_schedule,
)
from .traffic import FlowQueue, Packet, TrafficSource, next_arrival

__version__ = "0.1.0"
