"""Episodic per-beacon-interval environment over the simulation engine.

One step applies the agent's decision overrides to the next beacon
interval, simulates it in full, and returns the observation, a weighted
reward over the interval's normalized metrics, the done flag and an info
mapping with clamping notes, admission outcomes and raw metrics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .config import Scenario, load_scenario
from .engine import Action, BiResult, Simulation

PER_FLOW_FIELDS = (
    "queuedBits",
    "arrivalRateEwma",
    "p95DelayLastBi",
    "dropCountLastBi",
    "currentMcsIndex",
    "allocatedTimeLastBi",
)
NETWORK_FIELDS = ("dtiUtilization", "biIndex")


class EnvError(Exception):
    pass


class EpisodeError(EnvError):
    """Step outside an active episode."""


class MalformedAction(EnvError):
    def __init__(self, fieldname: str, message: str):
        super().__init__(f"{fieldname}: {message}")
        self.fieldname = fieldname


@dataclass(frozen=True)
class RewardWeights:
    w_throughput: float = 1.0
    w_delay_violation: float = -1.0
    w_jitter: float = 0.0
    w_fairness: float = 1.0
    w_drops: float = -1.0

    @classmethod
    def from_payload(cls, d: dict) -> "RewardWeights":
        defaults = cls()
        mapping = {
            "wThroughput": "w_throughput",
            "wDelayViolation": "w_delay_violation",
            "wJitter": "w_jitter",
            "wFairness": "w_fairness",
            "wDrops": "w_drops",
        }
        kwargs = {}
        for key, attr in mapping.items():
            v = d.get(key, getattr(defaults, attr))
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise MalformedAction(f"rewardWeights.{key}", "expected a number")
            kwargs[attr] = float(v)
        for key in d:
            if key not in mapping:
                raise MalformedAction(f"rewardWeights.{key}", "unknown weight")
        return cls(**kwargs)


def observation_layout(scenario: Scenario) -> dict:
    """Fixed field order and dimensionality of the observation vector."""
    flow_ids = sorted(f.source.flow_id for f in scenario.flows)
    names = [f"flow.{fid}.{f}" for fid in flow_ids for f in PER_FLOW_FIELDS]
    names += [f"network.{f}" for f in NETWORK_FIELDS]
    return {
        "flowIds": flow_ids,
        "perFlowFields": list(PER_FLOW_FIELDS),
        "networkFields": list(NETWORK_FIELDS),
        "names": names,
        "size": len(names),
        # suggested normalization divisors; observations themselves are raw
        "scaling": {
            "queuedBits": 16_000_000.0,
            "arrivalRateEwma": float(scenario.mcs_table.top_rate_bps),
            "p95DelayLastBi": float(scenario.bi.bi_duration_us),
            "dropCountLastBi": 1000.0,
            "currentMcsIndex": float(max(len(scenario.mcs_table) - 1, 1)),
            "allocatedTimeLastBi": float(scenario.bi.dti_duration_us),
            "dtiUtilization": 1.0,
            "biIndex": float(max(scenario.n_bis, 1)),
        },
    }


def _parse_int_key(key: str, where: str) -> int:
    try:
        return int(key)
    except (TypeError, ValueError):
        raise MalformedAction(where, f"bad id {key!r}") from None


def parse_action(payload: dict, sim: Simulation) -> Action:
    """Validate an action payload against the running simulation."""
    if not isinstance(payload, dict):
        raise MalformedAction("action", "expected an object")
    action = Action()
    known = {"admissionVerdicts", "durationAdjust", "spatialGroupToggle", "tspecUpdates"}
    for key in payload:
        if key not in known:
            raise MalformedAction(key, "unknown action field")

    verdicts = payload.get("admissionVerdicts", {})
    if not isinstance(verdicts, dict):
        raise MalformedAction("admissionVerdicts", "expected an object")
    pending_ids = {r.request_id for r in sim.pending}
    for key, v in verdicts.items():
        rid = _parse_int_key(key, f"admissionVerdicts.{key}")
        if rid not in pending_ids:
            raise MalformedAction(f"admissionVerdicts.{key}", "not a pending request")
        if v in ("ACCEPT", "REJECT"):
            action.admission_verdicts[rid] = v
        elif isinstance(v, dict) and set(v) == {"SUGGEST"} and isinstance(v["SUGGEST"], (int, float)):
            action.admission_verdicts[rid] = ("SUGGEST", float(v["SUGGEST"]))
        else:
            raise MalformedAction(f"admissionVerdicts.{key}", f"bad verdict {v!r}")

    adjust = payload.get("durationAdjust", {})
    if not isinstance(adjust, dict):
        raise MalformedAction("durationAdjust", "expected an object")
    for key, v in adjust.items():
        fid = _parse_int_key(key, f"durationAdjust.{key}")
        if fid not in sim.flows:
            raise MalformedAction(f"durationAdjust.{key}", "unknown flow")
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise MalformedAction(f"durationAdjust.{key}", "expected microseconds")
        action.duration_adjust[fid] = int(v)

    toggles = payload.get("spatialGroupToggle", {})
    if not isinstance(toggles, dict):
        raise MalformedAction("spatialGroupToggle", "expected an object")
    for key, v in toggles.items():
        parts = str(key).split(":")
        if len(parts) != 2:
            raise MalformedAction(f"spatialGroupToggle.{key}", 'expected "flowA:flowB"')
        fa = _parse_int_key(parts[0], f"spatialGroupToggle.{key}")
        fb = _parse_int_key(parts[1], f"spatialGroupToggle.{key}")
        for fid in (fa, fb):
            if fid not in sim.flows:
                raise MalformedAction(f"spatialGroupToggle.{key}", "unknown flow")
        if not isinstance(v, bool):
            raise MalformedAction(f"spatialGroupToggle.{key}", "expected a boolean")
        action.spatial_toggles[(min(fa, fb), max(fa, fb))] = v

    updates = payload.get("tspecUpdates", {})
    if not isinstance(updates, dict):
        raise MalformedAction("tspecUpdates", "expected an object")
    for key, v in updates.items():
        fid = _parse_int_key(key, f"tspecUpdates.{key}")
        if fid not in sim.flows:
            raise MalformedAction(f"tspecUpdates.{key}", "unknown flow")
        if not isinstance(v, dict):
            raise MalformedAction(f"tspecUpdates.{key}", "expected an object")
        period = v.get("allocationPeriodUs")
        min_dur = v.get("minDurationUs")
        if not isinstance(period, int) or not isinstance(min_dur, int):
            raise MalformedAction(
                f"tspecUpdates.{key}", "need integer allocationPeriodUs and minDurationUs"
            )
        action.tspec_updates[fid] = (period, min_dur)
    return action


class EnvSession:
    """One episodic environment over a scenario; step once per BI."""

    def __init__(self, scenario: Scenario):
        self.base_scenario = scenario
        self.sim: Optional[Simulation] = None
        self.weights = RewardWeights()
        self.done = True
        self._last_result: Optional[BiResult] = None

    def layout(self) -> dict:
        return observation_layout(self.base_scenario)

    def scenario_summary(self) -> dict:
        sc = self.base_scenario
        tspecs = {t.flow_id: t for t in sc.tspecs}
        return {
            "nFlows": len(sc.flows),
            "nBis": sc.n_bis,
            "biDurationUs": sc.bi.bi_duration_us,
            "simDurationUs": sc.sim.duration_us,
            "defaultSeed": sc.sim.seed,
            "flows": [
                {
                    "flowId": f.source.flow_id,
                    "kind": f.source.kind.value,
                    "hasTspec": f.source.flow_id in tspecs,
                    "allocationPeriodUs": (
                        tspecs[f.source.flow_id].allocation_period_us
                        if f.source.flow_id in tspecs
                        else None
                    ),
                    "minDurationUs": (
                        tspecs[f.source.flow_id].min_duration_us
                        if f.source.flow_id in tspecs
                        else None
                    ),
                    "maxDurationUs": (
                        tspecs[f.source.flow_id].max_duration_us
                        if f.source.flow_id in tspecs
                        else None
                    ),
                }
                for f in sc.flows
            ],
        }

    def reset(
        self,
        seed: Optional[int] = None,
        scenario_doc: Optional[dict] = None,
        reward_weights: Optional[dict] = None,
    ) -> dict:
        if scenario_doc is not None:
            self.base_scenario = load_scenario(scenario_doc)
        scenario = self.base_scenario.with_overrides(seed=seed)
        self.weights = (
            RewardWeights.from_payload(reward_weights) if reward_weights else RewardWeights()
        )
        self.sim = Simulation(scenario)
        self.done = self.sim.finished  # a zero-length scenario is born done
        self._last_result = None
        return self.observation()

    def observation(self) -> dict:
        if self.sim is None:
            raise EpisodeError("reset the environment first")
        sim = self.sim
        last = self._last_result
        flows = {}
        vector: list[float] = []
        for fid in sorted(sim.flows):
            if last is not None:
                m = last.per_flow[fid]
                entry = {f: m[f] for f in PER_FLOW_FIELDS}
            else:
                entry = {f: 0 for f in PER_FLOW_FIELDS}
                entry["currentMcsIndex"] = (
                    -1 if sim.flows[fid].link.mcs_at(0) is None else sim.flows[fid].link.mcs_at(0)
                )
                entry["queuedBits"] = sim.flows[fid].queue.queued_bits
            flows[str(fid)] = entry
            vector.extend(float(entry[f]) for f in PER_FLOW_FIELDS)
        utilization = last.utilization if last is not None else 0.0
        vector.extend([float(utilization), float(sim.bi_index)])
        return {
            "biIndex": sim.bi_index,
            "flows": flows,
            "network": {
                "dtiUtilization": utilization,
                "biIndex": sim.bi_index,
                "pendingAddtsRequests": (
                    list(last.pending_after)
                    if last is not None
                    else [
                        {
                            "requestId": r.request_id,
                            "flowId": r.tspec.flow_id,
                            "allocationPeriodUs": r.tspec.allocation_period_us,
                            "minDurationUs": r.tspec.min_duration_us,
                            "maxDurationUs": r.tspec.max_duration_us,
                        }
                        for r in sim.pending
                    ]
                ),
            },
            "vector": vector,
        }

    def reward(self, result: BiResult) -> float:
        t = result.reward_terms
        w = self.weights
        return (
            w.w_throughput * t["throughput"]
            + w.w_delay_violation * t["delayViolation"]
            + w.w_jitter * t["jitter"]
            + w.w_fairness * t["fairness"]
            + w.w_drops * t["drops"]
        )

    def step(self, action_payload: dict) -> tuple[dict, float, bool, dict]:
        if self.sim is None:
            raise EpisodeError("reset the environment first")
        if self.done:
            raise EpisodeError("episode is done; reset to start a new one")
        action = parse_action(action_payload or {}, self.sim)
        result = self.sim.advance_bi(action)
        self._last_result = result
        self.done = self.sim.finished
        info = {
            "biIndex": result.bi_index,
            "notes": result.notes,
            "admission": result.responses,
            "metrics": {
                "perFlow": {str(f): dict(m) for f, m in result.per_flow.items()},
                "busyUs": result.busy_us,
                "utilization": result.utilization,
                "rewardTerms": result.reward_terms,
            },
        }
        return self.observation(), self.reward(result), self.done, info
