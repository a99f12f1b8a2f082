import pytest

from dmgsim.config import (
    SchemaError,
    UnknownReferenceError,
    load_scenario,
    to_document,
)


def minimal_doc(**extra):
    doc = {
        "stations": [
            {"aid": 0, "role": "PCP_AP", "position": [0, 0]},
            {"aid": 1, "position": [3, 0]},
        ],
        "flows": [
            {"flowId": 1, "srcAid": 1, "dstAid": 0, "kind": "CBR", "meanRateBps": 100_000_000}
        ],
        "sim": {"durationUs": 200_000, "seed": 3},
    }
    doc.update(extra)
    return doc


class TestLoadScenario:
    def test_minimal_document_gets_defaults(self):
        sc = load_scenario(minimal_doc())
        assert sc.bi.bi_duration_us == 100_000
        assert sc.bi.bhi_duration_us == 2_000
        assert sc.mac.cw_min == 15
        assert sc.flows[0].source.packet_size_bytes == 1500
        assert len(sc.mcs_table) == 8

    def test_missing_bi_duration_defaults_to_100ms(self):
        sc = load_scenario(minimal_doc(bi={"bhiDuration": 1_000}))
        assert sc.bi.bi_duration_us == 100_000

    def test_unknown_traffic_kind_is_schema_error(self):
        doc = minimal_doc()
        doc["flows"][0]["kind"] = "FRACTAL"
        with pytest.raises(SchemaError, match="kind"):
            load_scenario(doc)

    def test_unknown_key_is_schema_error(self):
        with pytest.raises(SchemaError, match="scenario.qos"):
            load_scenario(minimal_doc(qos={}))

    def test_unknown_aid_is_reference_error(self):
        doc = minimal_doc()
        doc["flows"][0]["srcAid"] = 9
        with pytest.raises(UnknownReferenceError):
            load_scenario(doc)

    def test_tspec_for_unknown_flow(self):
        doc = minimal_doc(
            tspecs=[{"flowId": 7, "allocationPeriodUs": 25_000, "minDurationUs": 1000, "maxDurationUs": 2000}]
        )
        with pytest.raises(UnknownReferenceError):
            load_scenario(doc)

    def test_sim_duration_must_be_bi_multiple(self):
        doc = minimal_doc()
        doc["sim"]["durationUs"] = 150_000
        with pytest.raises(SchemaError, match="durationUs"):
            load_scenario(doc)

    def test_requires_exactly_one_pcp_ap(self):
        doc = minimal_doc()
        doc["stations"][1]["role"] = "PCP_AP"
        with pytest.raises(SchemaError, match="PCP_AP"):
            load_scenario(doc)

    def test_bad_tspec_bounds(self):
        doc = minimal_doc(
            tspecs=[{"flowId": 1, "allocationPeriodUs": 25_000, "minDurationUs": 9_000, "maxDurationUs": 2_000}]
        )
        with pytest.raises(SchemaError):
            load_scenario(doc)

    def test_echo_round_trips_to_identical_scenario(self):
        sc = load_scenario(minimal_doc())
        echo = to_document(sc)
        sc2 = load_scenario(echo)
        assert to_document(sc2) == echo

    def test_seed_and_duration_overrides(self):
        sc = load_scenario(minimal_doc())
        sc2 = sc.with_overrides(seed=99, duration_us=300_000)
        assert sc2.sim.seed == 99 and sc2.n_bis == 3
        with pytest.raises(SchemaError):
            sc.with_overrides(duration_us=123)
