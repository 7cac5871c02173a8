"""Instance model: construction, validation, and the JSON wire format."""

import json
import math
import pickle

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynmatch import (
    INFINITE,
    AgentId,
    AgentType,
    MarketInstance,
    MatchValueMatrix,
    InstanceFormatError,
    emit_instance,
    parse_instance,
    validate_instance,
)
from dynmatch.market import pressure

from helpers import make_instance, one_type, patient_impatient


def codes(instance):
    return {v.code for v in validate_instance(instance)}


class TestModel:
    def test_impatient_flag(self):
        t = AgentType(0, "a", 1.0, INFINITE)
        assert t.impatient
        assert not AgentType(0, "a", 1.0, 3.0).impatient

    def test_infinite_is_a_singleton_under_pickle(self):
        assert pickle.loads(pickle.dumps(INFINITE)) is INFINITE

    def test_agent_id_text_round_trip(self):
        a = AgentId(2, 17)
        assert AgentId.from_text(a.text()) == a

    def test_value_matrix_is_symmetric(self):
        m = MatchValueMatrix(2, {(0, 1): 0.7})
        assert m.get(0, 1) == m.get(1, 0) == 0.7
        assert m.get(0, 0) == 0.0

    def test_dense_matches_get(self):
        m = MatchValueMatrix(3, {(0, 2): 0.5, (1, 1): 0.25})
        d = m.dense()
        for i in range(3):
            for j in range(3):
                assert d[i][j] == m.get(i, j)

    def test_pressure(self):
        inst = make_instance([("a", 2.0, 0.5), ("b", 1.0, None)], {})
        assert pressure(inst, 0) == 4.0
        assert pressure(inst, 1) == 0.0


class TestValidation:
    def test_clean_instance_has_no_violations(self):
        assert validate_instance(one_type()) == []
        assert validate_instance(patient_impatient()) == []

    def test_no_types(self):
        inst = MarketInstance(types=(), values=MatchValueMatrix(0, {}))
        assert "no_types" in codes(inst)

    def test_non_canonical_ids(self):
        inst = MarketInstance(
            types=(AgentType(1, "a", 1.0, 1.0),),
            values=MatchValueMatrix(1, {}),
        )
        assert "non_canonical_ids" in codes(inst)

    def test_empty_label(self):
        assert "empty_label" in codes(make_instance([("", 1.0, 1.0)], {}))

    def test_duplicate_label(self):
        inst = make_instance([("x", 1.0, 1.0), ("x", 1.0, 1.0)], {})
        assert "duplicate_label" in codes(inst)

    @pytest.mark.parametrize("lam", [0.0, -1.0, math.nan, math.inf])
    def test_bad_arrival_rate(self, lam):
        assert "arrival_rate_not_positive" in codes(
            make_instance([("a", lam, 1.0)], {})
        )

    @pytest.mark.parametrize("mu", [0.0, -2.0, math.nan])
    def test_bad_departure_rate(self, mu):
        assert "departure_rate_not_positive" in codes(
            make_instance([("a", 1.0, mu)], {})
        )

    def test_infinite_departure_is_legal(self):
        assert validate_instance(make_instance([("a", 1.0, None)], {})) == []

    def test_value_index_out_of_range(self):
        inst = MarketInstance(
            types=(AgentType(0, "a", 1.0, 1.0),),
            values=MatchValueMatrix(1, {(0, 3): 1.0}),
        )
        assert "value_index_out_of_range" in codes(inst)

    def test_value_matrix_size_mismatch(self):
        inst = MarketInstance(
            types=(AgentType(0, "a", 1.0, 1.0),),
            values=MatchValueMatrix(2, {}),
        )
        assert "value_matrix_size_mismatch" in codes(inst)

    def test_non_finite_value(self):
        inst = make_instance([("a", 1.0, 1.0)], {(0, 0): math.inf})
        assert "non_finite_value" in codes(inst)

    def test_negative_match_value(self):
        inst = make_instance([("a", 1.0, 1.0)], {(0, 0): -0.5})
        assert "negative_match_value" in codes(inst)


GOOD_DOC = {
    "types": [
        {"label": "rider", "arrival_rate": 1.5, "departure_rate": 2.0},
        {"label": "driver", "arrival_rate": 1.0, "departure_rate": "inf"},
    ],
    "values": [["rider", "driver", 0.8], ["rider", "rider", 0.1]],
}


class TestWireFormat:
    def test_parse_basics(self):
        inst = parse_instance(json.dumps(GOOD_DOC))
        assert inst.labels() == ("rider", "driver")
        assert inst.types[1].impatient
        assert inst.values.get(0, 1) == 0.8
        assert inst.values.get(1, 1) == 0.0

    def test_emit_parse_round_trip(self):
        inst = parse_instance(json.dumps(GOOD_DOC))
        assert parse_instance(emit_instance(inst)) == inst

    def test_emit_is_deterministic(self):
        inst = parse_instance(json.dumps(GOOD_DOC))
        assert emit_instance(inst) == emit_instance(inst)
        assert emit_instance(inst).endswith("\n")

    @pytest.mark.parametrize(
        "mutate",
        [
            lambda d: d.update({"extra": 1}),
            lambda d: d["types"][0].update({"typo": 1}),
            lambda d: d["types"][0].pop("arrival_rate"),
            lambda d: d["types"][0].update({"departure_rate": "INF"}),
            lambda d: d.update({"types": {}}),
            lambda d: d.update({"values": [["rider", "ghost", 1.0]]}),
            lambda d: d.update({"values": [["rider", "driver"]]}),
        ],
    )
    def test_malformed_documents_rejected(self, mutate):
        doc = json.loads(json.dumps(GOOD_DOC))
        mutate(doc)
        with pytest.raises(InstanceFormatError):
            parse_instance(json.dumps(doc))

    def test_syntactically_broken_json_reports_line(self):
        with pytest.raises(json.JSONDecodeError) as err:
            parse_instance('{\n  "types": [,]\n}')
        assert err.value.lineno == 2


labels = st.lists(
    st.text(alphabet="abcdefgh", min_size=1, max_size=4),
    min_size=1,
    max_size=4,
    unique=True,
)


@st.composite
def instances(draw):
    names = draw(labels)
    n = len(names)
    types = []
    for name in names:
        lam = draw(st.floats(0.01, 100.0, allow_nan=False))
        mu = draw(
            st.one_of(st.none(), st.floats(0.01, 100.0, allow_nan=False))
        )
        types.append((name, lam, mu))
    values = {}
    for i in range(n):
        for j in range(i, n):
            if draw(st.booleans()):
                values[(i, j)] = draw(st.floats(0.0, 10.0, allow_nan=False))
    return make_instance(types, values)


@settings(max_examples=60, deadline=None)
@given(instances())
def test_round_trip_property(inst):
    assert validate_instance(inst) == []
    assert parse_instance(emit_instance(inst)) == inst
