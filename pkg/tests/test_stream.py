"""Data model invariants, record matching, and file round-trips."""
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from synsurv.io import load_stream, load_stream_dir, write_stream
from synsurv.stream import (
    DataStream,
    OutbreakLabel,
    PatientRecord,
    SchemaError,
    StreamSchema,
    Syndrome,
    TimeSlot,
    record_matches,
)

from conftest import make_record, make_stream


def test_record_matches_single_condition():
    rec = PatientRecord({"gender": "male", "age": "child"})
    assert record_matches(rec, Syndrome.from_label("gender=male"))


def test_record_matches_conjunction_fails():
    rec = PatientRecord({"gender": "male", "age": "child"})
    assert not record_matches(rec, Syndrome.from_label("age=senior&gender=male"))


def test_record_matches_full_conjunction():
    rec = PatientRecord({"gender": "female", "age": "child"})
    assert record_matches(rec, Syndrome.from_label("age=child&gender=female"))


def test_record_matches_unknown_attribute_raises():
    rec = PatientRecord({"gender": "male"})
    with pytest.raises(SchemaError):
        record_matches(rec, Syndrome.from_label("species=cat"))


@given(
    st.dictionaries(
        st.sampled_from(["a", "b", "c", "d"]), st.sampled_from(["x", "y", "z"]), min_size=2, max_size=4
    ),
    st.data(),
)
def test_matching_is_monotone_in_conditions(values, data):
    # adding conditions can only turn a match into a non-match
    rec = PatientRecord(values)
    attrs = sorted(values)
    sub_attrs = data.draw(st.lists(st.sampled_from(attrs), min_size=1, max_size=len(attrs), unique=True))
    conds = {(a, data.draw(st.sampled_from(["x", "y", "z"]), label=a)) for a in sub_attrs}
    syndrome = Syndrome(frozenset(conds))
    smaller = Syndrome(frozenset(list(conds)[:1]))
    if record_matches(rec, syndrome):
        assert record_matches(rec, smaller)


def test_syndrome_equality_is_order_insensitive():
    s1 = Syndrome(frozenset([("a", "x"), ("b", "y")]))
    s2 = Syndrome(frozenset([("b", "y"), ("a", "x")]))
    assert s1 == s2
    assert s1.label() == "a=x&b=y"
    assert Syndrome.from_label(s1.label()) == s1


def test_syndrome_rejects_duplicate_attributes():
    with pytest.raises(SchemaError):
        Syndrome(frozenset([("a", "x"), ("a", "y")]))


def test_schema_rejects_duplicate_names():
    with pytest.raises(SchemaError):
        StreamSchema((("a", ("x",)), ("a", ("y",))))


def test_schema_rejects_shared_response_env_names():
    with pytest.raises(SchemaError):
        StreamSchema((("a", ("x",)),), (("a", ("y",)),))


def test_stream_validates_train_len(small_schema):
    with pytest.raises(ValueError):
        make_stream(small_schema, [[], []], train_len=2)


def test_stream_rejects_outbreak_in_training(small_schema):
    with pytest.raises(ValueError):
        make_stream(small_schema, [[] for _ in range(6)], 3, outbreaks=[OutbreakLabel(1, 2)])


def test_stream_rejects_overlapping_outbreaks(small_schema):
    with pytest.raises(ValueError):
        make_stream(
            small_schema,
            [[] for _ in range(10)],
            3,
            outbreaks=[OutbreakLabel(4, 3), OutbreakLabel(5, 2)],
        )


def test_stream_slot_indices_must_be_contiguous(small_schema):
    slots = (TimeSlot(0, (), {"dow": "weekday"}), TimeSlot(2, (), {"dow": "weekday"}))
    with pytest.raises(ValueError):
        DataStream(small_schema, slots, 1)


# --- file round-trips -------------------------------------------------------


def _write_stream_files(tmp_path, schema, rows, labels=None):
    (tmp_path / "schema.json").write_text(
        json.dumps(
            {
                "response": [{"name": n, "values": list(v)} for n, v in schema.response_attrs],
                "environmental": [{"name": n, "values": list(v)} for n, v in schema.environmental_attrs],
            }
        )
    )
    (tmp_path / "records.csv").write_text("\n".join(rows) + "\n")
    if labels is not None:
        (tmp_path / "labels.json").write_text(json.dumps(labels))


def test_load_stream_materializes_gaps(tmp_path, small_schema):
    rows = [
        "slot,dow,gender,age",
        "0,weekday,female,adult",
        "0,weekday,male,child",
        "1,weekday,male,senior",
        "3,weekend,female,child",
    ]
    _write_stream_files(tmp_path, small_schema, rows)
    stream = load_stream(tmp_path / "schema.json", tmp_path / "records.csv", train_len=2)
    assert len(stream) == 4
    assert len(stream.slots[0]) == 2
    assert len(stream.slots[2]) == 0  # gap materialized
    assert stream.slots[2].env == {"dow": "weekday"}  # inherited from slot 1


def test_load_stream_parses_labels(tmp_path, small_schema):
    rows = ["slot,dow,gender,age"] + [f"{i},weekday,male,adult" for i in range(500)]
    _write_stream_files(tmp_path, small_schema, rows, labels=[{"start": 400, "length": 14}])
    stream = load_stream(
        tmp_path / "schema.json", tmp_path / "records.csv", tmp_path / "labels.json", train_len=365
    )
    assert stream.outbreaks == (OutbreakLabel(400, 14),)


def test_load_stream_reports_bad_value_with_row(tmp_path, small_schema):
    rows = ["slot,dow,gender,age", "0,weekday,female,adult", "1,weekday,femal,adult"]
    _write_stream_files(tmp_path, small_schema, rows)
    with pytest.raises(SchemaError, match=r":3.*femal"):
        load_stream(tmp_path / "schema.json", tmp_path / "records.csv", train_len=1)


def test_load_stream_rejects_inconsistent_env(tmp_path, small_schema):
    rows = ["slot,dow,gender,age", "0,weekday,female,adult", "0,weekend,male,adult", "1,weekday,male,adult"]
    _write_stream_files(tmp_path, small_schema, rows)
    with pytest.raises(SchemaError, match="differs within slot"):
        load_stream(tmp_path / "schema.json", tmp_path / "records.csv", train_len=1)


def test_load_stream_rejects_negative_slot(tmp_path, small_schema):
    rows = ["slot,dow,gender,age", "-1,weekday,female,adult", "0,weekday,male,adult"]
    _write_stream_files(tmp_path, small_schema, rows)
    with pytest.raises(SchemaError, match="negative slot"):
        load_stream(tmp_path / "schema.json", tmp_path / "records.csv", train_len=1)


def test_round_trip_preserves_everything(tmp_path, small_schema):
    stream = make_stream(
        small_schema,
        [
            [make_record("female", "child"), make_record("female", "child"), make_record("male", "adult")],
            [],  # empty slot with env must survive the round trip
            [make_record("male", "senior")],
            [],
        ],
        train_len=2,
        outbreaks=[OutbreakLabel(2, 1)],
        envs=[{"dow": "weekday"}, {"dow": "weekend"}, {"dow": "weekday"}, {"dow": "weekend"}],
    )
    write_stream(stream, tmp_path / "s")
    loaded = load_stream_dir(tmp_path / "s", train_len=2)
    assert loaded.schema == stream.schema
    assert loaded.outbreaks == stream.outbreaks
    assert len(loaded) == len(stream)
    for orig, got in zip(stream.slots, loaded.slots):
        assert got.env == orig.env
        assert sorted(tuple(sorted(r.values.items())) for r in got.records) == sorted(
            tuple(sorted(r.values.items())) for r in orig.records
        )


def test_load_stream_rejects_non_integer_slot(tmp_path, small_schema):
    rows = ["slot,dow,gender,age", "zero,weekday,female,adult"]
    _write_stream_files(tmp_path, small_schema, rows)
    with pytest.raises(SchemaError, match="non-integer slot"):
        load_stream(tmp_path / "schema.json", tmp_path / "records.csv", train_len=1)
