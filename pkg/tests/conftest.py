"""Shared fixtures: tiny schemas and hand-built streams."""
from __future__ import annotations

import pytest

from synsurv.simulate import Cpt, CycleProcess, GeneratorSpec
from synsurv.stream import DataStream, PatientRecord, StreamSchema, TimeSlot


@pytest.fixture
def small_schema() -> StreamSchema:
    return StreamSchema(
        (("gender", ("female", "male")), ("age", ("child", "adult", "senior"))),
        (("dow", ("weekday", "weekend")),),
    )


def make_record(gender="female", age="adult") -> PatientRecord:
    return PatientRecord({"gender": gender, "age": age})


def make_stream(schema, slot_records, train_len, outbreaks=(), envs=None) -> DataStream:
    """Build a stream from a list of record lists (one per slot)."""
    slots = []
    for i, records in enumerate(slot_records):
        env = envs[i] if envs else {"dow": "weekday"}
        slots.append(TimeSlot(i, tuple(records), env))
    return DataStream(schema, tuple(slots), train_len, tuple(outbreaks))


def iid_generator_spec(stream_len=124, train_len=64, visit_rate=25.0) -> GeneratorSpec:
    """Slots i.i.d. across time: nothing depends on the environment."""
    schema = StreamSchema(
        (("sym", ("none", "cough", "rash")), ("age", ("young", "old"))),
        (("dow", ("wk", "we")),),
    )
    return GeneratorSpec(
        schema=schema,
        env_process={"dow": CycleProcess(("wk",) * 5 + ("we",) * 2)},
        visit_rate=visit_rate,
        cpts={
            "sym": Cpt((), {"": (0.6, 0.25, 0.15)}),
            "age": Cpt((), {"": (0.5, 0.5)}),
        },
        stream_len=stream_len,
        train_len=train_len,
    )
