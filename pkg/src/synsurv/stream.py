"""Core types for categorical patient streams.

A stream is an ordered sequence of time slots. Each slot carries a set of
patient records (categorical response attributes) and one environmental
setting (categorical per-slot attributes). Syndromes are conjunctions of
response-attribute conditions; outbreak labels mark intervals of the test
part. All types are immutable after construction and safe to share across
threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping


class SchemaError(ValueError):
    """A record, slot, or syndrome is inconsistent with the stream schema."""


def _as_attr_tuple(attrs) -> tuple[tuple[str, tuple[str, ...]], ...]:
    return tuple((str(name), tuple(str(v) for v in values)) for name, values in attrs)


@dataclass(frozen=True)
class StreamSchema:
    """Attribute vocabulary: per-record response attrs and per-slot environmental attrs.

    Both lists are ordered; declaration order is the canonical attribute
    order everywhere else in the library (syndrome enumeration, CSV columns).
    """

    response_attrs: tuple[tuple[str, tuple[str, ...]], ...]
    environmental_attrs: tuple[tuple[str, tuple[str, ...]], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "response_attrs", _as_attr_tuple(self.response_attrs))
        object.__setattr__(self, "environmental_attrs", _as_attr_tuple(self.environmental_attrs))
        if not self.response_attrs:
            raise SchemaError("schema needs at least one response attribute")
        names = [n for n, _ in self.response_attrs] + [n for n, _ in self.environmental_attrs]
        if len(set(names)) != len(names):
            raise SchemaError("attribute names must be unique across response and environmental lists")
        for name, values in self.response_attrs + self.environmental_attrs:
            if not values:
                raise SchemaError(f"attribute {name!r} has an empty vocabulary")
            if len(set(values)) != len(values):
                raise SchemaError(f"attribute {name!r} has duplicate vocabulary values")

    @property
    def response_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.response_attrs)

    @property
    def env_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.environmental_attrs)

    @cached_property
    def _vocab(self) -> dict[str, tuple[str, ...]]:
        return dict(self.response_attrs + self.environmental_attrs)

    def vocabulary(self, attr: str) -> tuple[str, ...]:
        try:
            return self._vocab[attr]
        except KeyError:
            raise SchemaError(f"unknown attribute {attr!r}") from None

    def is_response(self, attr: str) -> bool:
        return attr in dict(self.response_attrs)

    def validate_record(self, record: "PatientRecord", context: str = "") -> None:
        where = f"{context}: " if context else ""
        expected = set(self.response_names)
        got = set(record.values)
        if got != expected:
            missing, extra = expected - got, got - expected
            raise SchemaError(f"{where}record attributes mismatch (missing={sorted(missing)}, extra={sorted(extra)})")
        for attr, value in record.values.items():
            if value not in self._vocab[attr]:
                raise SchemaError(f"{where}unknown value {value!r} for attribute {attr!r}")

    def validate_env(self, env: Mapping[str, str], context: str = "") -> None:
        where = f"{context}: " if context else ""
        expected = set(self.env_names)
        if set(env) != expected:
            raise SchemaError(f"{where}environmental setting must have exactly {sorted(expected)}")
        for attr, value in env.items():
            if value not in self._vocab[attr]:
                raise SchemaError(f"{where}unknown value {value!r} for environmental attribute {attr!r}")


@dataclass(frozen=True)
class PatientRecord:
    """One categorical observation: response attribute name -> value."""

    values: Mapping[str, str]

    def __post_init__(self):
        object.__setattr__(self, "values", dict(self.values))

    def __hash__(self):  # records participate in multisets keyed by content
        return hash(tuple(sorted(self.values.items())))


@dataclass(frozen=True)
class Syndrome:
    """A conjunction of response attribute=value conditions (order-insensitive)."""

    conditions: frozenset[tuple[str, str]]

    def __post_init__(self):
        object.__setattr__(self, "conditions", frozenset((str(a), str(v)) for a, v in self.conditions))
        if not self.conditions:
            raise SchemaError("a syndrome needs at least one condition")
        attrs = [a for a, _ in self.conditions]
        if len(set(attrs)) != len(attrs):
            raise SchemaError("syndrome conditions must use distinct attributes")

    @property
    def order(self) -> int:
        return len(self.conditions)

    def label(self) -> str:
        """Canonical text form `attr=value&attr=value`, conditions sorted by attribute."""
        return "&".join(f"{a}={v}" for a, v in sorted(self.conditions))

    @classmethod
    def from_label(cls, label: str) -> "Syndrome":
        conds = []
        for part in label.split("&"):
            attr, sep, value = part.partition("=")
            if not sep or not attr:
                raise SchemaError(f"malformed syndrome label {label!r}")
            conds.append((attr, value))
        return cls(frozenset(conds))

    def __repr__(self):
        return f"Syndrome({self.label()!r})"


def record_matches(record: PatientRecord, syndrome: Syndrome) -> bool:
    """True iff every condition of the syndrome equals the record's value.

    Raises SchemaError if the syndrome references an attribute the record
    does not carry.
    """
    for attr, value in syndrome.conditions:
        try:
            actual = record.values[attr]
        except KeyError:
            raise SchemaError(f"record has no attribute {attr!r}") from None
        if actual != value:
            return False
    return True


@dataclass(frozen=True)
class TimeSlot:
    """All records arriving in one slot, plus the slot's environmental setting."""

    index: int
    records: tuple[PatientRecord, ...]
    env: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "env", dict(self.env))
        if self.index < 0:
            raise ValueError("slot index must be non-negative")

    def __len__(self):
        return len(self.records)


@dataclass(frozen=True)
class OutbreakLabel:
    """Ground-truth outbreak interval: slots [start, start + length)."""

    start: int
    length: int

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("outbreak length must be >= 1")
        if self.start < 0:
            raise ValueError("outbreak start must be non-negative")

    @property
    def end(self) -> int:
        return self.start + self.length


@dataclass(frozen=True)
class DataStream:
    """An ordered slot sequence with a train/test split and outbreak labels.

    The first `train_len` slots are the training part; the remainder is the
    test part. Outbreak intervals must lie entirely within the test part.
    """

    schema: StreamSchema
    slots: tuple[TimeSlot, ...]
    train_len: int
    outbreaks: tuple[OutbreakLabel, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "slots", tuple(self.slots))
        object.__setattr__(self, "outbreaks", tuple(self.outbreaks))
        n = len(self.slots)
        for i, slot in enumerate(self.slots):
            if slot.index != i:
                raise ValueError(f"slot indices must be contiguous from 0 (got {slot.index} at position {i})")
        if not (0 < self.train_len < n):
            raise ValueError(f"train_len must satisfy 0 < train_len < {n} (got {self.train_len})")
        prev_end = -1
        for ob in sorted(self.outbreaks, key=lambda o: o.start):
            if ob.start < self.train_len or ob.end > n:
                raise ValueError(f"outbreak [{ob.start}, {ob.end}) must lie within the test part [{self.train_len}, {n})")
            if ob.start < prev_end:
                raise ValueError("outbreak intervals must not overlap")
            prev_end = ob.end

    def __len__(self):
        return len(self.slots)

    @property
    def test_len(self) -> int:
        return len(self.slots) - self.train_len

    @property
    def train_slots(self) -> tuple[TimeSlot, ...]:
        return self.slots[: self.train_len]

    @property
    def test_slots(self) -> tuple[TimeSlot, ...]:
        return self.slots[self.train_len :]

    def with_outbreaks(self, outbreaks: Iterable[OutbreakLabel]) -> "DataStream":
        return DataStream(self.schema, self.slots, self.train_len, tuple(outbreaks))

    def slot_totals(self) -> list[int]:
        return [len(s) for s in self.slots]
