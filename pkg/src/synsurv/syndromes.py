"""Syndrome enumeration and per-slot syndrome counting.

Counting is tally-based: one pass over a slot's records builds per-attribute
and per-attribute-pair value tallies, and syndrome counts are gathered from
those tallies. That keeps the cost at O(records * m^2) per slot instead of
O(records * |syndromes|), which matters once the pair space reaches hundreds
of syndromes.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .stream import DataStream, SchemaError, StreamSchema, Syndrome, TimeSlot


@dataclass(frozen=True)
class SyndromeCountSeries:
    """Per-slot count history of one syndrome."""

    syndrome: Syndrome
    counts: np.ndarray

    def __len__(self):
        return len(self.counts)


@dataclass(eq=False)
class CountMatrix:
    """Slot-by-syndrome count matrix plus per-slot record totals.

    Row i column j is the number of records in slot i matching syndrome j;
    column order is frozen at construction.
    """

    syndromes: tuple[Syndrome, ...]
    counts: np.ndarray  # (n_slots, n_syndromes) int64
    slot_totals: np.ndarray  # (n_slots,) int64

    def series(self, syndrome: Syndrome) -> SyndromeCountSeries:
        j = self.syndromes.index(syndrome)
        return SyndromeCountSeries(syndrome, self.counts[:, j].copy())


def enumerate_syndromes(
    schema: StreamSchema,
    max_order: int,
    mode: str = "full",
    history: Sequence[TimeSlot] | None = None,
) -> tuple[Syndrome, ...]:
    """Enumerate all syndromes with at most ``max_order`` conditions.

    ``full`` lists every value combination over every response-attribute
    subset of size <= max_order, ordered by attribute declaration order and
    then vocabulary order (singletons first, then pairs). ``observed`` keeps
    the subset of ``full`` whose count over the supplied history slots is at
    least one; the relative order is preserved.
    """
    if max_order < 1:
        raise ValueError("max_order must be at least 1")
    if max_order > 2:
        raise ValueError("syndromes of order > 2 are not supported")
    if mode not in ("full", "observed"):
        raise ValueError(f"unknown enumeration mode {mode!r}")
    if mode == "observed" and history is None:
        raise ValueError("mode='observed' requires history slots")

    attrs = schema.response_attrs
    out: list[Syndrome] = []
    for name, values in attrs:
        out.extend(Syndrome(frozenset([(name, v)])) for v in values)
    if max_order >= 2:
        for (name_a, vals_a), (name_b, vals_b) in combinations(attrs, 2):
            for va in vals_a:
                for vb in vals_b:
                    out.append(Syndrome(frozenset([(name_a, va), (name_b, vb)])))
    full = tuple(out)
    if mode == "full":
        return full

    counter = SlotCounter(schema, full)
    total = np.zeros(len(full), dtype=np.int64)
    for slot in history:
        total += counter.count(slot)
    return tuple(s for s, c in zip(full, total) if c > 0)


class SlotCounter:
    """Counts a fixed syndrome list against slots of one schema.

    Precomputes value-index maps and a flat tally layout so each slot costs
    one encoding pass plus numpy bincounts.
    """

    def __init__(self, schema: StreamSchema, syndromes: Sequence[Syndrome]):
        self.schema = schema
        self.syndromes = tuple(syndromes)
        attrs = schema.response_attrs
        self._attr_pos = {name: j for j, (name, _) in enumerate(attrs)}
        self._value_idx = [{v: i for i, v in enumerate(values)} for _, values in attrs]
        self._sizes = [len(values) for _, values in attrs]

        # flat tally layout: singleton blocks per attribute, then one block
        # per attribute pair actually referenced by the syndrome list
        offsets = {}
        pos = 0
        for j, size in enumerate(self._sizes):
            offsets[("1", j)] = pos
            pos += size
        needed_pairs = set()
        for s in self.syndromes:
            if s.order == 2:
                (a1, _), (a2, _) = sorted(s.conditions)
                for attr, _ in s.conditions:
                    if attr not in self._attr_pos:
                        raise SchemaError(f"syndrome references non-response attribute {attr!r}")
                j1, j2 = sorted((self._attr_pos[a1], self._attr_pos[a2]))
                needed_pairs.add((j1, j2))
        self._pairs = sorted(needed_pairs)
        for j1, j2 in self._pairs:
            offsets[("2", j1, j2)] = pos
            pos += self._sizes[j1] * self._sizes[j2]
        self._tally_len = pos

        positions = np.empty(len(self.syndromes), dtype=np.int64)
        for k, s in enumerate(self.syndromes):
            conds = sorted(s.conditions)
            for attr, value in conds:
                if attr not in self._attr_pos:
                    raise SchemaError(f"syndrome references non-response attribute {attr!r}")
                if value not in self._value_idx[self._attr_pos[attr]]:
                    raise SchemaError(f"syndrome value {value!r} not in vocabulary of {attr!r}")
            if s.order == 1:
                (attr, value), = conds
                j = self._attr_pos[attr]
                positions[k] = offsets[("1", j)] + self._value_idx[j][value]
            else:
                (a1, v1), (a2, v2) = conds
                j1, j2 = self._attr_pos[a1], self._attr_pos[a2]
                if j1 > j2:
                    j1, j2 = j2, j1
                    v1, v2 = v2, v1
                positions[k] = (
                    offsets[("2", j1, j2)]
                    + self._value_idx[j1][v1] * self._sizes[j2]
                    + self._value_idx[j2][v2]
                )
        self._positions = positions

    def encode(self, slot: TimeSlot) -> np.ndarray:
        """Value-index matrix (n_records, n_response_attrs) for one slot."""
        m = len(self._sizes)
        codes = np.empty((len(slot.records), m), dtype=np.int64)
        names = self.schema.response_names
        for i, rec in enumerate(slot.records):
            vals = rec.values
            for j, name in enumerate(names):
                try:
                    codes[i, j] = self._value_idx[j][vals[name]]
                except KeyError:
                    raise SchemaError(
                        f"slot {slot.index}: record value {vals.get(name)!r} invalid for attribute {name!r}"
                    ) from None
        return codes

    def count_codes(self, codes: np.ndarray) -> np.ndarray:
        tally = np.zeros(self._tally_len, dtype=np.int64)
        pos = 0
        for j, size in enumerate(self._sizes):
            tally[pos : pos + size] = np.bincount(codes[:, j], minlength=size)
            pos += size
        for j1, j2 in self._pairs:
            size = self._sizes[j1] * self._sizes[j2]
            combined = codes[:, j1] * self._sizes[j2] + codes[:, j2]
            tally[pos : pos + size] = np.bincount(combined, minlength=size)
            pos += size
        return tally[self._positions]

    def count(self, slot: TimeSlot) -> np.ndarray:
        return self.count_codes(self.encode(slot))

    def membership(self, slot: TimeSlot) -> np.ndarray:
        """Boolean matrix (n_records, n_syndromes): record matches syndrome."""
        codes = self.encode(slot)
        n = codes.shape[0]
        out = np.zeros((n, len(self.syndromes)), dtype=bool)
        for k, s in enumerate(self.syndromes):
            conds = sorted(s.conditions)
            mask = np.ones(n, dtype=bool)
            for attr, value in conds:
                j = self._attr_pos[attr]
                mask &= codes[:, j] == self._value_idx[j][value]
            out[:, k] = mask
        return out


def count_slot(slot: TimeSlot, syndromes: Sequence[Syndrome], schema: StreamSchema) -> np.ndarray:
    """Count vector v with v[j] = number of records in the slot matching syndrome j."""
    return SlotCounter(schema, syndromes).count(slot)


def build_count_matrix(
    stream: DataStream, syndromes: Sequence[Syndrome], upto_slot: int | None = None
) -> CountMatrix:
    """Count matrix over slots [0, upto_slot) in slot order.

    ``upto_slot`` defaults to the full stream length. Row i depends only on
    slot i, so a matrix over the full stream leaks nothing across slots.
    """
    n = len(stream) if upto_slot is None else upto_slot
    if n > len(stream):
        raise ValueError(f"upto_slot {n} exceeds stream length {len(stream)}")
    counter = SlotCounter(stream.schema, syndromes)
    counts = np.zeros((n, len(counter.syndromes)), dtype=np.int64)
    totals = np.zeros(n, dtype=np.int64)
    for i in range(n):
        slot = stream.slots[i]
        counts[i] = counter.count(slot)
        totals[i] = len(slot.records)
    return CountMatrix(counter.syndromes, counts, totals)
