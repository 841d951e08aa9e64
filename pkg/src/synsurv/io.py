"""On-disk formats: schema JSON, records CSV, labels JSON, corpora, score CSV.

Stream layout (one directory per stream):

    schema.json   {"response": [{"name":..., "values": [...]}, ...],
                   "environmental": [...]}
    records.csv   header ``slot,<env attrs...>,<response attrs...>``, one row
                  per patient, env columns repeated per row; slots with zero
                  patients are written as a single marker row whose response
                  columns are all empty
    labels.json   [{"start": int, "length": int}, ...]

Corpus layout: ``manifest.json`` plus ``stream_<i>/`` directories. The
manifest carries the train/test split, per-stream seeds, and outbreak
bookkeeping; the stream files themselves stay detector-agnostic.
"""
from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .stream import (
    DataStream,
    OutbreakLabel,
    PatientRecord,
    SchemaError,
    StreamSchema,
    TimeSlot,
)

SCHEMA_FILE = "schema.json"
RECORDS_FILE = "records.csv"
LABELS_FILE = "labels.json"
MANIFEST_FILE = "manifest.json"


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write a file via temp + rename so readers never see partial content."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_schema(schema: StreamSchema, path: str | Path) -> None:
    doc = {
        "response": [{"name": n, "values": list(v)} for n, v in schema.response_attrs],
        "environmental": [{"name": n, "values": list(v)} for n, v in schema.environmental_attrs],
    }
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def read_schema(path: str | Path) -> StreamSchema:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        response = [(a["name"], tuple(a["values"])) for a in doc["response"]]
        env = [(a["name"], tuple(a["values"])) for a in doc.get("environmental", [])]
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed schema file {path}: {exc}") from exc
    return StreamSchema(tuple(response), tuple(env))


def write_labels(labels: Sequence[OutbreakLabel], path: str | Path) -> None:
    doc = [{"start": ob.start, "length": ob.length} for ob in labels]
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def read_labels(path: str | Path) -> tuple[OutbreakLabel, ...]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, list):
        raise ValueError(f"labels file {path} must contain a JSON array")
    return tuple(OutbreakLabel(int(item["start"]), int(item["length"])) for item in doc)


def _records_header(schema: StreamSchema) -> list[str]:
    return ["slot", *schema.env_names, *schema.response_names]


def write_records_csv(stream_slots: Sequence[TimeSlot], schema: StreamSchema, path: str | Path) -> None:
    import io as _io

    buf = _io.StringIO()
    writer = csv.writer(buf)
    env_names, resp_names = schema.env_names, schema.response_names
    writer.writerow(_records_header(schema))
    for slot in stream_slots:
        env_vals = [slot.env[n] for n in env_names]
        if not slot.records:
            # marker row: env preserved, all response columns empty
            writer.writerow([slot.index, *env_vals, *[""] * len(resp_names)])
            continue
        for rec in slot.records:
            writer.writerow([slot.index, *env_vals, *[rec.values[n] for n in resp_names]])
    atomic_write_text(path, buf.getvalue())


def load_stream(
    schema_path: str | Path,
    records_path: str | Path,
    labels_path: str | Path | None = None,
    *,
    train_len: int,
) -> DataStream:
    """Load a stream from its three files.

    Rows are grouped by the slot column; slots missing between 0 and the
    maximum index are materialized with zero records. A row whose response
    columns are all empty is an environment marker for an empty slot. Bare
    gaps (no row at all) inherit the environmental setting of the nearest
    earlier slot that has one (or the nearest later slot for a leading gap).

    The on-disk formats do not carry the train/test split, so ``train_len``
    is a required argument (corpora record it in their manifest).
    """
    schema = read_schema(schema_path)
    env_names, resp_names = schema.env_names, schema.response_names
    expected_header = _records_header(schema)

    slot_records: dict[int, list[PatientRecord]] = {}
    slot_env: dict[int, dict[str, str]] = {}

    with open(records_path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected_header:
            raise SchemaError(f"records header mismatch: expected {expected_header}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            ctx = f"{records_path}:{lineno}"
            if len(row) != len(expected_header):
                raise SchemaError(f"{ctx}: expected {len(expected_header)} columns, got {len(row)}")
            try:
                slot_idx = int(row[0])
            except ValueError:
                raise SchemaError(f"{ctx}: non-integer slot index {row[0]!r}") from None
            if slot_idx < 0:
                raise SchemaError(f"{ctx}: negative slot index {slot_idx}")
            env = dict(zip(env_names, row[1 : 1 + len(env_names)]))
            schema.validate_env(env, context=ctx)
            if slot_idx in slot_env:
                if slot_env[slot_idx] != env:
                    raise SchemaError(f"{ctx}: environmental setting differs within slot {slot_idx}")
            else:
                slot_env[slot_idx] = env
            resp_vals = row[1 + len(env_names) :]
            if all(v == "" for v in resp_vals):
                slot_records.setdefault(slot_idx, [])
                continue
            record = PatientRecord(dict(zip(resp_names, resp_vals)))
            schema.validate_record(record, context=ctx)
            slot_records.setdefault(slot_idx, []).append(record)

    if not slot_env and not slot_records:
        raise ValueError(f"records file {records_path} contains no data rows")
    max_idx = max(slot_records, default=-1)
    max_idx = max(max_idx, max(slot_env, default=-1))

    # env for bare gaps: carry the nearest earlier setting forward
    envs: list[dict[str, str] | None] = [slot_env.get(i) for i in range(max_idx + 1)]
    if env_names:
        last = None
        for i in range(max_idx + 1):
            if envs[i] is None:
                envs[i] = last
            else:
                last = envs[i]
        nxt = None
        for i in range(max_idx, -1, -1):
            if envs[i] is None:
                envs[i] = nxt
            else:
                nxt = envs[i]
        if any(e is None for e in envs):
            raise SchemaError(f"{records_path}: no row carries an environmental setting")
    else:
        envs = [{} for _ in range(max_idx + 1)]

    slots = tuple(
        TimeSlot(i, tuple(slot_records.get(i, ())), envs[i]) for i in range(max_idx + 1)
    )
    labels = read_labels(labels_path) if labels_path is not None else ()
    return DataStream(schema, slots, train_len, labels)


def write_stream(stream: DataStream, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_schema(stream.schema, out / SCHEMA_FILE)
    write_records_csv(stream.slots, stream.schema, out / RECORDS_FILE)
    write_labels(stream.outbreaks, out / LABELS_FILE)


def load_stream_dir(stream_dir: str | Path, *, train_len: int) -> DataStream:
    d = Path(stream_dir)
    labels = d / LABELS_FILE
    return load_stream(
        d / SCHEMA_FILE,
        d / RECORDS_FILE,
        labels if labels.exists() else None,
        train_len=train_len,
    )


@dataclass
class Corpus:
    """A corpus directory: manifest plus lazily loadable streams."""

    root: Path
    manifest: dict

    @property
    def n_streams(self) -> int:
        return len(self.manifest["streams"])

    @property
    def train_len(self) -> int:
        return int(self.manifest["train_len"])

    def stream_dir(self, i: int) -> Path:
        return self.root / self.manifest["streams"][i]["dir"]

    def load(self, i: int) -> DataStream:
        return load_stream_dir(self.stream_dir(i), train_len=self.train_len)


def write_manifest(manifest: dict, corpus_dir: str | Path) -> None:
    atomic_write_text(Path(corpus_dir) / MANIFEST_FILE, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_corpus(corpus_dir: str | Path) -> Corpus:
    root = Path(corpus_dir)
    with open(root / MANIFEST_FILE, encoding="utf-8") as fh:
        manifest = json.load(fh)
    return Corpus(root, manifest)


def write_scores_csv(scores: Iterable[float], start_slot: int, path: str | Path) -> None:
    lines = ["slot,score"]
    for i, s in enumerate(scores):
        lines.append(f"{start_slot + i},{float(s)!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_count_matrix_csv(matrix, path: str | Path) -> None:
    """Dump a CountMatrix as ``slot,total,<syndrome labels...>``."""
    import io as _io

    buf = _io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["slot", "total", *[s.label() for s in matrix.syndromes]])
    for i, row in enumerate(matrix.counts):
        writer.writerow([i, int(matrix.slot_totals[i]), *[int(c) for c in row]])
    atomic_write_text(path, buf.getvalue())
