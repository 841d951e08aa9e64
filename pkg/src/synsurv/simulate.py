"""Synthetic stream generation and outbreak construction.

The generator draws each slot's environmental setting from per-attribute
processes (deterministic cycles or Markov chains), a Poisson visit count
modulated by environment multipliers, and each record by ancestral sampling
through a conditional probability table DAG whose parents are environmental
attributes or earlier response attributes.

Outbreaks come in two modes: `boost` appends extra records matching a target
syndrome over a multi-slot window (non-target attributes sampled from the
generator with the target conditions clamped), `inject` appends copies of
existing records matching a sampled syndrome to a single test slot, sized by
a Poisson draw on the training-part standard deviation of daily visits.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import io as sio
from .stream import (
    DataStream,
    OutbreakLabel,
    PatientRecord,
    SchemaError,
    StreamSchema,
    Syndrome,
    TimeSlot,
    record_matches,
)
from .syndromes import SlotCounter, enumerate_syndromes

_PARENT_SEP = "|"


@dataclass(frozen=True)
class CycleProcess:
    """Deterministic periodic environment column: value_at(t) = seq[t % period]."""

    sequence: tuple[str, ...]

    def sample(self, length: int, rng: np.random.Generator) -> list[str]:
        period = len(self.sequence)
        return [self.sequence[t % period] for t in range(length)]


@dataclass(frozen=True)
class MarkovProcess:
    """First-order Markov chain over an attribute's vocabulary."""

    values: tuple[str, ...]
    init: tuple[float, ...]
    transition: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        if abs(sum(self.init) - 1.0) > 1e-9:
            raise ValueError("markov init probabilities must sum to 1")
        for row in self.transition:
            if abs(sum(row) - 1.0) > 1e-9:
                raise ValueError("markov transition rows must sum to 1")

    def sample(self, length: int, rng: np.random.Generator) -> list[str]:
        k = len(self.values)
        state = int(rng.choice(k, p=np.asarray(self.init)))
        out = []
        trans = np.asarray(self.transition)
        for _ in range(length):
            out.append(self.values[state])
            state = int(rng.choice(k, p=trans[state]))
        return out


@dataclass(frozen=True)
class Cpt:
    """Conditional distribution of one response attribute given its parents.

    ``probs`` maps a parent-value key (values joined with '|' in parent
    order; empty string when there are no parents) to a probability row over
    the attribute's vocabulary.
    """

    parents: tuple[str, ...]
    probs: Mapping[str, tuple[float, ...]]

    def row_for_key(self, key: str, attr: str) -> tuple[float, ...]:
        try:
            return self.probs[key]
        except KeyError:
            raise ValueError(
                f"CPT for attribute {attr!r} has no row for parent configuration {key!r}"
            ) from None

    def row(self, parent_values: Sequence[str], attr: str) -> tuple[float, ...]:
        return self.row_for_key(_PARENT_SEP.join(parent_values), attr)


@dataclass(frozen=True)
class GeneratorSpec:
    """Full configuration of the synthetic stream generator."""

    schema: StreamSchema
    env_process: Mapping[str, CycleProcess | MarkovProcess]
    visit_rate: float
    cpts: Mapping[str, Cpt]
    stream_len: int
    train_len: int
    rng_seed: int = 0
    rate_multipliers: Mapping[str, Mapping[str, float]] | None = None

    def __post_init__(self):
        if self.visit_rate <= 0:
            raise ValueError("visit_rate must be positive")
        if not (0 < self.train_len < self.stream_len):
            raise ValueError("need 0 < train_len < stream_len")
        for name, _ in self.schema.environmental_attrs:
            if name not in self.env_process:
                raise ValueError(f"no environment process for attribute {name!r}")
        seen: set[str] = set(self.schema.env_names)
        for name, _ in self.schema.response_attrs:
            cpt = self.cpts.get(name)
            if cpt is None:
                raise ValueError(f"no CPT for response attribute {name!r}")
            for parent in cpt.parents:
                if parent not in seen:
                    raise ValueError(
                        f"CPT parent {parent!r} of {name!r} must be an environmental "
                        "attribute or an earlier response attribute"
                    )
            vocab = self.schema.vocabulary(name)
            for key, row in cpt.probs.items():
                if len(row) != len(vocab):
                    raise ValueError(f"CPT row {key!r} of {name!r} has wrong arity")
                if abs(sum(row) - 1.0) > 1e-9:
                    raise ValueError(f"CPT row {key!r} of {name!r} does not sum to 1")
            seen.add(name)


@dataclass(frozen=True)
class OutbreakSpec:
    """How to place one outbreak in a stream's test part.

    ``magnitude`` is the per-slot mean of extra cases in boost mode; in
    inject mode it overrides the protocol default (the training-part
    standard deviation of daily visits) when set.
    """

    mode: str  # boost | inject
    target: Syndrome | None = None
    duration: int | None = None  # defaults: 14 for boost, 1 for inject
    magnitude: float | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.mode not in ("boost", "inject"):
            raise ValueError(f"unknown outbreak mode {self.mode!r}")
        if self.duration is not None and self.duration < 1:
            raise ValueError("duration must be >= 1")
        if self.magnitude is not None and self.magnitude < 0:
            raise ValueError("magnitude must be non-negative")

    @property
    def effective_duration(self) -> int:
        if self.duration is not None:
            return self.duration
        return 14 if self.mode == "boost" else 1


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def _sample_env(spec: GeneratorSpec, rng: np.random.Generator) -> dict[str, list[str]]:
    cols = {}
    for name, _ in spec.schema.environmental_attrs:
        cols[name] = spec.env_process[name].sample(spec.stream_len, rng)
    return cols


def _slot_rate(spec: GeneratorSpec, env: Mapping[str, str]) -> float:
    rate = spec.visit_rate
    if spec.rate_multipliers:
        for attr, table in spec.rate_multipliers.items():
            rate *= table.get(env[attr], 1.0)
    return rate


def _sample_records(
    spec: GeneratorSpec,
    env: Mapping[str, str],
    n: int,
    rng: np.random.Generator,
    clamp: Mapping[str, str] | None = None,
) -> list[PatientRecord]:
    """Ancestral sampling of ``n`` records; ``clamp`` pins attribute values."""
    if n == 0:
        return []
    drawn: dict[str, list[str]] = {}
    for name, vocab in spec.schema.response_attrs:
        if clamp and name in clamp:
            drawn[name] = [clamp[name]] * n
            continue
        cpt = spec.cpts[name]
        if not cpt.parents:
            rows = np.asarray(cpt.row((), name), dtype=np.float64)[None, :]
            row_of = np.zeros(n, dtype=np.intp)
        else:
            keys = []
            for i in range(n):
                keys.append(
                    _PARENT_SEP.join(
                        env[p] if p in env else drawn[p][i] for p in cpt.parents
                    )
                )
            uniq = sorted(set(keys))
            rows = np.asarray([cpt.row_for_key(k, name) for k in uniq], dtype=np.float64)
            key_pos = {k: i for i, k in enumerate(uniq)}
            row_of = np.asarray([key_pos[k] for k in keys], dtype=np.intp)
        cum = np.cumsum(rows, axis=1)
        u = rng.random(n)
        idx = (cum[row_of] < u[:, None]).sum(axis=1)
        idx = np.minimum(idx, len(vocab) - 1)
        drawn[name] = [vocab[j] for j in idx]
    names = spec.schema.response_names
    return [PatientRecord({a: drawn[a][i] for a in names}) for i in range(n)]


def generate_stream(spec: GeneratorSpec) -> DataStream:
    """Generate one stream; byte-identical for identical specs (incl. seed)."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(spec.rng_seed),)))
    env_cols = _sample_env(spec, rng)
    slots = []
    for t in range(spec.stream_len):
        env = {name: env_cols[name][t] for name in spec.schema.env_names}
        n = int(rng.poisson(_slot_rate(spec, env)))
        records = _sample_records(spec, env, n, rng)
        slots.append(TimeSlot(t, tuple(records), env))
    return DataStream(spec.schema, tuple(slots), spec.train_len)


def simulate_outbreak_boost(
    stream: DataStream, outbreak: OutbreakSpec, generator: GeneratorSpec
) -> DataStream:
    """Add one boosted outbreak: extra target-syndrome cases over a window.

    The start slot is uniform over test positions that fit the full
    duration; each outbreak slot gains Poisson(magnitude) extra records whose
    target conditions are clamped and whose remaining attributes come from
    the generator's CPTs. Non-outbreak slots are shared untouched.
    """
    if outbreak.target is None:
        raise ValueError("boost mode needs a target syndrome")
    if outbreak.magnitude is None:
        raise ValueError("boost mode needs a magnitude")
    target = outbreak.target
    for attr, value in target.conditions:
        if not stream.schema.is_response(attr):
            raise SchemaError(f"outbreak target attribute {attr!r} is not a response attribute")
        if value not in stream.schema.vocabulary(attr):
            raise SchemaError(f"outbreak target value {value!r} not in vocabulary of {attr!r}")
    duration = outbreak.effective_duration
    if stream.test_len < duration:
        raise ValueError("test part is shorter than the outbreak duration")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(outbreak.rng_seed),)))
    start = stream.train_len + int(rng.integers(0, stream.test_len - duration + 1))
    clamp = dict(target.conditions)
    slots = list(stream.slots)
    for t in range(start, start + duration):
        extra = int(rng.poisson(outbreak.magnitude))
        if extra == 0:
            continue
        slot = slots[t]
        new_records = _sample_records(generator, slot.env, extra, rng, clamp=clamp)
        slots[t] = TimeSlot(t, slot.records + tuple(new_records), slot.env)
    label = OutbreakLabel(start, duration)
    return DataStream(stream.schema, tuple(slots), stream.train_len, stream.outbreaks + (label,))


# ---------------------------------------------------------------------------
# injection
# ---------------------------------------------------------------------------


def train_visit_std(stream: DataStream) -> float:
    totals = np.asarray(stream.slot_totals()[: stream.train_len], dtype=np.float64)
    return float(totals.std(ddof=1))


def syndrome_train_rate(stream: DataStream, syndrome: Syndrome) -> float:
    """Mean daily count of a syndrome over the training part."""
    counter = SlotCounter(stream.schema, [syndrome])
    total = sum(int(counter.count(s)[0]) for s in stream.train_slots)
    return total / stream.train_len


def inject_outbreak(
    stream: DataStream,
    outbreak: OutbreakSpec,
    *,
    target: Syndrome | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[DataStream, dict]:
    """Inject one single-slot outbreak of duplicated matching records.

    The target defaults to a uniform draw from the observed syndrome set
    (counted over the training part); the outbreak size is Poisson with mean
    equal to the training-part standard deviation of daily visits (or
    ``outbreak.magnitude`` when set). Records are drawn with replacement
    from every record in the stream matching the target. Returns the
    injected stream and a bookkeeping dict (syndrome, start, size, rarity).
    """
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(outbreak.rng_seed),)))
    if target is None:
        observed = enumerate_syndromes(
            stream.schema, 2, mode="observed", history=stream.train_slots
        )
        if not observed:
            raise ValueError("no observed syndromes in the training part")
        target = observed[int(rng.integers(0, len(observed)))]
    pool = [r for slot in stream.slots for r in slot.records if record_matches(r, target)]
    if not pool:
        raise ValueError(f"no record in the stream matches syndrome {target.label()!r}")
    mean_size = outbreak.magnitude if outbreak.magnitude is not None else train_visit_std(stream)
    k = int(rng.poisson(mean_size))
    duration = outbreak.effective_duration
    start = stream.train_len + int(rng.integers(0, stream.test_len - duration + 1))
    slots = list(stream.slots)
    if k > 0:
        picks = rng.integers(0, len(pool), size=k)
        extra = tuple(pool[i] for i in picks)
        slot = slots[start]
        slots[start] = TimeSlot(start, slot.records + extra, slot.env)
    label = OutbreakLabel(start, duration)
    injected = DataStream(stream.schema, tuple(slots), stream.train_len, stream.outbreaks + (label,))
    info = {
        "syndrome": target.label(),
        "order": target.order,
        "start": start,
        "length": duration,
        "size": k,
        "rare": syndrome_train_rate(stream, target) < 1.0,
    }
    return injected, info


# ---------------------------------------------------------------------------
# corpora
# ---------------------------------------------------------------------------


def _stream_dir_name(i: int) -> str:
    return f"stream_{i:03d}"


def generate_corpus(
    spec: GeneratorSpec,
    n_streams: int,
    outbreak: OutbreakSpec | None,
    out_dir: str | Path,
    master_seed: int = 0,
) -> dict:
    """Generate ``n_streams`` streams with at most one boosted outbreak each.

    Per-stream seeds derive from the master seed and the stream index, so a
    rerun with identical arguments reproduces the corpus byte for byte.
    Returns the manifest (also written to ``out_dir``).
    """
    if n_streams < 1:
        raise ValueError("n_streams must be >= 1")
    if outbreak is not None and outbreak.mode != "boost":
        raise ValueError("generate_corpus only supports boost outbreaks; use inject_corpus")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n_streams):
        stream_seed = int(np.random.SeedSequence(entropy=(int(master_seed), i, 0)).generate_state(1)[0])
        stream = generate_stream(replace(spec, rng_seed=stream_seed))
        ob_entry = None
        if outbreak is not None:
            ob_seed = int(np.random.SeedSequence(entropy=(int(master_seed), i, 1)).generate_state(1)[0])
            stream = simulate_outbreak_boost(stream, replace(outbreak, rng_seed=ob_seed), spec)
            label = stream.outbreaks[-1]
            ob_entry = {
                "syndrome": outbreak.target.label(),
                "start": label.start,
                "length": label.length,
                "magnitude": outbreak.magnitude,
            }
        d = _stream_dir_name(i)
        sio.write_stream(stream, out / d)
        entries.append({"index": i, "dir": d, "seed": stream_seed, "outbreak": ob_entry})
    manifest = {
        "kind": "generated",
        "master_seed": int(master_seed),
        "n_streams": n_streams,
        "stream_len": spec.stream_len,
        "train_len": spec.train_len,
        "outbreak_mode": None if outbreak is None else "boost",
        "streams": entries,
    }
    sio.write_manifest(manifest, out)
    return manifest


def inject_corpus(
    base_streams: Sequence[DataStream],
    n_streams: int,
    out_dir: str | Path,
    master_seed: int = 0,
    rare_quota: int = 20,
    max_retries: int = 1000,
) -> dict:
    """Build an injected corpus, replicating the base stream(s) as needed.

    At most ``rare_quota`` streams receive outbreaks on syndromes rarer than
    one case per training day; rarer proposals beyond the quota are rejected
    and resampled. The manifest records the single/pair condition mix rather
    than forcing it.
    """
    if n_streams < 1:
        raise ValueError("n_streams must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    rare_used = 0
    n_single = n_pair = 0
    # per-base caches: observed syndromes, pools and rates are stream-wide facts
    caches: dict[int, tuple] = {}
    for i in range(n_streams):
        base = base_streams[i % len(base_streams)]
        base_id = i % len(base_streams)
        if base_id not in caches:
            observed = enumerate_syndromes(base.schema, 2, mode="observed", history=base.train_slots)
            counter = SlotCounter(base.schema, observed)
            train_counts = np.zeros(len(observed), dtype=np.int64)
            for slot in base.train_slots:
                train_counts += counter.count(slot)
            caches[base_id] = (observed, train_counts / base.train_len)
        observed, rates = caches[base_id]
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(master_seed), i)))
        target = None
        for _ in range(max_retries):
            j = int(rng.integers(0, len(observed)))
            if rates[j] < 1.0 and rare_used >= rare_quota:
                continue
            target = observed[j]
            break
        if target is None:
            raise RuntimeError("could not sample a quota-compatible syndrome; rare quota too tight")
        spec = OutbreakSpec(mode="inject", rng_seed=0)
        injected, info = inject_outbreak(base, spec, target=target, rng=rng)
        if info["rare"]:
            rare_used += 1
        if info["order"] == 1:
            n_single += 1
        else:
            n_pair += 1
        d = _stream_dir_name(i)
        sio.write_stream(injected, out / d)
        entries.append({"index": i, "dir": d, "seed": None, "outbreak": info})
    manifest = {
        "kind": "injected",
        "master_seed": int(master_seed),
        "n_streams": n_streams,
        "stream_len": len(base_streams[0]),
        "train_len": base_streams[0].train_len,
        "visit_std_basis": "train",
        "rare_quota": rare_quota,
        "summary": {"n_single": n_single, "n_pair": n_pair, "n_rare": rare_used},
        "streams": entries,
    }
    sio.write_manifest(manifest, out)
    return manifest


# ---------------------------------------------------------------------------
# spec files and the built-in default
# ---------------------------------------------------------------------------


def _parse_env_process(doc: dict, name: str, vocab: tuple[str, ...]):
    kind = doc.get("kind")
    if kind == "cycle":
        dwell = int(doc.get("dwell", 1))
        seq = []
        for v in doc["values"]:
            if v not in vocab:
                raise ValueError(f"cycle value {v!r} not in vocabulary of {name!r}")
            seq.extend([v] * dwell)
        return CycleProcess(tuple(seq))
    if kind == "markov":
        values = tuple(doc.get("values", vocab))
        for v in values:
            if v not in vocab:
                raise ValueError(f"markov value {v!r} not in vocabulary of {name!r}")
        init = tuple(float(x) for x in doc["init"])
        transition = tuple(tuple(float(x) for x in row) for row in doc["transition"])
        return MarkovProcess(values, init, transition)
    raise ValueError(f"unknown env process kind {kind!r} for {name!r}")


def load_generator_spec(source: str | Path | dict) -> GeneratorSpec:
    """Parse a generator spec from a JSON file or an already-loaded dict."""
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            doc = json.load(fh)
    else:
        doc = source
    schema = StreamSchema(
        tuple((a["name"], tuple(a["values"])) for a in doc["schema"]["response"]),
        tuple((a["name"], tuple(a["values"])) for a in doc["schema"].get("environmental", [])),
    )
    env_process = {
        name: _parse_env_process(doc["env_process"][name], name, vocab)
        for name, vocab in schema.environmental_attrs
    }
    cpts = {}
    for name, _ in schema.response_attrs:
        c = doc["cpts"][name]
        probs = c["probs"]
        if isinstance(probs, list):
            probs = {"": tuple(float(x) for x in probs)}
        else:
            probs = {k: tuple(float(x) for x in row) for k, row in probs.items()}
        cpts[name] = Cpt(tuple(c.get("parents", ())), probs)
    multipliers = doc.get("rate_multipliers")
    if multipliers is not None:
        multipliers = {a: {v: float(x) for v, x in table.items()} for a, table in multipliers.items()}
    return GeneratorSpec(
        schema=schema,
        env_process=env_process,
        visit_rate=float(doc["visit_rate"]),
        cpts=cpts,
        stream_len=int(doc["stream_len"]),
        train_len=int(doc["train_len"]),
        rng_seed=int(doc.get("rng_seed", 0)),
        rate_multipliers=multipliers,
    )


def parse_outbreak_spec(doc: dict) -> OutbreakSpec:
    target = doc.get("target")
    return OutbreakSpec(
        mode=doc.get("mode", "boost"),
        target=Syndrome.from_label(target) if target else None,
        duration=doc.get("duration"),
        magnitude=doc.get("magnitude"),
        rng_seed=int(doc.get("rng_seed", 0)),
    )


def default_generator_spec(
    stream_len: int = 730, train_len: int = 365, visit_rate: float = 34.0
) -> GeneratorSpec:
    """A city-visit style default: six response attributes driven by flu level,
    season, and weekday, averaging ``visit_rate`` records per slot."""
    schema = StreamSchema(
        (
            ("age", ("child", "working", "senior")),
            ("gender", ("female", "male")),
            ("action", ("absent", "evisit", "purchase")),
            ("symptom", ("none", "nausea", "rash", "respiratory")),
            ("drug", ("none", "aspirin", "nyquil", "vomit-b-gone")),
            ("location", ("center", "north", "south", "east", "west", "ne", "nw", "se", "sw")),
        ),
        (
            ("flu level", ("none", "low", "high", "decline")),
            ("day of week", ("weekday", "saturday", "sunday")),
            ("weather", ("cold", "hot")),
            ("season", ("winter", "spring", "summer", "fall")),
        ),
    )
    env_process = {
        "day of week": CycleProcess(("weekday",) * 5 + ("saturday", "sunday")),
        "season": CycleProcess(
            ("winter",) * 91 + ("spring",) * 91 + ("summer",) * 91 + ("fall",) * 91
        ),
        "flu level": MarkovProcess(
            ("none", "low", "high", "decline"),
            (1.0, 0.0, 0.0, 0.0),
            (
                (0.97, 0.03, 0.00, 0.00),
                (0.02, 0.92, 0.06, 0.00),
                (0.00, 0.00, 0.95, 0.05),
                (0.08, 0.00, 0.00, 0.92),
            ),
        ),
        "weather": MarkovProcess(
            ("cold", "hot"),
            (0.5, 0.5),
            ((0.9, 0.1), (0.1, 0.9)),
        ),
    }

    def _sym(none, nausea, rash, resp):
        return (none, nausea, rash, resp)

    symptom_probs = {}
    for flu in ("none", "low", "high", "decline"):
        for season in ("winter", "spring", "summer", "fall"):
            resp = {"none": 0.08, "low": 0.18, "high": 0.42, "decline": 0.25}[flu]
            if season == "winter":
                resp = min(resp + 0.08, 0.9)
            nausea = 0.16 if season == "summer" else 0.08
            rash = 0.10
            none = 1.0 - resp - nausea - rash
            symptom_probs[f"{flu}{_PARENT_SEP}{season}"] = _sym(round(none, 6), nausea, rash, resp)
    for key, row in symptom_probs.items():
        s = sum(row)
        symptom_probs[key] = tuple(x / s for x in row)

    cpts = {
        "age": Cpt((), {"": (0.25, 0.45, 0.30)}),
        "gender": Cpt((), {"": (0.5, 0.5)}),
        "action": Cpt(
            ("flu level",),
            {
                "none": (0.40, 0.20, 0.40),
                "low": (0.32, 0.30, 0.38),
                "high": (0.20, 0.50, 0.30),
                "decline": (0.30, 0.38, 0.32),
            },
        ),
        "symptom": Cpt(("flu level", "season"), symptom_probs),
        "drug": Cpt(
            ("symptom",),
            {
                "none": (0.80, 0.10, 0.05, 0.05),
                "nausea": (0.25, 0.10, 0.05, 0.60),
                "rash": (0.55, 0.30, 0.10, 0.05),
                "respiratory": (0.20, 0.25, 0.50, 0.05),
            },
        ),
        "location": Cpt((), {"": (0.16, 0.12, 0.12, 0.11, 0.11, 0.10, 0.10, 0.09, 0.09)}),
    }
    multipliers = {
        "day of week": {"weekday": 1.0, "saturday": 1.1, "sunday": 0.9},
        "flu level": {"none": 0.95, "low": 1.0, "high": 1.2, "decline": 1.05},
    }
    return GeneratorSpec(
        schema=schema,
        env_process=env_process,
        visit_rate=visit_rate,
        cpts=cpts,
        stream_len=stream_len,
        train_len=train_len,
        rate_multipliers=multipliers,
    )
