"""Alarm-curve evaluation: detection delay vs false alarm rate.

The curve sweeps every observed score as an alarm threshold (ties alarm:
score >= threshold). For each threshold the false alarm rate is the alarmed
fraction of non-outbreak test slots, and the delay is the position of the
first alarmed slot inside the outbreak window (the full outbreak length if
none alarms; the mean across outbreaks when a stream has several). The
reported curve is the lower envelope over thresholds, so it is strictly
increasing in false alarm rate with non-increasing delay.

The headline scalar integrates the curve as a right-continuous step function
of the false alarm rate over [0, far_cap] and divides by far_cap: a
FAR-averaged delay in slot units. A detector that never alarms scores the
outbreak length; a detector whose top score sits on the outbreak scores 0.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .detectors import DetectorConfig, DetectorError, ScoreSeries, run_detector
from .stream import DataStream, OutbreakLabel

logger = logging.getLogger(__name__)

DEFAULT_FAR_CAP = 0.05


@dataclass(frozen=True)
class AmocResult:
    """Alarm curve (far, delay) points plus its partial-area scalar."""

    curve: tuple[tuple[float, float], ...]
    aauc5: float


def amoc_curve(
    scores: ScoreSeries | np.ndarray,
    labels: Sequence[OutbreakLabel],
    test_offset: int,
) -> list[tuple[float, float]]:
    """Lower-envelope (false_alarm_rate, delay) curve over all score thresholds.

    ``scores`` covers exactly the test part; ``test_offset`` is the absolute
    slot index of the first score, used to place the outbreak labels.
    """
    if isinstance(scores, ScoreSeries):
        if scores.start != test_offset:
            raise ValueError(f"score series starts at {scores.start}, expected {test_offset}")
        arr = scores.scores
    else:
        arr = np.asarray(scores, dtype=np.float64)
    if not labels:
        raise ValueError("amoc_curve needs at least one outbreak label")
    n = arr.size
    outbreak_mask = np.zeros(n, dtype=bool)
    windows = []
    for ob in labels:
        lo, hi = ob.start - test_offset, ob.end - test_offset
        if lo < 0 or hi > n:
            raise ValueError(f"outbreak [{ob.start}, {ob.end}) outside the scored range")
        outbreak_mask[lo:hi] = True
        windows.append((lo, hi))
    neg = ~outbreak_mask
    n_neg = int(neg.sum())
    if n_neg == 0:
        raise ValueError("every test slot is inside an outbreak; false alarm rate undefined")

    thresholds = np.unique(arr)[::-1]  # descending
    points: list[tuple[float, float]] = [(0.0, float(np.mean([hi - lo for lo, hi in windows])))]
    for theta in thresholds:
        alarmed = arr >= theta
        far = float(alarmed[neg].sum()) / n_neg
        delays = []
        for lo, hi in windows:
            hits = np.flatnonzero(alarmed[lo:hi])
            delays.append(float(hits[0]) if hits.size else float(hi - lo))
        delay = float(np.mean(delays))
        last_far, last_delay = points[-1]
        if far == last_far:
            if delay < last_delay:
                points[-1] = (far, delay)
        else:
            points.append((far, delay))
    return points


def aauc(curve: Sequence[tuple[float, float]], far_cap: float = DEFAULT_FAR_CAP) -> float:
    """FAR-averaged delay: integrate the step curve over [0, far_cap] / far_cap.

    If the curve starts past FAR 0, the gap is filled with the curve's
    maximum delay (the no-alarm value).
    """
    if not curve:
        raise ValueError("empty curve")
    if not (0.0 < far_cap <= 1.0):
        raise ValueError("far_cap must be in (0, 1]")
    pts = sorted(curve)
    if pts[0][0] > 0.0:
        pts.insert(0, (0.0, max(d for _, d in pts)))
    total = 0.0
    for i, (f, d) in enumerate(pts):
        f_next = pts[i + 1][0] if i + 1 < len(pts) else float("inf")
        lo = min(f, far_cap)
        hi = min(f_next, far_cap)
        if hi > lo:
            # normalize per segment so a single-segment curve integrates exactly
            total += d * ((hi - lo) / far_cap)
        if f >= far_cap:
            break
    return total


def evaluate_scores(
    scores: ScoreSeries | np.ndarray,
    labels: Sequence[OutbreakLabel],
    test_offset: int,
    far_cap: float = DEFAULT_FAR_CAP,
) -> AmocResult:
    curve = amoc_curve(scores, labels, test_offset)
    return AmocResult(tuple(curve), aauc(curve, far_cap))


@dataclass
class CellResult:
    """One (detector config, corpus) cell of the experiment grid."""

    config: DetectorConfig
    mean_aauc5: float
    per_stream: list[float | None]  # None marks an excluded (failed) stream
    n_failures: int
    curves: list[tuple[tuple[float, float], ...] | None]

    @property
    def n_streams(self) -> int:
        return sum(1 for v in self.per_stream if v is not None)


def evaluate_stream(
    stream: DataStream,
    config: DetectorConfig,
    far_cap: float = DEFAULT_FAR_CAP,
    syndromes=None,
) -> AmocResult:
    series = run_detector(config, stream, syndromes)
    return evaluate_scores(series, stream.outbreaks, stream.train_len, far_cap)


def evaluate_corpus(
    streams: Sequence[DataStream],
    configs: Sequence[DetectorConfig],
    far_cap: float = DEFAULT_FAR_CAP,
    syndrome_mode: str = "full",
) -> list[CellResult]:
    """Mean AAUC per detector over a corpus, ordered best (lowest) first.

    Streams where a detector fails are excluded from that detector's mean
    and counted in ``n_failures``. With ``syndrome_mode='observed'`` the
    monitored set is frozen on each stream's training part.
    """
    results = []
    for config in configs:
        per_stream: list[float | None] = []
        curves: list[tuple[tuple[float, float], ...] | None] = []
        failures = 0
        for i, stream in enumerate(streams):
            syndromes = None
            if config.uses_syndromes and syndrome_mode == "observed":
                from .syndromes import enumerate_syndromes

                syndromes = enumerate_syndromes(
                    stream.schema, config.max_order, mode="observed", history=stream.train_slots
                )
            try:
                res = evaluate_stream(stream, config, far_cap, syndromes)
                per_stream.append(res.aauc5)
                curves.append(res.curve)
            except DetectorError as exc:
                logger.warning("%s failed on stream %d: %s", config.kind, i, exc)
                per_stream.append(None)
                curves.append(None)
                failures += 1
        values = [v for v in per_stream if v is not None]
        mean = float(np.mean(values)) if values else float("nan")
        results.append(CellResult(config, mean, per_stream, failures, curves))
    results.sort(key=lambda r: (np.isnan(r.mean_aauc5), r.mean_aauc5))
    return results
