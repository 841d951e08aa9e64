"""Detector behavior: benchmarks, reference sets, globals, adapter, runner."""
import dataclasses
import logging
import math

import numpy as np
import pytest
from scipy import stats as sps

from synsurv.detectors import (
    DetectorConfig,
    DetectorError,
    DiagonalGaussianBackend,
    ScoreSeries,
    _ReferenceScorer,
    register_anomaly_backend,
    run_detector,
    score_adapted_anomaly,
    score_global,
    score_stat_benchmark,
    score_wsare,
)
from synsurv.simulate import generate_stream
from synsurv.stream import PatientRecord, StreamSchema, Syndrome, TimeSlot, DataStream
from synsurv.syndromes import enumerate_syndromes

from conftest import iid_generator_spec, make_record, make_stream


SYM = StreamSchema((("sym", ("a", "b")),), ())


def _sym_stream(counts_a, counts_b, train_len):
    """Stream whose slot i holds counts_a[i] 'a'-records and counts_b[i] 'b'-records."""
    slots = []
    for i, (ca, cb) in enumerate(zip(counts_a, counts_b)):
        records = tuple([PatientRecord({"sym": "a"})] * ca + [PatientRecord({"sym": "b"})] * cb)
        slots.append(TimeSlot(i, records, {}))
    return DataStream(SYM, tuple(slots), train_len)


# --- config validation -------------------------------------------------------


def test_config_rejects_unknown_kind():
    with pytest.raises(ValueError):
        DetectorConfig(kind="nope")


def test_config_permutation_only_for_reference_detectors():
    with pytest.raises(ValueError):
        DetectorConfig(kind="stat_gaussian", aggregation="permutation")
    DetectorConfig(kind="wsare20", aggregation="permutation")


def test_config_rejects_bad_lags_and_orders():
    with pytest.raises(ValueError):
        DetectorConfig(kind="wsare20", wsare20_lags=(0,))
    with pytest.raises(ValueError):
        DetectorConfig(kind="stat_gaussian", max_order=3)


def test_score_series_rejects_non_finite():
    with pytest.raises(ValueError):
        ScoreSeries(np.array([0.1, np.nan]), start=3)


# --- statistical benchmarks --------------------------------------------------


def test_stat_gaussian_at_historical_mean_scores_at_most_half():
    stream = _sym_stream([3] * 11, [2] * 11, train_len=10)
    syn = enumerate_syndromes(SYM, 1)
    score = score_stat_benchmark("stat_gaussian", stream, 10, syn)
    assert score <= 0.5


def test_stat_gaussian_jump_hits_survival_reference():
    # constant history of 2 -> variance floored to 1; jump to 10 is an 8-sigma event
    stream = _sym_stream([2] * 30 + [10], [0] * 31, train_len=30)
    syn = [Syndrome.from_label("sym=a")]
    score = score_stat_benchmark("stat_gaussian", stream, 30, syn)
    assert score == pytest.approx(1.0 - float(sps.norm.sf(8.0)), abs=1e-15)
    assert 1.0 - score < 1e-12


def test_stat_poisson_rare_syndrome_stays_quiet():
    # all-zero history, one observed case: floored lambda keeps p large
    stream = _sym_stream([0] * 20 + [1], [3] * 21, train_len=20)
    syn = [Syndrome.from_label("sym=a")]
    score = score_stat_benchmark("stat_poisson", stream, 20, syn)
    assert score == pytest.approx(math.exp(-1), abs=1e-12)  # 1 - (1 - e^-1)


def test_stat_score_invariant_under_syndrome_permutation():
    rng = np.random.default_rng(0)
    stream = _sym_stream(rng.integers(0, 6, 25).tolist(), rng.integers(0, 6, 25).tolist(), 20)
    syn = enumerate_syndromes(SYM, 1)
    s1 = score_stat_benchmark("stat_negbinomial", stream, 22, list(syn))
    s2 = score_stat_benchmark("stat_negbinomial", stream, 22, list(reversed(syn)))
    assert s1 == s2


def test_stat_score_monotone_in_observed_count():
    rng = np.random.default_rng(1)
    base_a = rng.integers(0, 6, 30).tolist()
    base_b = rng.integers(0, 6, 30).tolist()
    syn = enumerate_syndromes(SYM, 1)
    for kind in ("stat_gaussian", "stat_poisson", "stat_negbinomial"):
        prev = None
        for extra in range(5):
            counts_a = base_a[:-1] + [base_a[-1] + extra]
            stream = _sym_stream(counts_a, base_b, 29)
            score = score_stat_benchmark(kind, stream, 29, syn)
            if prev is not None:
                assert score >= prev - 1e-12
            prev = score


def test_run_detector_matches_single_slot_op():
    rng = np.random.default_rng(2)
    stream = _sym_stream(rng.integers(0, 7, 40).tolist(), rng.integers(0, 7, 40).tolist(), 30)
    syn = enumerate_syndromes(SYM, 1)
    series = run_detector(DetectorConfig(kind="stat_poisson"), stream, syn)
    for i, t in enumerate(range(30, 40)):
        assert series.scores[i] == score_stat_benchmark("stat_poisson", stream, t, syn)


# --- reference-set detectors ---------------------------------------------------


def _fisher_oracle(a, b, c, d):
    n, K, N = a + b, a + c, a + b + c + d
    return sum(
        math.comb(K, x) * math.comb(N - K, n - x) for x in range(a, min(n, K) + 1)
    ) / math.comb(N, n)


def test_wsare_empty_current_slot_scores_zero():
    counts_a = [2] * 40 + [0]
    counts_b = [1] * 40 + [0]
    stream = _sym_stream(counts_a, counts_b, 40)
    syn = enumerate_syndromes(SYM, 1)
    cfg = DetectorConfig(kind="wsare20", wsare20_lags=(7, 14, 21, 28))
    assert score_wsare("2.0", stream, 40, syn, cfg) == 0.0


def test_wsare25_cold_start_scores_zero_with_warning(caplog, small_schema):
    slot_records = [[make_record()] for _ in range(12)]
    envs = [{"dow": "weekday"}] * 11 + [{"dow": "weekend"}]  # env never seen before
    stream = make_stream(small_schema, slot_records, train_len=11, envs=envs)
    syn = enumerate_syndromes(small_schema, 1)
    with caplog.at_level(logging.WARNING):
        score = score_wsare("2.5", stream, 11, syn)
    assert score == 0.0
    assert any("empty reference" in r.message for r in caplog.records)


def test_wsare_overrepresented_syndrome_drives_score():
    # 30-record slot with 9 hits vs 120-record reference with 2: Fisher tail < 0.01
    schema = StreamSchema((("symptom", ("rash", "none")), ("location", ("north", "south"))), ())

    def rec(sym, loc):
        return PatientRecord({"symptom": sym, "location": loc})

    ref_slot_records = [rec("rash", "north")] * 1 + [rec("none", "south")] * 29
    # lags 1..4 -> reference = 4 x 30 records, 2 rash&north overall
    slots = []
    for i in range(4):
        recs = [rec("rash", "north")] * (1 if i < 2 else 0)
        recs += [rec("none", "south")] * (30 - len(recs))
        slots.append(recs)
    current = [rec("rash", "north")] * 9 + [rec("none", "south")] * 21
    stream = make_stream(schema, slots + [current], train_len=4, envs=[{}] * 5)
    syn = enumerate_syndromes(schema, 2)
    cfg = DetectorConfig(kind="wsare20", wsare20_lags=(1, 2, 3, 4))
    score = score_wsare("2.0", stream, 4, syn, cfg)
    p_target = _fisher_oracle(9, 21, 2, 118)
    assert p_target < 0.01
    assert score >= 1.0 - 0.01
    assert score == pytest.approx(1.0 - p_target, abs=1e-9)


def test_wsare25_reference_grows_with_time(small_schema):
    slot_records = [[make_record()] for _ in range(30)]
    envs = [{"dow": "weekday"} if i % 2 == 0 else {"dow": "weekend"} for i in range(30)]
    stream = make_stream(small_schema, slot_records, train_len=10, envs=envs)
    syn = enumerate_syndromes(small_schema, 1)
    scorer = _ReferenceScorer(DetectorConfig(kind="wsare25"), stream, syn)
    sizes = [scorer.reference(t)[1] for t in range(10, 30) if stream.slots[t].env == {"dow": "weekday"}]
    assert sizes == sorted(sizes)


def test_wsare_permutation_deterministic_and_bounded():
    rng = np.random.default_rng(5)
    stream = _sym_stream(rng.integers(0, 8, 50).tolist(), rng.integers(0, 8, 50).tolist(), 40)
    cfg = DetectorConfig(
        kind="wsare20", wsare20_lags=(7, 14, 21, 28), aggregation="permutation",
        permutation_reps=49, rng_seed=11,
    )
    s1 = run_detector(cfg, stream)
    s2 = run_detector(cfg, stream)
    assert np.array_equal(s1.scores, s2.scores)
    assert np.all(s1.scores <= 1 - 1 / 50)  # add-one correction bounds the score


# --- global benchmarks ---------------------------------------------------------


def test_control_chart_constant_totals():
    stream = _sym_stream([5] * 30, [5] * 30, train_len=20)
    for t in range(20, 30):
        assert score_global("control_chart", stream, t) <= 0.5


def test_moving_average_spike():
    counts = [10] * 30 + [30]
    stream = _sym_stream(counts, [0] * 31, train_len=30)
    cfg = DetectorConfig(kind="moving_average", moving_average_window=7)
    score = score_global("moving_average", stream, 30, cfg)
    # window mean 10, full-history variance floored to 1 -> 20-sigma event
    from synsurv.stats import gaussian_sf

    assert score == pytest.approx(1.0 - gaussian_sf(30.0, 10.0, 1.0), abs=1e-15)
    assert score > 1 - 1e-12


def test_linear_regression_calm_on_trend_where_control_chart_alarms():
    counts = [20 + i for i in range(60)]
    stream = _sym_stream(counts, [0] * 60, train_len=40)
    for t in (45, 50, 59):
        cc = score_global("control_chart", stream, t)
        lr = score_global("linear_regression", stream, t)
        assert lr < cc


# --- anomaly adapter ------------------------------------------------------------


def test_diagonal_backend_zero_at_mean_and_quadratic():
    rng = np.random.default_rng(4)
    X = rng.normal(10, 3, size=(50, 4))
    backend = DiagonalGaussianBackend()
    backend.fit(X)
    mean = X.mean(axis=0)
    var = np.maximum(X.var(axis=0, ddof=1), 1.0)
    assert backend.score(mean) == 0.0
    for k in (1.0, 2.5):
        x = mean.copy()
        x[2] += k * math.sqrt(var[2])
        assert backend.score(x) == pytest.approx(k * k, abs=1e-9)
        x_down = mean.copy()
        x_down[2] -= k * math.sqrt(var[2])
        assert backend.score(x_down) == pytest.approx(backend.score(x), abs=1e-9)


def test_adapted_anomaly_scores_zero_on_columnwise_mean():
    # alternating counts with the test slot equal to the history mean
    counts_a = [2, 4] * 10 + [3]
    counts_b = [6, 2] * 10 + [4]
    stream = _sym_stream(counts_a, counts_b, train_len=20)
    syn = enumerate_syndromes(SYM, 1)
    assert score_adapted_anomaly(stream, 20, syn) == pytest.approx(0.0, abs=1e-20)


def test_unregistered_backend_errors():
    stream = _sym_stream([1] * 10, [1] * 10, train_len=5)
    with pytest.raises(DetectorError, match="not registered"):
        score_adapted_anomaly(stream, 5, enumerate_syndromes(SYM, 1), backend="missing")


def test_failing_backend_reports_name():
    class Exploding:
        def fit(self, X):
            raise RuntimeError("boom")

        def score(self, x):
            return 0.0

    register_anomaly_backend("exploding", Exploding)
    stream = _sym_stream([1] * 10, [1] * 10, train_len=5)
    cfg = DetectorConfig(kind="adapted_anomaly", anomaly_backend="exploding")
    with pytest.raises(DetectorError, match="exploding"):
        run_detector(cfg, stream)


# --- runner ----------------------------------------------------------------------


def test_run_detector_scores_every_test_slot():
    spec = iid_generator_spec(stream_len=90, train_len=60)
    stream = generate_stream(spec)
    series = run_detector(DetectorConfig(kind="stat_gaussian", max_order=2), stream)
    assert len(series) == 30
    assert series.start == 60


def test_run_detector_enforces_min_history():
    stream = _sym_stream([1] * 20, [1] * 20, train_len=10)
    with pytest.raises(DetectorError, match="train_len"):
        run_detector(DetectorConfig(kind="wsare20"), stream)  # default lags need 56


def test_no_leakage_scores_depend_only_on_prefix():
    spec = iid_generator_spec(stream_len=100, train_len=60)
    stream_a = generate_stream(spec)
    cut = 80  # modify everything strictly after this slot
    slots_b = list(stream_a.slots)
    for t in range(cut + 1, len(slots_b)):
        slots_b[t] = TimeSlot(t, tuple([PatientRecord({"sym": "rash", "age": "old"})] * 50), slots_b[t].env)
    stream_b = DataStream(stream_a.schema, tuple(slots_b), stream_a.train_len)
    for kind in ("stat_negbinomial", "wsare25", "control_chart"):
        cfg = DetectorConfig(kind=kind, max_order=2)
        sa = run_detector(cfg, stream_a)
        sb = run_detector(cfg, stream_b)
        upto = cut - stream_a.train_len + 1
        assert np.array_equal(sa.scores[:upto], sb.scores[:upto])


def test_min_p_null_calibration_bonferroni_direction():
    # count-data models and reference tests keep P(score >= 1-alpha) within
    # alpha * |syndromes| on i.i.d. streams; the Gaussian benchmark is
    # excluded because a normal tail on skewed counts is anti-conservative
    spec = iid_generator_spec(stream_len=184, train_len=64, visit_rate=25.0)
    alpha = 0.01
    n_syndromes = 5  # |S<=1| for this schema
    for kind in ("stat_poisson", "stat_negbinomial", "wsare20"):
        hits = slots = 0
        for i in range(10):
            stream = generate_stream(dataclasses.replace(spec, rng_seed=500 + i))
            cfg = DetectorConfig(kind=kind, max_order=1, wsare20_lags=(7, 14, 21, 28))
            series = run_detector(cfg, stream)
            hits += int((series.scores >= 1 - alpha).sum())
            slots += len(series)
        assert hits / slots <= alpha * n_syndromes, kind
