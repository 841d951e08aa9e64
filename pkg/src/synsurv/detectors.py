"""Detectors: (history, current slot) -> anomaly score.

Three syndrome-based statistical benchmarks (Gaussian, Poisson, negative
binomial tail tests aggregated by minimum p-value), the two reference-set
detectors (fixed-lag and environment-matched references with chi-square /
Fisher tests and min-p or permutation aggregation), three global benchmarks
over slot totals, and an adapter that feeds syndrome-count feature vectors
to a pluggable point-anomaly backend.

Every detector refits from scratch for each test slot on slots [0, t) only;
scoring slot t never reads slots >= t. RNG use derives a per-slot stream
from (rng_seed, t), so results are independent of execution order.
"""
from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy.special import betainc, erfc, gammainc

from . import stats
from .stream import DataStream, Syndrome
from .syndromes import SlotCounter, build_count_matrix, enumerate_syndromes

logger = logging.getLogger(__name__)

STAT_KINDS = ("stat_gaussian", "stat_poisson", "stat_negbinomial")
WSARE_KINDS = ("wsare20", "wsare25")
GLOBAL_KINDS = ("control_chart", "moving_average", "linear_regression")
DETECTOR_KINDS = STAT_KINDS + WSARE_KINDS + GLOBAL_KINDS + ("adapted_anomaly",)

_STAT_TAIL = {
    "stat_gaussian": stats.GAUSSIAN,
    "stat_poisson": stats.POISSON,
    "stat_negbinomial": stats.NEGBINOMIAL,
}


class DetectorError(RuntimeError):
    """A detector failed while scoring a stream."""


@dataclass(frozen=True)
class DetectorConfig:
    """Configuration for one detector run."""

    kind: str
    max_order: int = 1
    aggregation: str = "min_p"  # min_p | permutation (reference-set kinds only)
    permutation_reps: int = 1000
    wsare20_lags: tuple[int, ...] = (35, 42, 49, 56)
    moving_average_window: int = 7
    anomaly_backend: str = "mahalanobis_diag"
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in DETECTOR_KINDS:
            raise ValueError(f"unknown detector kind {self.kind!r}")
        if self.max_order not in (1, 2):
            raise ValueError("max_order must be 1 or 2")
        if self.aggregation not in ("min_p", "permutation"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.aggregation == "permutation" and self.kind not in WSARE_KINDS:
            raise ValueError("permutation aggregation is only valid for the reference-set detectors")
        if self.permutation_reps < 1:
            raise ValueError("permutation_reps must be >= 1")
        object.__setattr__(self, "wsare20_lags", tuple(int(l) for l in self.wsare20_lags))
        if any(l <= 0 for l in self.wsare20_lags) or not self.wsare20_lags:
            raise ValueError("wsare20_lags must be positive")
        if self.moving_average_window < 1:
            raise ValueError("moving_average_window must be >= 1")

    @property
    def uses_syndromes(self) -> bool:
        return self.kind in STAT_KINDS + WSARE_KINDS or self.kind == "adapted_anomaly"


@dataclass(frozen=True)
class ScoreSeries:
    """One anomaly score per test slot; higher means more anomalous."""

    scores: np.ndarray
    start: int  # absolute index of the first scored slot (== train_len)

    def __post_init__(self):
        arr = np.asarray(self.scores, dtype=np.float64)
        object.__setattr__(self, "scores", arr)
        if not np.all(np.isfinite(arr)):
            raise ValueError("scores must be finite")

    def __len__(self):
        return len(self.scores)


def _slot_seed(rng_seed: int, t: int) -> int:
    return int(np.random.SeedSequence(entropy=(int(rng_seed), int(t))).generate_state(1)[0])


# ---------------------------------------------------------------------------
# syndrome-based statistical benchmarks
# ---------------------------------------------------------------------------


class _StatScorer:
    """Per-syndrome tail tests on count histories, min-p aggregated.

    Prefix sums of counts and squared counts over slots make the per-slot
    refit exact (integer arithmetic) without rescanning the history.
    """

    def __init__(self, config: DetectorConfig, stream: DataStream, syndromes: Sequence[Syndrome]):
        self.kind = _STAT_TAIL[config.kind]
        self.matrix = build_count_matrix(stream, syndromes)
        c = self.matrix.counts
        self._s1 = np.zeros((len(stream) + 1, c.shape[1]), dtype=np.int64)
        self._s2 = np.zeros_like(self._s1)
        np.cumsum(c, axis=0, out=self._s1[1:])
        np.cumsum(c * c, axis=0, out=self._s2[1:])

    def _mean_var(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        s1 = self._s1[t].astype(np.float64)
        s2 = self._s2[t].astype(np.float64)
        mu = s1 / t
        var = np.maximum((s2 - s1 * s1 / t) / (t - 1), 0.0)
        return mu, var

    def score(self, t: int) -> float:
        mu, var = self._mean_var(t)
        x = self.matrix.counts[t].astype(np.float64)
        p = tail_probabilities(self.kind, mu, var, x)
        return 1.0 - float(p.min())


def tail_probabilities(kind: str, mu: np.ndarray, var: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Vectorized one-tailed tail probabilities with the model floors applied."""
    if kind == stats.GAUSSIAN:
        sigma = np.sqrt(np.maximum(var, 1.0))
        return 0.5 * erfc((x - mu) / (sigma * math.sqrt(2.0)))
    p = np.ones_like(x, dtype=np.float64)
    mu_f = np.maximum(mu, 1.0)
    pos = x >= 1
    if kind == stats.POISSON:
        over = np.zeros_like(pos)
    else:
        over = var > mu_f
    pois = pos & ~over
    if pois.any():
        p[pois] = gammainc(x[pois], mu_f[pois])
    nb = pos & over
    if nb.any():
        r = mu_f[nb] ** 2 / (var[nb] - mu_f[nb])
        pp = r / (r + mu_f[nb])
        p[nb] = betainc(x[nb], r, 1.0 - pp)
    return np.clip(p, 0.0, 1.0)


# ---------------------------------------------------------------------------
# reference-set detectors (fixed lags / matching environment)
# ---------------------------------------------------------------------------


class _ReferenceScorer:
    """Current-slot vs reference-multiset contingency tests over all syndromes."""

    def __init__(self, config: DetectorConfig, stream: DataStream, syndromes: Sequence[Syndrome]):
        self.config = config
        self.stream = stream
        self.matrix = build_count_matrix(stream, syndromes)
        self.totals = self.matrix.slot_totals
        if config.kind == "wsare25":
            env_keys = [tuple(slot.env[n] for n in stream.schema.env_names) for slot in stream.slots]
            groups: dict[tuple, list[int]] = {}
            for i, key in enumerate(env_keys):
                groups.setdefault(key, []).append(i)
            # prefix sums per environment group -> O(|S|) reference lookup
            self._env_keys = env_keys
            self._groups = {}
            for key, idx in groups.items():
                cum = np.zeros((len(idx) + 1, self.matrix.counts.shape[1]), dtype=np.int64)
                np.cumsum(self.matrix.counts[idx], axis=0, out=cum[1:])
                tot = np.zeros(len(idx) + 1, dtype=np.int64)
                np.cumsum(self.totals[idx], out=tot[1:])
                self._groups[key] = (idx, cum, tot)
        self._memberships: list[np.ndarray] | None = None
        if config.aggregation == "permutation":
            counter = SlotCounter(stream.schema, self.matrix.syndromes)
            self._memberships = [counter.membership(slot) for slot in stream.slots]

    def reference(self, t: int) -> tuple[np.ndarray, int, list[int]]:
        """Reference count vector, reference size, contributing slot indices."""
        if self.config.kind == "wsare20":
            slots = [t - lag for lag in self.config.wsare20_lags]
            if any(s < 0 for s in slots):
                raise DetectorError(f"wsare20 lags reach before slot 0 at t={t}")
            vec = self.matrix.counts[slots].sum(axis=0)
            return vec, int(self.totals[slots].sum()), slots
        idx, cum, tot = self._groups[self._env_keys[t]]
        pos = bisect.bisect_left(idx, t)
        return cum[pos], int(tot[pos]), idx[:pos]

    def score(self, t: int) -> float:
        n = int(self.totals[t])
        if n == 0:
            return 0.0
        ref_vec, m, ref_slots = self.reference(t)
        if m == 0:
            logger.warning("%s: empty reference set at slot %d; scoring 0", self.config.kind, t)
            return 0.0
        a = self.matrix.counts[t]
        p_table = stats.directed_p_table(n, m, a + ref_vec)
        if self.config.aggregation == "min_p":
            return 1.0 - stats.min_p_for_counts(p_table, a)
        cur_mem = self._memberships[t]
        ref_mem = (
            np.concatenate([self._memberships[s] for s in ref_slots])
            if ref_slots
            else np.zeros((0, len(self.matrix.syndromes)), dtype=bool)
        )
        p = stats.permutation_min_p(
            cur_mem,
            ref_mem,
            self.config.permutation_reps,
            _slot_seed(self.config.rng_seed, t),
            p_table=p_table,
        )
        return 1.0 - p


# ---------------------------------------------------------------------------
# global benchmarks over slot totals
# ---------------------------------------------------------------------------


class _GlobalScorer:
    """Gaussian tail tests on the per-slot record totals.

    control_chart fits N(mean, var) on the history; moving_average replaces
    the mean with a trailing-window mean; linear_regression fits ordinary
    least squares on (slot index, one-hot environment) and tests the
    residual. All three floor the variance at 1, mirroring the
    syndrome-level floors.
    """

    def __init__(self, config: DetectorConfig, stream: DataStream):
        self.config = config
        self.totals = np.asarray(stream.slot_totals(), dtype=np.float64)
        self.kind = config.kind
        if self.kind == "linear_regression":
            self._design = _env_design(stream)
            self._warned_singular = False

    def score(self, t: int) -> float:
        y = self.totals[:t]
        x_t = self.totals[t]
        if self.kind == "control_chart":
            mu = y.mean()
            var = max(y.var(ddof=1), 1.0)
            p = stats.gaussian_sf(x_t, mu, var)
        elif self.kind == "moving_average":
            w = self.config.moving_average_window
            mu = y[-w:].mean()
            var = max(y.var(ddof=1), 1.0)
            p = stats.gaussian_sf(x_t, mu, var)
        else:
            design = self._design
            coef, _, rank, _ = np.linalg.lstsq(design[:t], y, rcond=None)
            if rank < design.shape[1] and not self._warned_singular:
                logger.warning(
                    "linear_regression: rank-deficient design (%d < %d); dependent columns dropped",
                    rank,
                    design.shape[1],
                )
                self._warned_singular = True
            resid_hist = y - design[:t] @ coef
            dof = max(t - int(rank), 1)
            var = max(float(resid_hist @ resid_hist) / dof, 1.0)
            resid = x_t - float(design[t] @ coef)
            p = stats.gaussian_sf(resid, 0.0, var)
        return 1.0 - min(max(p, 0.0), 1.0)


def _env_design(stream: DataStream) -> np.ndarray:
    """Intercept, slot index, and drop-first one-hot environment columns."""
    n = len(stream)
    cols = [np.ones(n), np.arange(n, dtype=np.float64)]
    for name, values in stream.schema.environmental_attrs:
        for v in values[1:]:
            cols.append(np.array([1.0 if s.env[name] == v else 0.0 for s in stream.slots]))
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# point-anomaly adapter
# ---------------------------------------------------------------------------


class AnomalyBackend(Protocol):
    """Point-anomaly detector over syndrome-count feature vectors."""

    def fit(self, X: np.ndarray) -> None: ...

    def score(self, x: np.ndarray) -> float: ...


class DiagonalGaussianBackend:
    """Squared Mahalanobis distance under a diagonal Gaussian (variance floor 1).

    Direction-blind by construction: an extreme drop in counts scores as
    high as an equally extreme rise.
    """

    def __init__(self):
        self._mean: np.ndarray | None = None
        self._var: np.ndarray | None = None

    def fit(self, X: np.ndarray) -> None:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 2:
            raise ValueError("need a 2-d history with at least 2 rows")
        self._mean = X.mean(axis=0)
        self._var = np.maximum(X.var(axis=0, ddof=1), 1.0)

    def score(self, x: np.ndarray) -> float:
        d = np.asarray(x, dtype=np.float64) - self._mean
        return float((d * d / self._var).sum())


ANOMALY_BACKENDS: dict[str, Callable[[], AnomalyBackend]] = {
    "mahalanobis_diag": DiagonalGaussianBackend,
}


def register_anomaly_backend(name: str, factory: Callable[[], AnomalyBackend]) -> None:
    """Register a point-anomaly backend under a config-addressable name."""
    ANOMALY_BACKENDS[name] = factory


class _AnomalyScorer:
    def __init__(self, config: DetectorConfig, stream: DataStream, syndromes: Sequence[Syndrome]):
        if config.anomaly_backend not in ANOMALY_BACKENDS:
            raise DetectorError(f"anomaly backend {config.anomaly_backend!r} is not registered")
        self.backend_name = config.anomaly_backend
        self.matrix = build_count_matrix(stream, syndromes)

    def score(self, t: int) -> float:
        backend = ANOMALY_BACKENDS[self.backend_name]()
        X = self.matrix.counts[:t].astype(np.float64)
        x = self.matrix.counts[t].astype(np.float64)
        try:
            backend.fit(X)
            return float(backend.score(x))
        except DetectorError:
            raise
        except Exception as exc:
            raise DetectorError(f"anomaly backend {self.backend_name!r} failed: {exc}") from exc


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------


def min_train_len(config: DetectorConfig, stream: DataStream) -> int:
    if config.kind in STAT_KINDS or config.kind == "adapted_anomaly":
        return 2
    if config.kind == "wsare20":
        return max(config.wsare20_lags)
    if config.kind == "wsare25":
        return 1
    if config.kind == "control_chart":
        return 2
    if config.kind == "moving_average":
        return max(config.moving_average_window, 2)
    # linear_regression: need dof >= 1 past the design columns
    return 2 + sum(len(v) - 1 for _, v in stream.schema.environmental_attrs) + 2


def _make_scorer(config: DetectorConfig, stream: DataStream, syndromes: Sequence[Syndrome] | None):
    if config.uses_syndromes:
        if syndromes is None:
            syndromes = enumerate_syndromes(stream.schema, config.max_order)
        if config.kind in STAT_KINDS:
            return _StatScorer(config, stream, syndromes)
        if config.kind in WSARE_KINDS:
            return _ReferenceScorer(config, stream, syndromes)
        return _AnomalyScorer(config, stream, syndromes)
    return _GlobalScorer(config, stream)


def run_detector(
    config: DetectorConfig,
    stream: DataStream,
    syndromes: Sequence[Syndrome] | None = None,
) -> ScoreSeries:
    """Score every test slot, refitting from scratch on slots [0, t) each time.

    ``syndromes`` overrides the monitored set (e.g. an observed-mode
    enumeration); by default the full enumeration at ``config.max_order`` is
    used. Deterministic given ``config.rng_seed``.
    """
    need = min_train_len(config, stream)
    if stream.train_len < need:
        raise DetectorError(
            f"{config.kind} needs train_len >= {need}, stream has {stream.train_len}"
        )
    scorer = _make_scorer(config, stream, syndromes)
    scores = np.empty(stream.test_len, dtype=np.float64)
    for i, t in enumerate(range(stream.train_len, len(stream))):
        try:
            scores[i] = scorer.score(t)
        except DetectorError as exc:
            raise DetectorError(f"{config.kind} failed at slot {t}: {exc}") from exc
        except Exception as exc:
            raise DetectorError(f"{config.kind} failed at slot {t}: {exc}") from exc
    return ScoreSeries(scores, start=stream.train_len)


# spec-level single-slot entry points ---------------------------------------


def score_stat_benchmark(
    kind: str, stream: DataStream, t: int, syndromes: Sequence[Syndrome]
) -> float:
    """Tail-test benchmark score for one slot (1 - min per-syndrome p)."""
    config = DetectorConfig(kind=kind if kind.startswith("stat_") else f"stat_{kind}")
    return _StatScorer(config, stream, syndromes).score(t)


def score_wsare(
    version: str,
    stream: DataStream,
    t: int,
    syndromes: Sequence[Syndrome],
    config: DetectorConfig | None = None,
) -> float:
    """Reference-set detector score for one slot. ``version`` is '2.0' or '2.5'."""
    kind = {"2.0": "wsare20", "2.5": "wsare25"}.get(str(version), str(version))
    if config is None:
        config = DetectorConfig(kind=kind)
    elif config.kind != kind:
        config = replace(config, kind=kind)
    return _ReferenceScorer(config, stream, syndromes).score(t)


def score_global(kind: str, stream: DataStream, t: int, config: DetectorConfig | None = None) -> float:
    if config is None:
        config = DetectorConfig(kind=kind)
    return _GlobalScorer(config, stream).score(t)


def score_adapted_anomaly(
    stream: DataStream, t: int, syndromes: Sequence[Syndrome], backend: str = "mahalanobis_diag"
) -> float:
    config = DetectorConfig(kind="adapted_anomaly", anomaly_backend=backend)
    return _AnomalyScorer(config, stream, syndromes).score(t)
