"""Numerical primitives for count surveillance.

One-tailed tail probabilities for Gaussian/Poisson/negative-binomial models
fitted from count histories, 2x2 contingency tests (Pearson chi-square and
Fisher's exact test, both directed at increases), and the permutation
corrector for minimum p-values. Probability arithmetic runs in log space
wherever factorials or pmf products could underflow.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import betainc, erfc, gammainc, gammaln

_SQRT2 = math.sqrt(2.0)

GAUSSIAN = "gaussian"
POISSON = "poisson"
NEGBINOMIAL = "negbinomial"
TAIL_KINDS = (GAUSSIAN, POISSON, NEGBINOMIAL)


@dataclass(frozen=True)
class FittedTailModel:
    """A distribution fitted to one syndrome's count history.

    ``kind`` is the distribution actually in effect: a negative-binomial fit
    falls back to Poisson when the history is not overdispersed, because
    r = mu^2 / (sigma^2 - mu) is undefined there.
    """

    kind: str
    mu: float
    sigma2: float
    lam: float | None = None
    r: float | None = None
    p: float | None = None


def fit_tail_model(kind: str, history: Sequence[int] | np.ndarray) -> FittedTailModel:
    """Fit mean/variance on a count history and apply the sensitivity floors.

    Floors: Gaussian variance is raised to at least 1; Poisson and
    negative-binomial means are raised to at least 1; the negative-binomial
    variance is left untouched. Rare syndromes therefore never produce
    near-zero-variance models that alarm on single cases.
    """
    if kind not in TAIL_KINDS:
        raise ValueError(f"unknown tail model kind {kind!r}")
    hist = np.asarray(history, dtype=np.float64)
    if hist.ndim != 1 or hist.size < 2:
        raise ValueError("history must be a 1-d sequence with at least 2 slots")
    mu = float(hist.mean())
    sigma2 = float(hist.var(ddof=1))
    if kind == GAUSSIAN:
        return FittedTailModel(GAUSSIAN, mu, max(sigma2, 1.0))
    mu_f = max(mu, 1.0)
    if kind == POISSON or sigma2 <= mu_f:
        return FittedTailModel(POISSON, mu, sigma2, lam=mu_f)
    r = mu_f * mu_f / (sigma2 - mu_f)
    p = r / (r + mu_f)
    return FittedTailModel(NEGBINOMIAL, mu, sigma2, r=r, p=p)


def gaussian_sf(x: float, mu: float, sigma2: float) -> float:
    return 0.5 * float(erfc((x - mu) / (math.sqrt(sigma2) * _SQRT2)))


def poisson_sf_inclusive(k: int, lam: float) -> float:
    """P(X >= k) for X ~ Poisson(lam); inclusive of the observed count."""
    if k <= 0:
        return 1.0
    return float(gammainc(k, lam))


def negbin_sf_inclusive(k: int, r: float, p: float) -> float:
    """P(X >= k) for pmf(j) = C(j+r-1, j) (1-p)^j p^r."""
    if k <= 0:
        return 1.0
    return float(betainc(k, r, 1.0 - p))


def tail_probability(model: FittedTailModel, observed: int) -> float:
    """One-tailed probability of observing ``observed`` or higher counts."""
    if observed < 0:
        raise ValueError("observed count must be non-negative")
    if model.kind == GAUSSIAN:
        p = gaussian_sf(float(observed), model.mu, model.sigma2)
    elif model.kind == POISSON:
        p = poisson_sf_inclusive(observed, model.lam)
    else:
        p = negbin_sf_inclusive(observed, model.r, model.p)
    return min(max(p, 0.0), 1.0)


@dataclass(frozen=True)
class ContingencyTable2x2:
    """Counts (a, b) for the current slot row and (c, d) for the reference row.

    a = syndrome count in the current slot, b = remaining current records,
    c = syndrome count in the reference set, d = remaining reference records.
    """

    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        if min(self.a, self.b, self.c, self.d) < 0:
            raise ValueError("contingency cells must be non-negative")
        if self.a + self.b <= 0 or self.c + self.d <= 0:
            raise ValueError("both row totals must be positive")


def fisher_exact_p(table: ContingencyTable2x2) -> float:
    """One-tailed (greater) Fisher exact p: P(first-row count >= a) at fixed margins.

    Hypergeometric tail accumulated from log factorials; exact enough for
    score ordering down to extreme tails.
    """
    a, b, c, d = table.a, table.b, table.c, table.d
    n = a + b
    big_k = a + c
    big_n = n + c + d
    if a <= max(0, big_k - (c + d)):
        return 1.0  # tail covers the whole support
    lgf = math.lgamma
    log_norm = lgf(big_n + 1) - lgf(n + 1) - lgf(big_n - n + 1)
    hi = min(n, big_k)
    total = 0.0
    for x in range(hi, a - 1, -1):  # smallest terms first
        lp = (
            lgf(big_k + 1)
            - lgf(x + 1)
            - lgf(big_k - x + 1)
            + lgf(big_n - big_k + 1)
            - lgf(n - x + 1)
            - lgf(big_n - big_k - n + x + 1)
            - log_norm
        )
        total += math.exp(lp)
    return min(max(total, 0.0), 1.0)


def chi_square_p(table: ContingencyTable2x2, one_tailed_increase: bool = True) -> float:
    """Pearson chi-square p-value for a 2x2 table, optionally directed.

    No continuity correction; the statistic is referred to the chi^2_1
    survival function. With ``one_tailed_increase`` the two-tailed p is
    halved when the current-slot proportion exceeds the reference proportion
    and complemented otherwise, so decreases land above 0.5. Tables with a
    zero column margin have no chi-square statistic and fall through to
    Fisher's exact test.
    """
    a, b, c, d = table.a, table.b, table.c, table.d
    if a + c == 0 or b + d == 0:
        return fisher_exact_p(table)
    n1, n2 = a + b, c + d
    big_n = n1 + n2
    num = a * d - b * c
    stat = big_n * num * num / (n1 * n2 * (a + c) * (b + d))
    p2 = min(max(float(erfc(math.sqrt(stat / 2.0))), 0.0), 1.0)
    if not one_tailed_increase:
        return p2
    if a * n2 > c * n1:  # a/n1 > c/n2 without float division
        return p2 / 2.0
    return 1.0 - p2 / 2.0


# ---------------------------------------------------------------------------
# batched tests over many syndromes with shared margins
# ---------------------------------------------------------------------------


def needs_fisher(n: int, m: int, pool_counts: np.ndarray) -> np.ndarray:
    """True where any expected 2x2 cell count is below 5 (small-sample rule).

    Margins: current row n, reference row m, column totals K and N-K.
    """
    big_n = n + m
    k = pool_counts.astype(np.float64)
    min_col = np.minimum(k, big_n - k)
    return (min(n, m) * min_col / big_n < 5.0) | (k <= 0) | (k >= big_n)


def directed_p_table(n: int, m: int, pool_counts: np.ndarray) -> np.ndarray:
    """p-values for every possible current-slot count at fixed margins.

    Entry [a, s] is the one-tailed-increase p for the table
    (a, n-a, K_s-a, m-K_s+a), using Fisher's exact test where any expected
    cell count is below 5 and the chi-square test otherwise. Counts outside
    the feasible range for a syndrome get p = 1. The margins (and hence the
    test choice) depend only on the pool, so the same table serves both the
    observed split and every permutation resplit.
    """
    if n <= 0 or m <= 0:
        raise ValueError("both group sizes must be positive")
    ks = np.asarray(pool_counts, dtype=np.int64)
    n_syn = ks.size
    big_n = n + m
    a_grid = np.arange(n + 1, dtype=np.int64)[:, None]  # (n+1, 1)
    k_row = ks[None, :]
    feasible = (a_grid <= np.minimum(n, k_row)) & (a_grid >= np.maximum(0, k_row - m))

    out = np.ones((n + 1, n_syn), dtype=np.float64)
    fisher_mask = needs_fisher(n, m, ks)

    chi_cols = ~fisher_mask
    if chi_cols.any():
        k = k_row[:, chi_cols].astype(np.float64)
        a = a_grid.astype(np.float64)
        c = k - a
        num = a * (m - k + a) - (n - a) * c
        denom = float(n) * m * k * (big_n - k)
        stat = big_n * num * num / denom
        p2 = erfc(np.sqrt(stat / 2.0))
        increase = a * m > c * n
        p1 = np.where(increase, p2 / 2.0, 1.0 - p2 / 2.0)
        block = np.where(feasible[:, chi_cols], p1, 1.0)
        out[:, chi_cols] = block

    if fisher_mask.any():
        k = k_row[:, fisher_mask]
        lgf = gammaln(np.arange(big_n + 2, dtype=np.float64))
        log_norm = lgf[big_n + 1] - lgf[n + 1] - lgf[big_n - n + 1]
        feas = feasible[:, fisher_mask]
        a = a_grid
        with np.errstate(invalid="ignore"):
            lp = (
                lgf[k + 1]
                - lgf[np.where(feas, a, 0) + 1]
                - lgf[np.where(feas, k - a, 0) + 1]
                + lgf[big_n - k + 1]
                - lgf[np.where(feas, n - a, 0) + 1]
                - lgf[np.where(feas, big_n - k - n + a, 0) + 1]
                - log_norm
            )
        pmf = np.exp(np.where(feas, lp, -np.inf))
        sf = np.cumsum(pmf[::-1], axis=0)[::-1]  # inclusive upper tail
        sf = np.clip(sf, 0.0, 1.0)
        out[:, fisher_mask] = np.where(feas, sf, 1.0)

    return out


def min_p_for_counts(p_table: np.ndarray, counts: np.ndarray) -> float:
    """Minimum per-syndrome p for one current-count vector."""
    a = np.clip(counts, 0, p_table.shape[0] - 1)
    return float(p_table[a, np.arange(p_table.shape[1])].min())


def permutation_min_p(
    current_membership: np.ndarray,
    reference_membership: np.ndarray,
    reps: int,
    rng_seed: int,
    *,
    p_table: np.ndarray | None = None,
) -> float:
    """Permutation-corrected minimum p-value over syndromes.

    ``*_membership`` are boolean record-by-syndrome matrices for the current
    slot and the reference multiset. The pool is re-split ``reps`` times into
    groups of the original sizes, the minimum per-syndrome p is recomputed on
    each resplit, and the add-one corrected fraction
    ``(1 + #{q_i <= q*}) / (1 + reps)`` is returned, so the result is never 0.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    n = current_membership.shape[0]
    m = reference_membership.shape[0]
    if n + m == 0:
        raise ValueError("cannot permute an empty record pool")
    if n == 0 or m == 0:
        # one side empty: every resplit is the observed split
        return 1.0
    pool = np.concatenate([current_membership, reference_membership]).astype(np.int64)
    if p_table is None:
        p_table = directed_p_table(n, m, pool.sum(axis=0))
    q_star = min_p_for_counts(p_table, current_membership.sum(axis=0))

    rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(rng_seed),)))
    n_le = 0
    chunk = 256
    cols = np.arange(p_table.shape[1])
    done = 0
    while done < reps:
        k = min(chunk, reps - done)
        u = rng.random((k, n + m))
        idx = np.argpartition(u, n - 1, axis=1)[:, :n]  # uniform n-subset per rep
        counts = pool[idx].sum(axis=1)  # (k, n_syndromes)
        counts = np.minimum(counts, p_table.shape[0] - 1)
        # q and q_star come from the same lookup table, so ties are exact
        q = p_table[counts, cols[None, :]].min(axis=1)
        n_le += int((q <= q_star).sum())
        done += k
    return (1 + n_le) / (1 + reps)


def records_membership(records, syndromes) -> np.ndarray:
    """Record-by-syndrome match matrix for plain record sequences."""
    from .stream import record_matches

    out = np.zeros((len(records), len(syndromes)), dtype=bool)
    for i, rec in enumerate(records):
        for j, syn in enumerate(syndromes):
            out[i, j] = record_matches(rec, syn)
    return out


def permutation_min_p_records(
    current_records,
    reference_records,
    syndromes,
    reps: int,
    rng_seed: int,
) -> float:
    """Record-level convenience wrapper around :func:`permutation_min_p`."""
    cur = records_membership(tuple(current_records), tuple(syndromes))
    ref = records_membership(tuple(reference_records), tuple(syndromes))
    return permutation_min_p(cur, ref, reps, rng_seed)
