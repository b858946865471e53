"""Statistics for dependence-adjusted mean-change detection.

Everything here is computed from a :class:`~hdcp.core.GramSummary`, never
from the raw observations: with n observations of dimension p, one O(n^2 p)
pass builds the inner-product matrices and all statistics afterwards cost
O(n^2) to O(n^2 M^2) regardless of p.

The per-split statistic ``l_trace`` contrasts the mean before and after each
candidate split and subtracts a correction that removes the bias caused by
serial correlation up to lag M. Its null variance involves the unknown
trace products tr{C(h1) C(h2)} of the lag-h autocovariances, estimated by a
four-term U-statistic over index tuples forced to be more than M apart
(``trace_product_estimate``).

Conventions, fixed for the whole package:

- indicator I(a, b) is 1 iff a == b; I(predicate) is 1 iff it holds;
- any contrast-matrix lookup outside [1, n] evaluates to zero;
- in the separated sums, the indices of a term form groups (a base index
  together with its shifted mate), and every pair of indices from
  different groups must be more than M apart in absolute value; shifted
  subscripts must also stay inside [1, n]. Group members themselves are at
  most M apart by definition, which is why they are exempt.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .core import (
    DependenceWindow,
    DimensionTooSmall,
    EmptySumRange,
    GramSummary,
    IndexOutOfRange,
    SeriesMatrix,
    SingularDesign,
    _accumulator_dtype,
)

_COND_LIMIT = 1e12


@dataclass(frozen=True)
class BoundaryWeights:
    """Weight vector of length M + 1 pairing each lag with one split t.

    ``values[0]`` is exactly 1; the remaining entries shrink near the series
    boundary and satisfy the split symmetry t <-> n - t exactly.
    """

    values: np.ndarray


@dataclass(frozen=True)
class DependenceDesign:
    """(M+1) x (M+1) lag design matrix for a series of length n.

    Invertibility is verified at construction; systems are solved through
    the stored LU factorization, never an explicit inverse.
    """

    matrix: np.ndarray

    def __post_init__(self) -> None:
        cond = np.linalg.cond(self.matrix)
        if not np.isfinite(cond) or cond > _COND_LIMIT:
            raise SingularDesign(
                f"lag design matrix numerically singular (cond={cond:.3e}); "
                "n is too small relative to M"
            )
        object.__setattr__(self, "_lu", lu_factor(self.matrix))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return lu_solve(self._lu, np.asarray(rhs, dtype=np.float64))

    def solve_transposed(self, rhs: np.ndarray) -> np.ndarray:
        return lu_solve(self._lu, np.asarray(rhs, dtype=np.float64), trans=1)


@dataclass(frozen=True)
class LagTraceVector:
    """Vector of centered lagged inner-product sums, lags 0..M."""

    values: np.ndarray


@dataclass(frozen=True)
class ContrastMatrix:
    """n x n coefficient matrix of a split statistic as a quadratic form.

    Holds either the matrix of one split t or the elementwise sum over all
    splits. Lookups outside [1, n] are zero by convention.
    """

    values: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def extended_lookup(self, i, j):
        """Entry at 1-based (i, j), zero whenever i or j falls outside [1, n]."""
        i = np.asarray(i)
        j = np.asarray(j)
        n = self.n
        inside = (i >= 1) & (i <= n) & (j >= 1) & (j <= n)
        ii = np.clip(i, 1, n) - 1
        jj = np.clip(j, 1, n) - 1
        out = np.where(inside, self.values[ii, jj], 0.0)
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class TraceTable:
    """Estimated tr{C(h1) C(h2)} on the lag grid, mirrored across orbits.

    By construction ``est(h1, h2) == est(h2, h1) == est(-h1, -h2)``: one
    representative per orbit is computed, the rest are copies.
    """

    m: int
    values: np.ndarray

    def est(self, h1: int, h2: int) -> float:
        if abs(h1) > self.m or abs(h2) > self.m:
            raise IndexOutOfRange(f"lag pair ({h1}, {h2}) outside window M={self.m}")
        return float(self.values[h1 + self.m, h2 + self.m])


class VarianceResult(NamedTuple):
    value: float
    degenerate: bool


def compute_gram(series: SeriesMatrix) -> GramSummary:
    """Reduce a series to its raw and globally centered inner products.

    The centered matrix uses the grand mean of the series that was passed
    in, so segment-local calls center on segment-local means.
    """
    x = series.values
    n, p = x.shape
    raw = x @ x.T
    raw = (raw + raw.T) / 2.0
    row_sums = raw.sum(axis=1)
    total = float(row_sums.sum())
    # build the mean adjustment as one exactly symmetric matrix so the
    # centered Gram is bitwise symmetric
    scaled = row_sums / n
    adjustment = scaled[:, None] + scaled[None, :]
    centered = (raw - adjustment) + total / n**2

    acc = _accumulator_dtype(n, p)
    raw_prefix = np.zeros((n + 1, n + 1), dtype=acc)
    raw_prefix[1:, 1:] = raw.astype(acc).cumsum(axis=0).cumsum(axis=1)
    centered_prefix = np.zeros((n + 1, n + 1), dtype=acc)
    centered_prefix[1:, 1:] = centered.astype(acc).cumsum(axis=0).cumsum(axis=1)
    return GramSummary(
        raw=raw,
        centered=centered,
        raw_prefix=raw_prefix,
        centered_prefix=centered_prefix,
        row_sums=row_sums,
        total_sum=total,
    )


def _f_columns(n: int, t: np.ndarray, m: int) -> np.ndarray:
    """Boundary weights for an array of splits t; shape (len(t), m + 1)."""
    t = np.asarray(t, dtype=np.int64)
    out = np.ones((t.shape[0], m + 1), dtype=np.float64)
    nt = n - t
    for i in range(2, m + 2):
        a = np.where(t + 1 > i, nt * (t - i + 1) / (n * t), 0.0)
        b = np.where(nt + 1 > i, t * (nt - i + 1) / (n * nt), 0.0)
        # count of l in [1, i-1] with l <= t and i - l <= n - t
        lo = np.maximum(1, i - nt)
        hi = np.minimum(i - 1, t)
        cnt = np.maximum(0, hi - lo + 1)
        out[:, i - 1] = 2.0 * (a + b - cnt / n)
    return out


def f_vector(n: int, t: int, m: int) -> BoundaryWeights:
    """Boundary weight vector for split t in a series of length n.

    Parameters
    ----------
    n : series length
    t : candidate split, 1 <= t <= n - 1
    m : dependence order

    Returns
    -------
    BoundaryWeights
        Length m + 1; first entry exactly 1. Satisfies
        ``f_vector(n, t, m) == f_vector(n, n - t, m)`` entrywise.
    """
    if not 1 <= t <= n - 1:
        raise IndexOutOfRange(f"split t={t} outside [1, {n - 1}]")
    return BoundaryWeights(_f_columns(n, np.array([t]), m)[0])


def _count_absdiff(a_max: int, n: int, d: int) -> int:
    # pairs (a, b) with a in [1, a_max], b in [1, n], |a - b| == d
    if d == 0:
        return a_max
    return max(0, a_max - d) + max(0, min(a_max, n - d))


def _count_shifted(i: int, n: int, d: int) -> int:
    # pairs (a, b) with a in [i, n], b in [1, n], |a - b| == d
    if d == 0:
        return n - i + 1
    below = max(0, n - max(i, d + 1) + 1)  # b = a - d >= 1
    above = max(0, n - d - i + 1)          # b = a + d <= n
    return below + above


def F_matrix(n: int, m: int) -> DependenceDesign:
    """Lag design matrix coupling the boundary weights to the lag sums.

    Requires ``n >= 2(m + 2)``. For m = 0 this reduces to the 1 x 1 matrix
    ``[1 - 1/n]`` exactly. The pair-count sums in each entry are evaluated
    in closed form, so construction is O(m^2).
    """
    if n < 2 * (m + 2):
        raise DimensionTooSmall(f"n={n} too small for M={m} (needs n >= {2 * (m + 2)})")
    F = np.zeros((m + 1, m + 1), dtype=np.float64)
    for i in range(1, m + 2):
        for j in range(1, m + 2):
            d = j - 1
            counts = _count_absdiff(n - i + 1, n, d) + _count_shifted(i, n, d)
            F[i - 1, j - 1] = (
                (1 - (i - 1) / n) * (1.0 if i == j else 0.0)
                + (1 - (i - 1) / n) * (1 - (j - 1) / n) * (2 - (1.0 if j == 1 else 0.0)) / n
                - counts / n**2
            )
    return DependenceDesign(F)


def V_vector(gram: GramSummary, m: int) -> LagTraceVector:
    """Centered lag sums: entry k averages products at lag k, k = 0..m."""
    n = gram.n
    if m >= n:
        raise DimensionTooSmall(f"lag order M={m} needs n > M, got n={n}")
    vals = np.array(
        [float(np.trace(gram.centered, offset=k)) / n for k in range(m + 1)]
    )
    return LagTraceVector(vals)


def l_trace(gram: GramSummary, window: DependenceWindow) -> np.ndarray:
    """Dependence-corrected split statistics for every t in 1..n-1.

    Entry t - 1 contrasts the means of the first t and last n - t
    observations and subtracts the serial-correlation correction. All n - 1
    values come from block prefix sums of the raw Gram matrix in O(1) per
    split after the O(n^2) reduction; the lag design system is solved once.
    """
    n = gram.n
    m = window.m
    design = F_matrix(n, m)
    v = V_vector(gram, m)
    x = design.solve(v.values)

    P = gram.raw_prefix
    t = np.arange(1, n)
    ptt = P[t, t]
    ptn = P[t, n]
    pnn = P[n, n]
    within_lo = ptt
    cross = ptn - ptt
    within_hi = pnn - 2 * ptn + ptt
    nt = (n - t).astype(P.dtype)
    tt = t.astype(P.dtype)
    n2 = float(n) ** 2
    term1 = (nt / (tt * n2)) * within_lo - (2.0 / n2) * cross + (tt / (nt * n2)) * within_hi

    correction = _f_columns(n, t, m) @ x / n
    return np.asarray(term1, dtype=np.float64) - correction


def _contrast_block(n: int, t: int) -> np.ndarray:
    idx = np.arange(1, n + 1)
    le = (idx <= t).astype(np.float64)
    gt = 1.0 - le
    return (
        (n - t) / t * np.outer(le, le)
        - 2.0 * np.outer(le, gt)
        + t / (n - t) * np.outer(gt, gt)
    )


def _apply_lag_terms(B: np.ndarray, coeff: np.ndarray, n: int) -> None:
    # subtracts sum_h coeff[h] * {I(i-j==h) - (I(j>=h+1)+I(j<=n-h))/n + (n-h)/n^2}
    j = np.arange(1, n + 1)
    for h in range(coeff.shape[0]):
        c = coeff[h]
        rows = np.arange(h, n)
        B[rows, rows - h] -= c
        col_term = ((j >= h + 1).astype(np.float64) + (j <= n - h)) / n
        B += c * col_term[None, :]
        B -= c * (n - h) / n**2


def b_matrix(n: int, t: int, window: DependenceWindow) -> ContrastMatrix:
    """Quadratic-form coefficients of the split-t statistic.

    ``l_trace`` at split t equals exactly (1/n^2) * sum_{i,j} B(i, j) x_i'x_j,
    which is the identity the variance calculus rests on. The matrix is not
    symmetric: the lag indicators run one-sided.
    """
    if not 1 <= t <= n - 1:
        raise IndexOutOfRange(f"split t={t} outside [1, {n - 1}]")
    design = F_matrix(n, window.m)
    f = f_vector(n, t, window.m)
    g = design.solve_transposed(f.values)
    B = _contrast_block(n, t)
    _apply_lag_terms(B, g, n)
    return ContrastMatrix(B)


def b_aggregate(n: int, window: DependenceWindow) -> ContrastMatrix:
    """Elementwise sum of the split contrast matrices over t = 1..n-1.

    Accumulated in closed form: the three block terms reduce to harmonic
    number differences in max(i, j) and min(i, j), and the lag terms factor
    through the summed boundary weights, so the whole matrix costs
    O(n^2 (M+1)) instead of n - 1 full constructions.
    """
    m = window.m
    design = F_matrix(n, m)
    t = np.arange(1, n)
    f_sum = _f_columns(n, t, m).sum(axis=0)
    g_sum = design.solve_transposed(f_sum)

    harm = np.zeros(n, dtype=np.float64)
    harm[1:] = np.cumsum(1.0 / np.arange(1, n))
    ii = np.arange(1, n + 1)[:, None]
    jj = np.arange(1, n + 1)[None, :]
    m_hi = np.maximum(ii, jj)
    m_lo = np.minimum(ii, jj)
    upper = n * (harm[n - 1] - harm[m_hi - 1]) - (n - m_hi)
    lower = n * (harm[n - 1] - harm[n - m_lo]) - (m_lo - 1)
    cross = -2.0 * np.maximum(0, jj - ii)
    B = upper + cross + lower
    _apply_lag_terms(B, g_sum, n)
    return ContrastMatrix(B)


class _SeparatedSums:
    """Shared prefix structures for the separated trace-product sums.

    One instance serves every (h1, h2) pair of a lag window: the pair term
    is O(n^2) per pair, the triple term O(n^2) per distinct lag, and the
    quadruple term O(n^2 M) once.
    """

    _CHUNK_ELEMENTS = 500_000

    def __init__(self, raw: np.ndarray, m: int):
        n = raw.shape[0]
        self.n = n
        self.m = m
        self.raw = raw
        self.col_prefix = np.zeros((n + 1, n), dtype=np.float64)
        self.col_prefix[1:] = raw.cumsum(axis=0)
        self.row_sums = raw.sum(axis=1)
        self.row_sum_prefix = np.concatenate([[0.0], self.row_sums.cumsum()])
        self.total = float(self.row_sums.sum())
        self.prefix2 = np.zeros((n + 1, n + 1), dtype=np.float64)
        self.prefix2[1:, 1:] = raw.cumsum(axis=0).cumsum(axis=1)

        idx = np.arange(1, n + 1)
        lo = np.maximum(idx - m, 1)
        hi = np.minimum(idx + m, n)
        row_prefix = np.concatenate([np.zeros((n, 1)), raw.cumsum(axis=1)], axis=1)
        self.band_row = row_prefix[np.arange(n), hi] - row_prefix[np.arange(n), lo - 1]
        self.band_row_prefix = np.concatenate([[0.0], self.band_row.cumsum()])
        self.band_len = hi - lo + 1
        self.band_len_prefix = np.concatenate([[0], self.band_len.cumsum()])
        self.band_total = float(self.band_row.sum())
        self.band_count = int(self.band_len.sum())

        self.diag_prefix = {}
        for d in range(-m, m + 1):
            diag = np.zeros(n, dtype=np.float64)
            s = np.arange(max(1, 1 - d), min(n, n - d) + 1)
            diag[s - 1] = raw[s - 1, s - 1 + d]
            self.diag_prefix[d] = np.concatenate([[0.0], diag.cumsum()])

    @staticmethod
    def _interval_sum(prefix: np.ndarray, lo, hi):
        lo_i = np.clip(lo - 1, 0, prefix.shape[0] - 1)
        hi_i = np.clip(hi, 0, prefix.shape[0] - 1)
        return np.where(lo <= hi, prefix[hi_i] - prefix[lo_i], 0.0)

    @staticmethod
    def _interval_len(lo, hi):
        return np.maximum(0, hi - lo + 1)

    def _col_range(self, cols, lo, hi):
        n = self.n
        lo_c = np.maximum(lo, 1)
        hi_c = np.minimum(hi, n)
        lo_i = np.clip(lo_c - 1, 0, n)
        hi_i = np.clip(hi_c, 0, n)
        return np.where(lo_c <= hi_c, self.col_prefix[hi_i, cols] - self.col_prefix[lo_i, cols], 0.0)

    def pair_term(self, h1: int, h2: int) -> tuple[float, int]:
        """sum of x_{t+h2}'x_s * x_{s+h1}'x_t over separated groups, with count.

        The groups {s, s+h1} and {t, t+h2} must be more than M apart
        elementwise; with d = s - t that forbids |d|, |d - h2|, |d + h1|
        and |d + h1 - h2| from being <= M.
        """
        n, m = self.n, self.m
        s_lo, s_hi = max(1, 1 - h1), min(n, n - h1)
        t_lo, t_hi = max(1, 1 - h2), min(n, n - h2)
        if s_lo > s_hi or t_lo > t_hi:
            return 0.0, 0
        s0 = np.arange(s_lo - 1, s_hi)
        t0 = np.arange(t_lo - 1, t_hi)
        d = s0[:, None] - t0[None, :]
        sep = (
            (np.abs(d) > m)
            & (np.abs(d - h2) > m)
            & (np.abs(d + h1) > m)
            & (np.abs(d + h1 - h2) > m)
        )
        left = self.raw[np.ix_(t0 + h2, s0)].T
        right = self.raw[np.ix_(s0 + h1, t0)]
        total = float(np.sum(left * right, where=sep))
        return total, int(sep.sum())

    def triple_term(self, h: int) -> tuple[float, int]:
        """sum of x_r'x_s * x_{s+h}'x_t over separated groups {r}, {s, s+h}, {t}.

        For each admissible (s, t) the inner r-sum removes the exclusion
        window around the s-group (one merged interval, since |h| <= M)
        and around t, via column prefix sums.
        """
        n, m = self.n, self.m
        s_lo, s_hi = max(1, 1 - h), min(n, n - h)
        if s_lo > s_hi:
            return 0.0, 0
        s0 = np.arange(s_lo - 1, s_hi)
        s1 = s0 + 1
        t1 = np.arange(1, n + 1)
        d = s1[:, None] - t1[None, :]
        sep = (np.abs(d) > m) & (np.abs(d + h) > m)

        cols = s0[:, None]
        sw_lo = s1 + min(h, 0) - m
        sw_hi = s1 + max(h, 0) + m
        win_s = self._col_range(s0, sw_lo, sw_hi)[:, None] * np.ones((1, n))
        win_t = self._col_range(cols, (t1 - m)[None, :], (t1 + m)[None, :])
        ov_lo = np.maximum(sw_lo[:, None], (t1 - m)[None, :])
        ov_hi = np.minimum(sw_hi[:, None], (t1 + m)[None, :])
        win_ov = self._col_range(cols, ov_lo, ov_hi)
        inner = self.row_sums[s0][:, None] - (win_s + win_t - win_ov)

        len_s = np.minimum(sw_hi, n) - np.maximum(sw_lo, 1) + 1
        len_t = np.minimum(t1 + m, n) - np.maximum(t1 - m, 1) + 1
        ov_len = self._interval_len(np.maximum(ov_lo, 1), np.minimum(ov_hi, n))
        inner_cnt = n - (len_s[:, None] + len_t[None, :] - ov_len)

        outer = self.raw[np.ix_(s0 + h, t1 - 1)]
        total = float(np.sum(outer * inner, where=sep))
        count = int(np.sum(inner_cnt, where=sep))
        return total, count

    def _rect(self, rlo, rhi, clo, chi):
        P = self.prefix2
        n = self.n
        r0 = np.clip(rlo - 1, 0, n)
        r1 = np.clip(rhi, 0, n)
        c0 = np.clip(clo - 1, 0, n)
        c1 = np.clip(chi, 0, n)
        val = P[r1, c1] - P[r0, c1] - P[r1, c0] + P[r0, c0]
        return np.where((rlo <= rhi) & (clo <= chi), val, 0.0)

    def quad_term(self) -> tuple[float, int]:
        """sum over pairwise-separated (q, r, s, t) of x_q'x_r * x_s'x_t.

        For each (q, r) the admissible (s, t) mass is the grand total minus
        the rows/columns of the forbidden windows around q and r, corrected
        by window-block and within-band terms, all via prefix sums.
        """
        n, m = self.n, self.m
        total = 0.0
        count = 0
        r1 = np.arange(1, n + 1)
        lo_r = np.maximum(r1 - m, 1)
        hi_r = np.minimum(r1 + m, n)
        chunk = max(1, self._CHUNK_ELEMENTS // n)
        for start in range(0, n, chunk):
            q1 = np.arange(start + 1, min(start + chunk, n) + 1)[:, None]
            sep = np.abs(q1 - r1[None, :]) > m
            lo_q = np.maximum(q1 - m, 1)
            hi_q = np.minimum(q1 + m, n)

            overlap = np.maximum(lo_q, lo_r) <= np.minimum(hi_q, hi_r)
            a_lo = np.where(overlap, np.minimum(lo_q, lo_r), lo_q)
            a_hi = np.where(overlap, np.maximum(hi_q, hi_r), hi_q)
            b_lo = np.where(overlap, 1, lo_r * np.ones_like(q1))
            b_hi = np.where(overlap, 0, hi_r * np.ones_like(q1))

            len_f = self._interval_len(a_lo, a_hi) + self._interval_len(b_lo, b_hi)
            row_f = self._interval_sum(self.row_sum_prefix, a_lo, a_hi) + self._interval_sum(
                self.row_sum_prefix, b_lo, b_hi
            )
            band_row_f = self._interval_sum(self.band_row_prefix, a_lo, a_hi) + self._interval_sum(
                self.band_row_prefix, b_lo, b_hi
            )
            band_len_f = self._interval_sum(self.band_len_prefix, a_lo, a_hi) + self._interval_sum(
                self.band_len_prefix, b_lo, b_hi
            )

            intervals = ((a_lo, a_hi), (b_lo, b_hi))
            block = 0.0
            for ulo, uhi in intervals:
                for vlo, vhi in intervals:
                    block = block + self._rect(ulo, uhi, vlo, vhi)

            band_both = 0.0
            band_both_cnt = 0.0
            for d in range(-m, m + 1):
                v_lo, v_hi = max(1, 1 - d), min(n, n - d)
                for ulo, uhi in intervals:
                    for vlo, vhi in intervals:
                        p_lo = np.maximum(np.maximum(ulo, vlo - d), v_lo)
                        p_hi = np.minimum(np.minimum(uhi, vhi - d), v_hi)
                        band_both = band_both + self._interval_sum(
                            self.diag_prefix[d], p_lo, p_hi
                        )
                        band_both_cnt = band_both_cnt + self._interval_len(p_lo, p_hi)

            rect_part = self.total - 2.0 * row_f + block
            rect_cnt = (n - len_f) ** 2
            band_part = self.band_total - 2.0 * band_row_f + band_both
            band_cnt = self.band_count - 2.0 * band_len_f + band_both_cnt
            inner = rect_part - band_part
            inner_cnt = rect_cnt - band_cnt

            g_rows = self.raw[start : start + q1.shape[0], :]
            total += float(np.sum(g_rows * inner, where=sep))
            count += int(round(float(np.sum(inner_cnt, where=sep))))
        return total, count


def _combine_terms(
    parts: tuple[tuple[float, int], ...], h1: int, h2: int
) -> float:
    names = ("pair", "first triple", "second triple", "quadruple")
    signs = (1.0, -1.0, -1.0, 1.0)
    est = 0.0
    for (value, count), sign, name in zip(parts, signs, names):
        if count == 0:
            raise EmptySumRange(
                f"{name} term of the trace-product estimator has no admissible "
                f"index tuples at (h1={h1}, h2={h2}); the series is too short "
                "for this separation"
            )
        est += sign * value / count
    return est


def trace_product_estimate(
    gram: GramSummary, h1: int, h2: int, window: DependenceWindow
) -> float:
    """Estimate tr{C(h1) C(h2)} from raw (uncentered) inner products.

    Four averaged sums over index tuples more than M apart: the pair term
    carries the signal, the two triple terms remove first-moment
    contamination, and the quadruple term adds back the squared-mean mass.
    The estimate is unbiased for constant means but can be negative in
    finite samples.

    Raises ``EmptySumRange`` when any term has no admissible tuples.
    """
    m = window.m
    if abs(h1) > m or abs(h2) > m:
        raise IndexOutOfRange(f"lags ({h1}, {h2}) outside window M={m}")
    ctx = _SeparatedSums(gram.raw, m)
    parts = (
        ctx.pair_term(h1, h2),
        ctx.triple_term(h1),
        ctx.triple_term(h2),
        ctx.quad_term(),
    )
    return _combine_terms(parts, h1, h2)


def build_trace_table(gram: GramSummary, window: DependenceWindow) -> TraceTable:
    """Fill the lag grid of trace-product estimates.

    Only canonical orbit representatives are computed; the mirrors
    (h2, h1) and (-h1, -h2) are copied, so the table is symmetric by
    construction. Shared sums are reused across the grid.
    """
    m = window.m
    ctx = _SeparatedSums(gram.raw, m)
    quad = ctx.quad_term()
    triples = {h: ctx.triple_term(h) for h in range(-m, m + 1)}
    values = np.full((2 * m + 1, 2 * m + 1), np.nan)
    for h1 in range(-m, m + 1):
        for h2 in range(-m, m + 1):
            orbit = ((h1, h2), (h2, h1), (-h1, -h2), (-h2, -h1))
            if (h1, h2) != min(orbit):
                continue
            est = _combine_terms(
                (ctx.pair_term(h1, h2), triples[h1], triples[h2], quad), h1, h2
            )
            for a, b in orbit:
                values[a + m, b + m] = est
    return TraceTable(m=m, values=values)


def _shift_dot(src: np.ndarray, dst: np.ndarray, dr: int, dc: int) -> float:
    # sum over i, j of src[i, j] * dst[i + dr, j + dc], zero outside the grid
    n = src.shape[0]
    r0, r1 = max(0, -dr), n - max(0, dr)
    c0, c1 = max(0, -dc), n - max(0, dc)
    if r0 >= r1 or c0 >= c1:
        return 0.0
    return float(
        np.vdot(src[r0:r1, c0:c1], dst[r0 + dr : r1 + dr, c0 + dc : c1 + dc])
    )


def _contrast_cross_products(values: np.ndarray, m: int) -> np.ndarray:
    """For each lag pair, sum_{i,j} B(i,j) {B(i+h2, j-h1) + B(j-h1, i+h2)}."""
    out = np.zeros((2 * m + 1, 2 * m + 1), dtype=np.float64)
    transposed = np.ascontiguousarray(values.T)
    for h1 in range(-m, m + 1):
        for h2 in range(-m, m + 1):
            out[h1 + m, h2 + m] = _shift_dot(values, values, h2, -h1) + _shift_dot(
                values, transposed, h2, -h1
            )
    return out


def variance_estimate(
    B: ContrastMatrix, table: TraceTable, n: int, window: DependenceWindow
) -> VarianceResult:
    """Plug-in null variance of a split statistic (or of their sum).

    Pass the single-split contrast matrix for a per-split variance, or the
    aggregated matrix for the variance of the summed statistic. Out-of-grid
    contrast lookups are zero; cost is O(n^2 M^2).

    The trace-product estimates can be negative in finite samples, so the
    result is floored at a tiny positive epsilon scaled by the contrast
    mass; a floored value is flagged degenerate rather than raised, and
    downstream tests report non-rejection.
    """
    m = window.m
    cross = _contrast_cross_products(B.values, m)
    value = float((cross * table.values).sum()) / float(n) ** 4
    floor = 1e-12 * (float((B.values**2).sum()) / float(n) ** 4 + 1.0)
    if not np.isfinite(value) or value <= floor:
        return VarianceResult(floor, True)
    return VarianceResult(value, False)
