"""Expected order statistics of independent chunk completion times.

The ``D_j`` operator sums, over all ``j``-subsets of paths, the integral of
the product of survival functions.  The ``mu_r`` operator combines them into
the mean of the ``r``-th smallest completion time.
"""
from __future__ import annotations

import itertools
import math
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .distributions import (
    AnalyticCdf,
    ChunkCdf,
    GridSpec,
    PointMassZero,
    ServiceModel,
    _simpson,
    chunk_cdf,
)

MAX_PATHS = 20
_QUAD_POINTS = 2**14


class DivergentIntegralError(ArithmeticError):
    pass


def _is_erlang(F) -> bool:
    return isinstance(F, AnalyticCdf) and F.kind == "erlang"


@lru_cache(maxsize=200_000)
def erlang_product_integral(ks: tuple, rates: tuple) -> float:
    """``int_0^inf prod_i P(Erlang(k_i, rate_i) > x) dx``.

    Expanding each Erlang survival function gives a multinomial sum
    ``(1/L) sum_n sum_{n_i < k_i, sum n_i = n} Mult(n; n_i, rate_i/L)`` with
    ``L = sum rates``.  Paths are folded in one at a time: the counts on the
    new path given ``n`` total trials are binomial, evaluated in log space.
    """
    if any(k <= 0 for k in ks):
        return 0.0
    total_rate = float(sum(rates))
    g = np.ones(ks[0])  # one category: every n < k_1 has probability 1
    acc_rate = rates[0]
    for k, lam in zip(ks[1:], rates[1:]):
        new_rate = acc_rate + lam
        log_p = math.log(lam / new_rate)
        log_q = math.log(acc_rate / new_rate)
        nmax = len(g) - 1 + k - 1
        n = np.arange(nmax + 1)[:, None]
        m = np.arange(k)[None, :]
        prev = n - m
        valid = (prev >= 0) & (prev < len(g))
        logpmf = np.where(
            valid,
            gammaln(n + 1) - gammaln(m + 1) - gammaln(np.maximum(prev, 0) + 1) + m * log_p + prev * log_q,
            -np.inf,
        )
        g = (np.exp(logpmf) * g[np.clip(prev, 0, len(g) - 1)]).sum(axis=1)
        acc_rate = new_rate
    return float(g.sum()) / total_rate


def _numeric_product_integral(cdfs: Sequence[ChunkCdf]) -> float:
    upper = min(F.upper() for F in cdfs)
    if not math.isfinite(upper):
        raise DivergentIntegralError("a chunk CDF never approaches 1")
    x = np.linspace(0.0, upper, _QUAD_POINTS + 1)
    y = np.ones_like(x)
    for F in cdfs:
        y *= F.sf(x)
    if y[-1] > 1e-6:
        raise DivergentIntegralError(f"survival product still {y[-1]:.3g} at the support bound {upper:.6g}")
    return _simpson(y, x[1] - x[0])


def product_survival_integral(cdfs: Sequence[ChunkCdf]) -> float:
    """``int_0^inf prod_i (1 - F_i(x)) dx`` for one subset of paths."""
    if any(isinstance(F, PointMassZero) for F in cdfs):
        return 0.0
    if all(_is_erlang(F) for F in cdfs):
        ks = tuple(int(F.shape) for F in cdfs)
        rates = tuple(float(F.rate) for F in cdfs)
        return erlang_product_integral(ks, rates)
    if len(cdfs) == 1:
        return float(cdfs[0].mean)
    return _numeric_product_integral(cdfs)


def _check_size(F: Sequence[ChunkCdf]):
    if not 1 <= len(F) <= MAX_PATHS:
        raise ValueError(f"CdfVector must have 1..{MAX_PATHS} entries (subset enumeration), got {len(F)}")


def d_operator(j: int, F: Sequence[ChunkCdf]) -> float:
    """Sum over all ``j``-subsets ``S`` of ``int prod_{i in S} (1 - F_i)``."""
    _check_size(F)
    n = len(F)
    if not 1 <= j <= n:
        raise ValueError(f"j must lie in [1, {n}], got {j}")
    return sum(product_survival_integral([F[i] for i in S]) for S in itertools.combinations(range(n), j))


def mu_operator(r: int, F: Sequence[ChunkCdf]) -> float:
    """Mean of the ``r``-th smallest of independent variables with CDFs ``F``."""
    _check_size(F)
    n = len(F)
    if not 1 <= r <= n:
        raise ValueError(f"r must lie in [1, {n}], got {r}")
    total = 0.0
    for j in range(n - r + 1, n + 1):
        sign = -1.0 if (j - (n - r - 1)) % 2 else 1.0
        total += sign * math.comb(j - 1, n - r) * d_operator(j, F)
    return total


def cdf_vector(chunks: Sequence[int], models: Sequence[ServiceModel], grid: GridSpec | None = None) -> list:
    """Chunk CDFs for an allocation; zero entries become a point mass at 0."""
    if len(chunks) != len(models):
        raise ValueError(f"{len(chunks)} chunk sizes for {len(models)} paths")
    return [PointMassZero() if k == 0 else chunk_cdf(mod, k, grid) for k, mod in zip(chunks, models)]


def mean_upload_latency(alloc: Sequence[int], models: Sequence[ServiceModel], grid: GridSpec | None = None) -> float:
    """Mean time until every chunk of the allocation has arrived."""
    if any(k < 0 for k in alloc):
        raise ValueError(f"allocation entries must be >= 0: {tuple(alloc)}")
    if len(alloc) != len(models):
        raise ValueError(f"{len(alloc)} chunk sizes for {len(models)} paths")
    active = [(k, m) for k, m in zip(alloc, models) if k > 0]
    if not active:
        return 0.0
    F = [chunk_cdf(m, k, grid) for k, m in active]
    return mu_operator(len(F), F)


def offending_subset(chunks: Sequence[int], r: int, size: int):
    """An ``r``-subset whose chunks sum below ``size``, or None."""
    order = sorted(range(len(chunks)), key=lambda i: chunks[i])[:r]
    if sum(chunks[i] for i in order) < size:
        return tuple(sorted(order))
    return None


def eta_r(chunks: Sequence[int], models: Sequence[ServiceModel], r: int, size: int, grid: GridSpec | None = None) -> float:
    """Mean latency of an (N, r)-allocation: the ``r``-th arrival completes the data."""
    n = len(chunks)
    if not 1 <= r <= n:
        raise ValueError(f"r must lie in [1, {n}], got {r}")
    bad = [i for i, k in enumerate(chunks) if not 1 <= k <= size]
    if bad:
        raise ValueError(f"chunk sizes must lie in [1, {size}]; offending paths {bad}")
    subset = offending_subset(chunks, r, size)
    if subset is not None:
        raise ValueError(
            f"{tuple(chunks)} is not an ({n},{r})-allocation for size {size}: "
            f"paths {subset} carry only {sum(chunks[i] for i in subset)} packets"
        )
    return mu_operator(r, cdf_vector(chunks, models, grid))
