"""Allocation and replication for a single upload of ``K`` packets over ``N`` paths.

Allocations are plain tuples of non-negative packet counts.  An
``(N, r)``-allocation is a tuple of counts in ``[1, K]`` such that any ``r``
chunks together carry at least ``K`` packets.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterator, NamedTuple, Sequence

import numpy as np
from scipy.special import gammaln

from . import order_stats
from .distributions import Exponential, GridSpec, ServiceModel, mean_rate
from .special import betainc_reg

MAX_CANDIDATES = 200_000
MAX_SEARCH_PATHS = 5


class SearchSpaceError(ValueError):
    pass


def compositions(total: int, parts: int) -> Iterator[tuple]:
    """All non-negative integer vectors of length ``parts`` summing to ``total``, lexicographic."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in compositions(total - first, parts - 1):
            yield (first,) + rest


def n_compositions(total: int, parts: int) -> int:
    return math.comb(total + parts - 1, parts - 1)


def round_to_allocation(x: Sequence[float], size: int) -> tuple:
    """Floor the first ``N-1`` entries of ``x*size``; the last path takes the remainder."""
    x = np.asarray(x, dtype=float)
    head = np.floor(x[:-1] * size + 1e-9).astype(int)
    head = np.clip(head, 0, size)
    # guard against float overshoot of the floored head
    while head.sum() > size:
        head[np.argmax(head)] -= 1
    return tuple(int(v) for v in head) + (int(size - head.sum()),)


def proportional_allocation(size: int, mean_rates: Sequence[float]) -> tuple:
    """Chunk sizes proportional to the paths' packet rates."""
    rates = np.asarray(mean_rates, dtype=float)
    if np.any(rates <= 0):
        raise ValueError("path rates must be positive")
    return round_to_allocation(rates / rates.sum(), size)


def proportional_for_models(size: int, models: Sequence[ServiceModel]) -> tuple:
    return proportional_allocation(size, [mean_rate(m) for m in models])


# -- exponential closed forms -------------------------------------------------


def psi_exponential(alloc: Sequence[int], rates: Sequence[float]) -> float:
    """Mean upload latency for exponential packet delays by inclusion-exclusion.

    Sums, over non-empty path subsets ``S``, the multi-index series
    ``prod(rate_i^n_i / n_i!) * (sum n_i)! / (sum rate_i)^(sum n_i + 1)``
    with every term formed in log space.
    """
    if len(alloc) != len(rates):
        raise ValueError("allocation and rates differ in length")
    if any(r <= 0 for r in rates):
        raise ValueError("rates must be positive")
    n = len(alloc)
    total = 0.0
    for size in range(1, n + 1):
        sign = 1.0 if size % 2 else -1.0
        for S in itertools.combinations(range(n), size):
            ks = [alloc[i] for i in S]
            if min(ks) == 0:
                continue
            total += sign * _subset_series(ks, [rates[i] for i in S])
    return total


def _subset_series(ks: list, rates: list) -> float:
    lam = float(sum(rates))
    log_ratio = [math.log(r / lam) for r in rates]
    axes = [np.arange(k) for k in ks]
    # keep the first axis as an explicit loop when the grid gets large
    if math.prod(ks) > 2_000_000 and len(ks) > 1:
        return sum(
            _subset_series_fixed(n0, ks[1:], log_ratio, lam) for n0 in range(ks[0])
        )
    grids = np.ix_(*axes)
    n_sum = sum(grids)
    log_term = gammaln(n_sum + 1) - sum(gammaln(g + 1) for g in grids)
    log_term = log_term + sum(g * lr for g, lr in zip(grids, log_ratio))
    return float(np.exp(log_term).sum()) / lam


def _subset_series_fixed(n0: int, ks: list, log_ratio: list, lam: float) -> float:
    grids = np.ix_(*[np.arange(k) for k in ks])
    n_sum = n0 + sum(grids)
    log_term = gammaln(n_sum + 1) - gammaln(n0 + 1) - sum(gammaln(g + 1) for g in grids)
    log_term = log_term + n0 * log_ratio[0] + sum(g * lr for g, lr in zip(grids, log_ratio[1:]))
    return float(np.exp(log_term).sum()) / lam


def _psi_step_terms(k1: int, size: int, slow: float, fast: float) -> tuple:
    """``(I_p(k1, K-k1)/fast, I_q(K-k1-1, k1+1)/slow)``; psi(k1) - psi(k1+1) is their difference."""
    p = slow / (slow + fast)
    q = fast / (slow + fast)
    return betainc_reg(k1, size - k1, p) / fast, betainc_reg(size - k1 - 1, k1 + 1, q) / slow


def optimal_two_path_exponential(size: int, rate1: float, rate2: float) -> tuple:
    """Optimal split of ``size`` packets over two exponential paths.

    Starts with everything on the faster path and moves packets to the slower
    one while doing so does not increase the mean latency, judged by the
    incomplete-beta comparison.  Exact ties keep walking.
    """
    if size < 1 or rate1 <= 0 or rate2 <= 0:
        raise ValueError("need size >= 1 and positive rates")
    swap = rate1 > rate2
    slow, fast = (rate2, rate1) if swap else (rate1, rate2)
    k = 0
    while k < size:
        lhs, rhs = _psi_step_terms(k, size, slow, fast)
        if abs(lhs - rhs) <= 1e-9 * max(lhs, rhs):
            here = psi_exponential((k, size - k), (slow, fast))
            there = psi_exponential((k + 1, size - k - 1), (slow, fast))
            if here - there < -1e-12 * here:
                break
        elif lhs < rhs:
            break
        k += 1
    return (size - k, k) if swap else (k, size - k)


class RootNotBracketed(ArithmeticError):
    pass


def large_K_root(size: int, rate1: float, rate2: float, iters: int = 200) -> float:
    """Continuous packet count on path 1 where moving one packet stops paying off.

    Solves ``I_p(x, K-x) / I_q(K-x-1, x+1) = rate2/rate1`` by bisection on
    ``(0, K-1)``.  The ratio decreases in ``x``; when it stays above the
    target over the whole bracket every packet belongs on path 1 and ``K`` is
    returned, and ``0`` when it stays below.
    """
    if size < 2:
        raise ValueError("need at least two packets")
    p = rate1 / (rate1 + rate2)
    q = 1.0 - p
    target = 1.0 / p - 1.0

    def f(x):
        return betainc_reg(x, size - x, p) / betainc_reg(size - x - 1, x + 1, q) - target

    lo, hi = 1e-12, size - 1.0
    f_lo, f_hi = f(lo), f(hi)
    if not (math.isfinite(f_lo) and math.isfinite(f_hi)):
        raise RootNotBracketed(f"non-finite ratio at bracket ends ({f_lo}, {f_hi})")
    if f_hi > 0:
        return float(size)
    if f_lo < 0:
        return 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13 * size:
            break
    return 0.5 * (lo + hi)


def large_K_allocation(size: int, rate1: float, rate2: float) -> tuple:
    """Integer allocation from :func:`large_K_root`: the better neighbour of the root."""
    x = large_K_root(size, rate1, rate2)
    cands = sorted({min(size, max(0, math.floor(x))), min(size, max(0, math.ceil(x)))})
    best = min(cands, key=lambda k: psi_exponential((k, size - k), (rate1, rate2)))
    return (best, size - best)


# -- general search -----------------------------------------------------------


def optimal_allocation_search(
    size: int,
    models: Sequence[ServiceModel],
    objective: Callable | None = None,
    grid: GridSpec | None = None,
    require_positive: bool = False,
) -> tuple:
    """Exhaustive argmin of ``objective(alloc)`` over all allocations of ``size`` packets.

    The objective defaults to the mean upload latency.  Ties go to the
    lexicographically smallest allocation.
    """
    n = len(models)
    if n > MAX_SEARCH_PATHS or n_compositions(size, n) > MAX_CANDIDATES:
        raise SearchSpaceError(
            f"{n_compositions(size, n)} candidate allocations over {n} paths exceeds the exhaustive-search cap; "
            "use proportional_allocation instead"
        )
    if objective is None:
        def objective(a):
            return order_stats.mean_upload_latency(a, models, grid)
    best, best_val = None, math.inf
    for alloc in compositions(size, n):
        if require_positive and min(alloc) == 0:
            continue
        val = objective(alloc)
        if best is None or val < best_val - 1e-12 * abs(best_val):
            best, best_val = alloc, val
    if best is None:
        raise ValueError("no admissible allocation")
    return best


def replication_latency(size: int, models: Sequence[ServiceModel], grid: GridSpec | None = None) -> float:
    """Mean time until the first of ``N`` full copies arrives."""
    if size < 1:
        raise ValueError("size must be >= 1")
    return order_stats.mu_operator(1, order_stats.cdf_vector([size] * len(models), models, grid))


def synchronization_cost(size: int, models: Sequence[ServiceModel], grid: GridSpec | None = None) -> float:
    """Best all-positive allocation latency minus replication latency.

    Positive favours replication, negative favours splitting.
    """
    n = len(models)
    if size < n:
        raise ValueError(f"no all-positive allocation exists for K={size} < N={n}")
    best = optimal_allocation_search(size, models, grid=grid, require_positive=True)
    return order_stats.mean_upload_latency(best, models, grid) - replication_latency(size, models, grid)


# -- (N, r) strategies ----------------------------------------------------------


class NrAllocation(NamedTuple):
    chunks: tuple
    r: int


def is_nr_allocation(chunks: Sequence[int], r: int, size: int) -> bool:
    if any(not 1 <= k <= size for k in chunks):
        return False
    return sum(sorted(chunks)[:r]) >= size


def enumerate_nr(n_paths: int, r: int, size: int) -> list:
    """Every ``k`` in ``[1, K]^N`` whose ``r`` smallest entries sum to at least ``K``."""
    if not 1 <= r <= n_paths:
        raise ValueError(f"r must lie in [1, {n_paths}]")
    if size < 1:
        raise ValueError("size must be >= 1")
    if size**n_paths > 50 * MAX_CANDIDATES:
        raise SearchSpaceError(f"{size}^{n_paths} candidate vectors exceeds the enumeration cap")
    out = []
    for chunks in itertools.product(range(1, size + 1), repeat=n_paths):
        if sum(sorted(chunks)[:r]) >= size:
            out.append(NrAllocation(chunks, r))
    return out


@dataclass
class NrResult:
    r: int
    chunks: tuple
    latency: float
    best_per_r: dict
    table: list  # rows (chunks, r, eta, regret)


def optimal_nr(n_paths: int, size: int, models: Sequence[ServiceModel], grid: GridSpec | None = None) -> NrResult:
    """Best (N, r)-strategy over every ``r``, with the regret of each candidate."""
    if len(models) != n_paths:
        raise ValueError("one service model per path required")
    rows = []
    best_per_r = {}
    for r in range(1, n_paths + 1):
        for chunks, _ in enumerate_nr(n_paths, r, size):
            eta = order_stats.eta_r(chunks, models, r, size, grid)
            rows.append((chunks, r, eta))
            cur = best_per_r.get(r)
            if cur is None or eta < cur[1] - 1e-12 * abs(cur[1]):
                best_per_r[r] = (chunks, eta)
    r_star = min(best_per_r, key=lambda r: (best_per_r[r][1], r))
    floor = best_per_r[r_star][1]
    table = [(c, r, eta, eta - floor) for c, r, eta in rows]
    return NrResult(r_star, best_per_r[r_star][0], floor, best_per_r, table)


def chernoff_comparison_bound(k1: int, k2: int, rate1: float, rate2: float) -> float:
    """Prior-work Chernoff upper bound on the two-path exponential mean latency."""
    return max(k1 / rate1, k2 / rate2) + math.sqrt(2 * math.pi) * (
        math.sqrt(k1) / rate1 + math.sqrt(k2) / rate2
    )


def exponential_rates(models: Sequence[ServiceModel]) -> list:
    if not all(isinstance(m, Exponential) for m in models):
        raise TypeError("closed form requires exponential packet delays")
    return [m.rate for m in models]
