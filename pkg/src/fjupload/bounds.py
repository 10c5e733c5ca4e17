"""Kingman decay rates and the exponential waiting-time tail bound.

A path that receives ``k`` packets per batch is a GI/G/1 queue with service
``S^(k)`` and inter-arrival ``t``.  Its decay rate is the positive root of
``E[exp(theta (S^(k) - t))] = 1``; the Fork-Join waiting time inherits the
smallest of these rates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .distributions import GridSpec, ServiceModel, laplace_log, mgf_boundary, mgf_log
from .intermittent import MAX_CANDIDATES, SearchSpaceError, compositions, n_compositions

_BISECT_ITERS = 200


class UnstableError(ValueError):
    pass


def _log_mgf_increment(service, k, arrival, theta, grid):
    return mgf_log(service, k, theta, grid) + laplace_log(arrival, theta, grid)


def path_decay_rate(
    service: ServiceModel, k: int, arrival: ServiceModel, grid: GridSpec | None = None
) -> Optional[float]:
    """Decay rate of one path carrying ``k`` packets per batch.

    Returns ``math.inf`` when ``k == 0`` (the path never queues) and None when
    the path is unstable, i.e. ``k E[S] >= E[t]``.
    """
    if k == 0:
        return math.inf
    if k * service.mean >= arrival.mean:
        return None
    lo = 1e-12
    boundary = mgf_boundary(service)
    if math.isfinite(boundary):
        hi = boundary - 1e-9
    else:
        # truncated-support transform: double until the increment turns positive
        hi = 1.0 / (k * service.mean)
        while _log_mgf_increment(service, k, arrival, hi, grid) <= 0:
            hi *= 2.0
            if hi > 1e12:
                return None
    if _log_mgf_increment(service, k, arrival, hi, grid) <= 0:
        return None
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        if _log_mgf_increment(service, k, arrival, mid, grid) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 4 * np.finfo(float).eps * hi:
            break
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class DecayResult:
    thetas: tuple  # per path; inf for idle paths, None for unstable ones
    theta_tilde: Optional[float]

    @property
    def stable(self) -> tuple:
        return tuple(t is not None for t in self.thetas)

    @property
    def all_stable(self) -> bool:
        return all(self.stable)


def decay_rates(
    alloc: Sequence[int], services: Sequence[ServiceModel], arrival: ServiceModel, grid: GridSpec | None = None
) -> DecayResult:
    """Per-path rates and their minimum over the stable paths."""
    if len(alloc) != len(services):
        raise ValueError(f"{len(alloc)} chunk sizes for {len(services)} paths")
    thetas = tuple(path_decay_rate(s, k, arrival, grid) for s, k in zip(services, alloc))
    stable = [t for t in thetas if t is not None]
    tilde = min(stable) if stable else None
    return DecayResult(thetas, tilde)


def tail_bound(
    alloc: Sequence[int],
    services: Sequence[ServiceModel],
    arrival: ServiceModel,
    sigma,
    grid: GridSpec | None = None,
):
    """Upper bound on ``P(W >= sigma)``: the sum of per-path ``exp(-theta_i sigma)``, clamped to 1."""
    res = decay_rates(alloc, services, arrival, grid)
    bad = [i for i, t in enumerate(res.thetas) if t is None]
    if bad:
        raise UnstableError(f"paths {bad} are unstable under allocation {tuple(alloc)}")
    sigma = np.asarray(sigma, dtype=float)
    total = np.zeros_like(sigma)
    for t in res.thetas:
        if math.isfinite(t):
            total = total + np.exp(-t * sigma)
    if all(math.isinf(t) for t in res.thetas):
        total = np.where(sigma > 0, 0.0, 1.0)
    out = np.minimum(total, 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass
class DecayAllocation:
    alloc: tuple
    theta_tilde: float
    table: list  # rows (alloc, DecayResult)


def optimal_allocation_by_decay(
    size: int, services: Sequence[ServiceModel], arrival: ServiceModel, grid: GridSpec | None = None
) -> DecayAllocation:
    """Allocation with the largest effective decay rate; ties go lexicographically."""
    n = len(services)
    if n_compositions(size, n) > MAX_CANDIDATES:
        raise SearchSpaceError(f"{n_compositions(size, n)} candidate allocations exceeds the enumeration cap")
    # per-path rates only depend on (path, k): compute each once
    cache = [dict() for _ in range(n)]

    def rate(i, k):
        if k not in cache[i]:
            cache[i][k] = path_decay_rate(services[i], k, arrival, grid)
        return cache[i][k]

    table = []
    best, best_val = None, -math.inf
    for alloc in compositions(size, n):
        thetas = tuple(rate(i, k) for i, k in enumerate(alloc))
        stable = [t for t in thetas if t is not None]
        res = DecayResult(thetas, min(stable) if stable else None)
        table.append((alloc, res))
        if not res.all_stable:
            continue
        if best is None or res.theta_tilde > best_val * (1 + 1e-12):
            best, best_val = alloc, res.theta_tilde
    if best is None:
        raise UnstableError("system overloaded: no allocation keeps every path stable")
    return DecayAllocation(best, best_val, table)
