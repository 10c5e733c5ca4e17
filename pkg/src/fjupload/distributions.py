"""Per-packet latency laws and the CDFs / transforms of k-packet chunks.

A chunk of ``k`` packets on a path takes the sum of ``k`` packet latencies.
Exponential and gamma packet laws keep a closed-form chunk CDF (Erlang /
gamma).  Weibull and lognormal packet laws are discretized on a lattice and
self-convolved.
"""
from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import special, stats
from scipy.signal import fftconvolve


class DomainError(ValueError):
    """Transform argument outside the effective domain."""

    def __init__(self, message: str, boundary: float):
        super().__init__(message)
        self.boundary = boundary


class GridError(ValueError):
    """Discretization grid does not cover enough probability mass."""

    def __init__(self, message: str, required_upper: float):
        super().__init__(message)
        self.required_upper = required_upper


@dataclass(frozen=True)
class MmppParams:
    """Hidden Markov chain modulating exponential rates.

    ``rates[s]`` is the exponential rate emitted while the chain sits in
    state ``s``.  ``pi`` is the initial distribution and ``A`` the
    row-stochastic transition matrix.
    """

    pi: np.ndarray
    A: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        rates = np.asarray(self.rates, dtype=float)
        m = len(rates)
        if m < 1 or pi.shape != (m,) or A.shape != (m, m):
            raise ValueError(f"inconsistent MMPP shapes: pi{pi.shape}, A{A.shape}, rates{rates.shape}")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
            raise ValueError("pi must be a probability vector")
        if np.any(A < 0) or np.any(np.abs(A.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("rows of A must sum to 1")
        if np.any(rates <= 0):
            raise ValueError("emission rates must be positive")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "rates", rates)

    @property
    def n_states(self) -> int:
        return len(self.rates)

    def stationary(self) -> np.ndarray:
        """Stationary distribution of the modulating chain."""
        m = self.n_states
        lhs = np.vstack([self.A.T - np.eye(m), np.ones(m)])
        rhs = np.zeros(m + 1)
        rhs[-1] = 1.0
        sol, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
        sol = np.clip(sol, 0.0, None)
        return sol / sol.sum()

    def mean_rate(self) -> float:
        """Stationary-weighted emission rate."""
        return float(self.stationary() @ self.rates)

    def mean_time(self) -> float:
        """Long-run mean of one emitted time (stationary mixture of 1/rate)."""
        return float(self.stationary() @ (1.0 / self.rates))

    @classmethod
    def symmetric(cls, base_rate: float, multipliers=(0.5, 1.0, 2.0), self_loop: float = 0.9) -> "MmppParams":
        """Uniform start, constant self-loop, equal off-diagonal transitions."""
        m = len(multipliers)
        if m == 1:
            A = np.ones((1, 1))
        else:
            A = np.full((m, m), (1.0 - self_loop) / (m - 1))
            np.fill_diagonal(A, self_loop)
        return cls(np.full(m, 1.0 / m), A, base_rate * np.asarray(multipliers, dtype=float))


@dataclass(frozen=True)
class Exponential:
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"exponential rate must be > 0, got {self.rate}")

    @property
    def mean(self) -> float:
        return 1.0 / self.rate

    @property
    def var(self) -> float:
        return 1.0 / self.rate**2


@dataclass(frozen=True)
class Gamma:
    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError(f"gamma parameters must be > 0, got ({self.shape}, {self.rate})")

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    @property
    def var(self) -> float:
        return self.shape / self.rate**2


@dataclass(frozen=True)
class Weibull:
    scale: float
    shape: float

    def __post_init__(self):
        if not (self.scale > 0 and self.shape > 0):
            raise ValueError(f"weibull parameters must be > 0, got ({self.scale}, {self.shape})")

    @property
    def frozen(self):
        return stats.weibull_min(self.shape, scale=self.scale)

    @property
    def mean(self) -> float:
        return self.scale * math.gamma(1.0 + 1.0 / self.shape)

    @property
    def var(self) -> float:
        g1 = math.gamma(1.0 + 1.0 / self.shape)
        g2 = math.gamma(1.0 + 2.0 / self.shape)
        return self.scale**2 * (g2 - g1 * g1)


@dataclass(frozen=True)
class LogNormal:
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"lognormal sigma must be > 0, got {self.sigma}")

    @property
    def frozen(self):
        return stats.lognorm(self.sigma, scale=math.exp(self.mu))

    @property
    def mean(self) -> float:
        return math.exp(self.mu + 0.5 * self.sigma**2)

    @property
    def var(self) -> float:
        return (math.exp(self.sigma**2) - 1.0) * math.exp(2 * self.mu + self.sigma**2)


@dataclass(frozen=True)
class MarkovModulatedExp:
    """Exponential packet times whose rate follows a hidden Markov chain."""

    params: MmppParams

    @property
    def mean(self) -> float:
        return self.params.mean_time()


ServiceModel = Union[Exponential, Gamma, Weibull, LogNormal, MarkovModulatedExp]


def mean_rate(model: ServiceModel) -> float:
    """Packets per unit time; stationary-weighted rate for modulated models."""
    if isinstance(model, Exponential):
        return model.rate
    if isinstance(model, MarkovModulatedExp):
        return model.params.mean_rate()
    return 1.0 / model.mean


@dataclass(frozen=True)
class GridSpec:
    """Lattice used for numeric self-convolution.

    The support bound starts at ``k*mean + n_std*sqrt(k)*std`` and grows
    until the truncated mass is below ``tail_tol``.  A fixed ``upper`` is
    never grown; too small a value raises :class:`GridError`.  The step is
    ``T / 2**step_exp2``.
    """

    step_exp2: int = 14
    tail_tol: float = 1e-9
    n_std: float = 12.0
    upper: float | None = None

    def support(self, model: ServiceModel, k: int) -> float:
        if self.upper is not None:
            return float(self.upper)
        return k * model.mean + self.n_std * math.sqrt(k * model.var)


# -- chunk CDFs ---------------------------------------------------------------


@dataclass(frozen=True)
class AnalyticCdf:
    """Gamma(shape, rate) chunk law; ``kind='erlang'`` when the shape is an integer count."""

    kind: str
    shape: float
    rate: float

    def cdf(self, x):
        return special.gammainc(self.shape, self.rate * np.maximum(x, 0.0))

    def sf(self, x):
        return special.gammaincc(self.shape, self.rate * np.maximum(x, 0.0))

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    def upper(self, tol: float = 1e-16) -> float:
        return float(stats.gamma.isf(tol, self.shape, scale=1.0 / self.rate))


@dataclass(frozen=True)
class DiscretizedCdf:
    """CDF tabulated at ``0, h, 2h, ..., T``; linear between grid points."""

    step: float
    values: np.ndarray = field(repr=False)

    @property
    def grid(self) -> np.ndarray:
        return self.step * np.arange(len(self.values))

    @property
    def T(self) -> float:
        return self.step * (len(self.values) - 1)

    def cdf(self, x):
        return np.interp(x, self.grid, self.values, left=0.0, right=1.0)

    def sf(self, x):
        return 1.0 - self.cdf(x)

    @property
    def mean(self) -> float:
        return float(_simpson(1.0 - self.values, self.step))

    def upper(self, tol: float = 0.0) -> float:
        return self.T


@dataclass(frozen=True)
class PointMassZero:
    """Degenerate chunk of zero packets: completes at time 0."""

    def cdf(self, x):
        return np.ones_like(np.asarray(x, dtype=float))

    def sf(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    @property
    def mean(self) -> float:
        return 0.0

    def upper(self, tol: float = 0.0) -> float:
        return 0.0


ChunkCdf = Union[AnalyticCdf, DiscretizedCdf, PointMassZero]


def _simpson(y: np.ndarray, h: float) -> float:
    """Composite Simpson on an equally spaced grid (trapezoid on a trailing odd panel)."""
    n = len(y) - 1
    if n < 2:
        return float(np.trapezoid(y, dx=h)) if n == 1 else 0.0
    m = n - (n % 2)
    s = y[0] + y[m] + 4.0 * y[1:m:2].sum() + 2.0 * y[2:m - 1:2].sum()
    out = s * h / 3.0
    if m < n:
        out += 0.5 * h * (y[m] + y[n])
    return float(out)


def _packet_lattice(model: Weibull | LogNormal, step: float, n: int) -> np.ndarray:
    """Mass of [(j-1/2)h, (j+1/2)h) assigned to jh, j = 0..n."""
    edges = step * (np.arange(n + 1) + 0.5)
    c = model.frozen.cdf(edges)
    pmf = np.empty(n + 1)
    pmf[0] = c[0]
    pmf[1:] = np.diff(c)
    return pmf


def _self_convolve(pmf: np.ndarray, k: int) -> np.ndarray:
    """k-fold convolution by binary powering, truncated to the input length."""
    n = len(pmf)
    result = None
    base = pmf
    while k:
        if k & 1:
            result = base if result is None else np.clip(fftconvolve(result, base)[:n], 0.0, None)
        k >>= 1
        if k:
            base = np.clip(fftconvolve(base, base)[:n], 0.0, None)
    return result


def chunk_cdf(model: ServiceModel, k: int, grid: GridSpec | None = None) -> ChunkCdf:
    """CDF of the time to transport ``k`` packets (sum of ``k`` i.i.d. packet times)."""
    if k < 1 or int(k) != k:
        raise ValueError(f"chunk size must be a positive integer, got {k}")
    k = int(k)
    if isinstance(model, Exponential):
        return AnalyticCdf("erlang", float(k), model.rate)
    if isinstance(model, Gamma):
        return AnalyticCdf("gamma", k * model.shape, model.rate)
    if isinstance(model, MarkovModulatedExp):
        raise TypeError("Markov-modulated services have no closed-form chunk CDF; use an i.i.d. model")
    return _lattice_chunk_cdf(model, k, grid or GridSpec())


@lru_cache(maxsize=256)
def _lattice_chunk_cdf(model: Weibull | LogNormal, k: int, grid: GridSpec) -> DiscretizedCdf:
    n = 2**grid.step_exp2
    # union bound with a factor-2 margin for lattice round-off
    required = k * float(model.frozen.isf(0.5 * grid.tail_tol / k))
    T = grid.support(model, k)
    while True:
        h = T / n
        pmf = _self_convolve(_packet_lattice(model, h, n), k)
        # the midpoint convention leaves half of the last atom above T
        tail = 1.0 - pmf.sum() + 0.5 * pmf[-1]
        if tail <= grid.tail_tol:
            break
        if grid.upper is not None:
            raise GridError(
                f"support bound T={T:.6g} leaves tail mass {tail:.3g} > {grid.tail_tol:g}; "
                f"use T >= {required:.6g}",
                required,
            )
        if T >= required:
            # lattice round-off only; the bound itself is sufficient
            break
        T = min(1.5 * T, required)
    # midpoint convention: half of the atom at jh counts as below jh
    values = np.cumsum(pmf) - 0.5 * pmf
    values = np.clip(np.maximum.accumulate(values), 0.0, 1.0)
    values.flags.writeable = False  # shared through the cache
    return DiscretizedCdf(h, values)


# -- transforms ---------------------------------------------------------------


def mgf_boundary(model: ServiceModel) -> float:
    """Supremum of the effective domain of the packet MGF.

    Weibull (shape < 1) and lognormal transforms are taken over the truncated
    lattice support, so they report an infinite boundary.
    """
    if isinstance(model, Exponential):
        return model.rate
    if isinstance(model, Gamma):
        return model.rate
    if isinstance(model, Weibull) and model.shape == 1.0:
        return 1.0 / model.scale
    if isinstance(model, MarkovModulatedExp):
        raise TypeError("Markov-modulated services are not i.i.d.; no packet MGF")
    return math.inf


def mgf_log(model: ServiceModel, k: int, theta: float, grid: GridSpec | None = None) -> float:
    """``log E[exp(theta * S)]`` for ``S`` the sum of ``k`` packet times."""
    if k < 1:
        raise ValueError(f"chunk size must be >= 1, got {k}")
    if theta == 0.0:
        return 0.0
    boundary = mgf_boundary(model)
    if theta >= boundary:
        raise DomainError(f"theta={theta} outside MGF domain (< {boundary})", boundary)
    if isinstance(model, Exponential):
        return -k * math.log1p(-theta / model.rate)
    if isinstance(model, Gamma):
        return -k * model.shape * math.log1p(-theta / model.rate)
    if isinstance(model, Weibull) and model.shape == 1.0:
        return -k * math.log1p(-theta * model.scale)
    return k * _lattice_mgf_log(model, theta, grid or GridSpec())


def _lattice_mgf_log(model: Weibull | LogNormal, theta: float, grid: GridSpec) -> float:
    """Transform of the lattice law.

    Weibull packets with shape > 1 have a finite MGF everywhere; the support
    is stretched until the tilted tail ``exp(theta x) P(X > x)`` is below
    ``tail_tol``.  Lognormal and Weibull shape < 1 packets have no finite MGF
    for ``theta > 0``; their transform is that of the law truncated at the
    ``1 - tail_tol`` quantile.
    """
    upper = max(grid.support(model, 1), float(model.frozen.isf(grid.tail_tol)))
    if theta > 0 and isinstance(model, Weibull) and model.shape > 1.0:
        log_tol = math.log(grid.tail_tol)
        while theta * upper - (upper / model.scale) ** model.shape > log_tol:
            upper *= 1.5
    n = 2**grid.step_exp2
    h = upper / n
    pmf = _packet_lattice(model, h, n)
    with np.errstate(divide="ignore"):
        logw = np.log(pmf)
    return float(special.logsumexp(logw + theta * h * np.arange(n + 1)))


def laplace_log(model: ServiceModel, theta: float, grid: GridSpec | None = None) -> float:
    """``log E[exp(-theta * t)]`` for one inter-arrival time ``t``; ``theta >= 0``."""
    if theta < 0:
        raise ValueError("Laplace transform argument must be >= 0")
    return mgf_log(model, 1, -theta, grid)


# -- sampling -----------------------------------------------------------------


def sample_packets(model: ServiceModel, rng: np.random.Generator, size) -> np.ndarray:
    """I.i.d. packet times (Markov-modulated models: stationary start, one chain)."""
    if isinstance(model, Exponential):
        return rng.exponential(1.0 / model.rate, size)
    if isinstance(model, Gamma):
        return rng.gamma(model.shape, 1.0 / model.rate, size)
    if isinstance(model, Weibull):
        return model.scale * rng.weibull(model.shape, size)
    if isinstance(model, LogNormal):
        return rng.lognormal(model.mu, model.sigma, size)
    n = int(np.prod(size))
    states = sample_chain(model.params, n, rng)
    return (rng.exponential(1.0, n) / model.params.rates[states]).reshape(size)


def sample_chunks(model: ServiceModel, k: int, rng: np.random.Generator, size) -> np.ndarray:
    """I.i.d. samples of the time to serve ``k`` packets."""
    if k == 0:
        return np.zeros(size)
    if isinstance(model, Exponential):
        return rng.gamma(k, 1.0 / model.rate, size)
    if isinstance(model, Gamma):
        return rng.gamma(k * model.shape, 1.0 / model.rate, size)
    if isinstance(model, MarkovModulatedExp):
        raise TypeError("use inference.resample_mm_service for Markov-modulated chunks")
    shape = (size,) if np.isscalar(size) else tuple(size)
    return sample_packets(model, rng, shape + (k,)).sum(axis=-1)


def sample_chain(params: MmppParams, length: int, rng: np.random.Generator, start: int | None = None) -> np.ndarray:
    """State path of the modulating chain, generated sojourn by sojourn."""
    states = np.empty(length, dtype=np.int64)
    if length == 0:
        return states
    m = params.n_states
    s = int(rng.choice(m, p=params.pi)) if start is None else int(start)
    jump = _jump_matrix(params.A)
    pos = 0
    while pos < length:
        stay_p = params.A[s, s]
        if stay_p >= 1.0:
            stay = length - pos
        else:
            stay = int(rng.geometric(1.0 - stay_p))
        states[pos:pos + stay] = s
        pos += stay
        if pos < length:
            s = int(rng.choice(m, p=jump[s]))
    return states


def _jump_matrix(A: np.ndarray) -> np.ndarray:
    J = A.copy()
    np.fill_diagonal(J, 0.0)
    rows = J.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        J = np.where(rows > 0, J / rows, 0.0)
    return J
