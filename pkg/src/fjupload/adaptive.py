"""Online projected subgradient allocation for the Fork-Join upload stream.

After batch ``j`` the scheduler knows the inter-arrival time ``t_j`` and the
chunk times it observed.  The next waiting time is::

    W[j+1] = max(0, max_n (base_n + x_n S_n - t_j))

where ``S_n`` is the time path ``n`` would need for the whole batch and
``base_n`` is the largest partial sum of past ``x s - t`` terms on path ``n``
since the last regeneration point (with observed history this is path ``n``'s
backlog).  Its subgradient in ``x`` is ``S_{n*} e_{n*}`` for the maximizing
path whenever the maximum is positive.  ``S`` is unknown and replaced by
``M`` resamples from a service model (the sampler); the proportions follow
``x <- P_C(x - eta * g)``.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .distributions import MarkovModulatedExp, MmppParams, sample_chunks
from .inference import GammaPosterior, OnlineViterbi, posterior_update, resample_mm_service, sample_predictive
from .intermittent import round_to_allocation
from .simulator import BatchInfo, PathConfig

WINDOW_CAP = 1000

round_allocation = round_to_allocation


def project_simplex(v: Sequence[float]) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-and-threshold)."""
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot project non-finite vector")
    n = v.size
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, n + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    tau = css[rho] / (rho + 1)
    return np.maximum(v - tau, 0.0)


def chain_base(x_hist: np.ndarray, s_hist: np.ndarray, t_hist: np.ndarray) -> np.ndarray:
    """Largest partial sum of past ``x s - t`` per path, floored at 0.

    ``x_hist`` and ``s_hist`` are ``(L, N)`` (or ``(M, L, N)`` for ``s_hist``)
    with the oldest batch first; ``t_hist`` is ``(L,)``.  This is the backlog
    path ``n`` would carry into the current batch given that history.
    """
    s_hist = np.asarray(s_hist, dtype=float)
    L = len(t_hist)
    shape = s_hist.shape[:-2] + (s_hist.shape[-1],)
    if L == 0:
        return np.zeros(shape)
    inc = np.asarray(x_hist) * s_hist - np.asarray(t_hist)[:, None]
    suffix = np.cumsum(np.flip(inc, axis=-2), axis=-2)
    return np.maximum(suffix.max(axis=-2), 0.0)


def subgradient_samples(x, samples, interarrival: float, base) -> np.ndarray:
    """Per-sample subgradient contributions, shape ``(M, N)``.

    Parameters
    ----------
    x : (N,) current proportions.
    samples : (M, N) resampled whole-batch service times.
    interarrival : the known gap ``t_j`` to the next batch.
    base : (N,) or (M, N) chain value carried in from the history.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    value = np.asarray(base) + np.asarray(x) * samples - interarrival
    M = samples.shape[0]
    rows = np.arange(M)
    best = np.argmax(value, axis=1)
    hit = value[rows, best] > 0
    g = np.zeros_like(samples)
    g[rows[hit], best[hit]] = samples[rows[hit], best[hit]]
    return g


def estimate_subgradient(x, samples, interarrival: float, base) -> np.ndarray:
    """Monte-Carlo subgradient: the mean of :func:`subgradient_samples`."""
    return subgradient_samples(x, samples, interarrival, base).mean(axis=0)


def mc_cost(x, samples, interarrival: float, base) -> float:
    """Sample mean of ``max(0, max_n (base_n + x_n S_n - t))``."""
    value = np.asarray(base) + np.asarray(x) * np.atleast_2d(samples) - interarrival
    return float(np.maximum(value.max(axis=1), 0.0).mean())


def step(x, g, eta: float, paper_sign: bool = False) -> np.ndarray:
    """Projected update; descends by default, ascends with ``paper_sign``."""
    if eta <= 0:
        raise ValueError("learning rate must be positive")
    sign = 1.0 if paper_sign else -1.0
    return project_simplex(np.asarray(x) + sign * eta * np.asarray(g))


# -- samplers -----------------------------------------------------------------------
# Each sampler sees every served batch via observe() and, on demand, returns
# M resamples of the whole-batch service time on every path.


class OracleSampler:
    """Draws from the true service law (true hidden state for modulated paths)."""

    name = "oracle"

    def __init__(self, n_samples: int = 100):
        self.n_samples = n_samples

    def reset(self, paths: PathConfig, rng):
        self.models = paths.services
        self.mode = paths.mm_step
        self.rng = rng
        self._states = (None,) * len(self.models)

    def observe(self, info: BatchInfo):
        self._states = info.start_states

    def draw(self, size: int) -> np.ndarray:
        out = np.empty((self.n_samples, len(self.models)))
        for n, m in enumerate(self.models):
            if isinstance(m, MarkovModulatedExp):
                out[:, n] = resample_mm_service(m.params, self._states[n], size, self.rng, self.n_samples, self.mode)
            else:
                out[:, n] = sample_chunks(m, size, self.rng, self.n_samples)
        return out


class PosteriorSampler:
    """Conjugate gamma posterior per path, assuming i.i.d. exponential packets."""

    name = "iid_posterior"

    def __init__(self, n_samples: int = 100, prior_shape: float = 1.0, prior_rate: float = 1.0):
        self.n_samples = n_samples
        self.prior = GammaPosterior(prior_shape, prior_rate)

    def reset(self, paths, rng):
        self.rng = rng
        self.posts = [self.prior] * paths.n_paths

    def observe(self, info: BatchInfo):
        self.posts = [posterior_update(p, k, s) for p, k, s in zip(self.posts, info.alloc, info.services)]

    def draw(self, size: int) -> np.ndarray:
        if size == 0:
            return np.zeros((self.n_samples, len(self.posts)))
        return np.column_stack([sample_predictive(p, size, self.rng, self.n_samples) for p in self.posts])


class MmMapSampler:
    """Offline-fitted modulated model per path, tracked online with Viterbi."""

    name = "mm_map"

    def __init__(self, params: Sequence[MmppParams], n_samples: int = 100, mode: str = "packet"):
        self.params = list(params)
        self.n_samples = n_samples
        self.mode = mode

    def reset(self, paths, rng):
        if len(self.params) != paths.n_paths:
            raise ValueError("one fitted parameter set per path required")
        self.rng = rng
        self.trackers = [OnlineViterbi(p) for p in self.params]

    def observe(self, info: BatchInfo):
        for tr, k, s in zip(self.trackers, info.alloc, info.services):
            if k > 0 and s > 0:
                tr.update(s, k)

    def draw(self, size: int) -> np.ndarray:
        cols = [
            resample_mm_service(p, tr.state, size, self.rng, self.n_samples, self.mode)
            for p, tr in zip(self.params, self.trackers)
        ]
        return np.column_stack(cols)


class OneSampleSampler:
    """The observed chunk times, rescaled to the whole batch (a single sample).

    Paths that have never carried packets borrow the average per-packet time
    of the paths that have.
    """

    name = "ose"
    n_samples = 1

    def reset(self, paths, rng):
        self.per_packet = np.full(paths.n_paths, np.nan)

    def observe(self, info: BatchInfo):
        k = np.asarray(info.alloc)
        seen = k > 0
        self.per_packet[seen] = info.services[seen] / k[seen]

    def draw(self, size: int) -> np.ndarray:
        pp = self.per_packet
        if np.all(np.isnan(pp)):
            return np.zeros((1, len(pp)))
        pp = np.where(np.isnan(pp), np.nanmean(pp), pp)
        return (size * pp)[None, :]


def make_sampler(kind: str, n_samples: int = 100, **kw):
    if kind == "oracle":
        return OracleSampler(n_samples)
    if kind == "iid_posterior":
        return PosteriorSampler(n_samples, kw.get("prior_shape", 1.0), kw.get("prior_rate", 1.0))
    if kind == "mm_map":
        return MmMapSampler(kw["params"], n_samples, kw.get("mode", "packet"))
    if kind == "ose":
        return OneSampleSampler()
    raise ValueError(f"unknown sampler {kind!r}")


# -- scheduler -------------------------------------------------------------------------


class AdaptiveScheduler:
    """Projected subgradient descent on the proportion vector.

    Parameters
    ----------
    sampler : OracleSampler, PosteriorSampler, MmMapSampler or OneSampleSampler
    eta : float
        Learning rate per unit of service time.
    history : {"observed", "resampled"}
        ``"observed"`` carries the observed per-path backlog into the chain
        value (exact, and unaffected by truncation at regeneration points).
        ``"resampled"`` rebuilds the chain from the resamples drawn at each
        past batch, restarting at regeneration points or after
        ``window_cap`` batches.
    paper_sign : bool
        Step along ``+g`` instead of ``-g``.
    """

    name = "adaptive"

    def __init__(self, sampler, eta: float = 1e-3, history: str = "observed", paper_sign: bool = False,
                 window_cap: int = WINDOW_CAP):
        if history not in ("observed", "resampled"):
            raise ValueError(f"unknown history mode {history!r}")
        self.sampler = sampler
        self.eta = eta
        self.history = history
        self.paper_sign = paper_sign
        self.window_cap = window_cap

    def reset(self, paths: PathConfig, rng):
        n = paths.n_paths
        self.x = np.full(n, 1.0 / n)
        self.sampler.reset(paths, rng)
        self.window = 0
        self._base = np.zeros((self.sampler.n_samples, n))
        self.last_gradient = np.zeros(n)

    def allocate(self, j, size, backlog):
        return round_allocation(self.x, size)

    def observe(self, info: BatchInfo):
        self.sampler.observe(info)
        samples = self.sampler.draw(info.size)
        base = info.backlog if self.history == "observed" else self._base
        g = estimate_subgradient(self.x, samples, info.interarrival, base)
        if self.history == "resampled":
            self._base = np.maximum(0.0, self._base + self.x * samples - info.interarrival)
        self.window += 1
        if not np.any(info.next_backlog > 0) or self.window >= self.window_cap:
            # regeneration point: nothing before it can delay later batches
            self.window = 0
            self._base[:] = 0.0
        self.last_gradient = g
        self.x = step(self.x, g, self.eta, self.paper_sign)
