"""Fork-Join stream-upload simulation.

Batches arrive with inter-arrival times ``t_j`` and carry ``K_j`` packets.  A
scheduler splits each batch over ``N`` paths; path ``n`` serves its chunk
after its current backlog.  The waiting time of batch ``j`` is the largest
per-path backlog at its arrival::

    W[n, j] = max(0, W[n, j-1] + s[n, j-1] - t[j-1]),    W[j] = max_n W[n, j]

with ``s[n, j]`` the realized time to serve path ``n``'s chunk of batch ``j``.

Randomness is split into independent substreams per replication: arrivals,
batch sizes, one per path, and one for the scheduler.  Paths consume their
own packet streams in order, so schedulers run on the same seed see the same
arrivals, batch sizes and packet times (common random numbers).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence, Union

import numpy as np

from .distributions import (
    Exponential,
    MarkovModulatedExp,
    MmppParams,
    ServiceModel,
    mean_rate,
    sample_chain,
    sample_packets,
)
from .intermittent import round_to_allocation

# -- configuration ------------------------------------------------------------------


@dataclass(frozen=True)
class PoissonBatches:
    mean: float

    def draw(self, rng, n):
        return rng.poisson(self.mean, n)


@dataclass(frozen=True)
class FixedBatches:
    size: int

    def draw(self, rng, n):
        return np.full(n, self.size, dtype=np.int64)


@dataclass(frozen=True)
class TrafficConfig:
    """Arrival process, batch-size law and horizon (number of batches)."""

    arrival: Union[Exponential, MmppParams]
    batches: Union[PoissonBatches, FixedBatches]
    horizon: int

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")

    @property
    def mean_interarrival(self) -> float:
        if isinstance(self.arrival, MmppParams):
            return self.arrival.mean_time()
        return self.arrival.mean

    @property
    def mean_batch(self) -> float:
        b = self.batches
        return b.mean if isinstance(b, PoissonBatches) else float(b.size)


@dataclass(frozen=True)
class PathConfig:
    """Per-path packet-delay laws; ``mm_step`` is ``"packet"`` or ``"chunk"``."""

    services: tuple
    mm_step: str = "packet"

    def __post_init__(self):
        if not self.services:
            raise ValueError("need at least one path")
        if self.mm_step not in ("packet", "chunk"):
            raise ValueError(f"mm_step must be 'packet' or 'chunk', got {self.mm_step!r}")

    @property
    def n_paths(self) -> int:
        return len(self.services)


def load(traffic: TrafficConfig, paths: PathConfig) -> float:
    """Offered load: mean work per batch over the total packet throughput per unit time."""
    capacity = sum(1.0 / m.mean for m in paths.services)
    return traffic.mean_batch / (capacity * traffic.mean_interarrival)


# -- random streams ----------------------------------------------------------------


def substreams(seed: int, rep: int, n_paths: int) -> list:
    """Generators for arrivals, batch sizes, each path, and the scheduler."""
    ss = np.random.SeedSequence(seed, spawn_key=(rep,))
    return [np.random.default_rng(s) for s in ss.spawn(n_paths + 3)]


class PathStream:
    """Packet times of one path, consumed in order."""

    def __init__(self, model: ServiceModel, total: int, horizon: int, mode: str, rng):
        self.model = model
        self.mode = mode
        self.pos = 0
        self.states = None
        if isinstance(model, MarkovModulatedExp):
            unit = rng.exponential(1.0, total)
            if mode == "packet":
                self.states = sample_chain(model.params, total, rng)
                packets = unit / model.params.rates[self.states]
            else:
                self.states = sample_chain(model.params, horizon, rng)
                packets = unit
        else:
            packets = sample_packets(model, rng, total)
        self._cum = np.concatenate(([0.0], np.cumsum(packets)))

    def start_state(self, j: int) -> Optional[int]:
        """Hidden state in which the next chunk (of batch ``j``) starts."""
        if self.states is None:
            return None
        if self.mode == "packet":
            return int(self.states[min(self.pos, len(self.states) - 1)])
        return int(self.states[j])

    def take(self, k: int, j: int) -> float:
        if k == 0:
            return 0.0
        s = self._cum[self.pos + k] - self._cum[self.pos]
        self.pos += k
        if self.states is not None and self.mode == "chunk":
            s /= self.model.params.rates[self.states[j]]
        return float(s)


@dataclass
class Streams:
    interarrival: np.ndarray
    sizes: np.ndarray
    paths: list
    scheduler_rng: np.random.Generator


def draw_streams(traffic: TrafficConfig, paths: PathConfig, seed: int, rep: int = 0) -> Streams:
    gens = substreams(seed, rep, paths.n_paths)
    J = traffic.horizon
    if isinstance(traffic.arrival, MmppParams):
        st = sample_chain(traffic.arrival, J, gens[0])
        t = gens[0].exponential(1.0, J) / traffic.arrival.rates[st]
    else:
        t = gens[0].exponential(traffic.arrival.mean, J)
    sizes = traffic.batches.draw(gens[1], J).astype(np.int64)
    total = int(sizes.sum())
    streams = [PathStream(m, total, J, paths.mm_step, g) for m, g in zip(paths.services, gens[2:-1])]
    return Streams(t, sizes, streams, gens[-1])


# -- schedulers ------------------------------------------------------------------------


@dataclass
class BatchInfo:
    """What the scheduler learns after batch ``j`` has been served."""

    j: int
    size: int
    alloc: tuple
    services: np.ndarray  # realized chunk times, 0 for idle paths
    interarrival: float  # t_j, gap to the next batch
    backlog: np.ndarray  # per-path backlog seen by batch j
    next_backlog: np.ndarray  # per-path backlog seen by batch j+1
    start_states: tuple  # hidden service state at chunk start (None for i.i.d. paths)


class Scheduler(Protocol):
    def reset(self, paths: PathConfig, rng: np.random.Generator) -> None: ...

    def allocate(self, j: int, size: int, backlog: np.ndarray) -> tuple: ...

    def observe(self, info: BatchInfo) -> None: ...


class StaticScheduler:
    """Fixed proportion vector, rounded per batch."""

    name = "static"
    static = True

    def __init__(self, x: Sequence[float]):
        x = np.asarray(x, dtype=float)
        if np.any(x < 0) or abs(x.sum() - 1.0) > 1e-9:
            raise ValueError("proportions must be non-negative and sum to 1")
        self.x = x

    def reset(self, paths, rng):
        if len(self.x) != paths.n_paths:
            raise ValueError("proportion vector length differs from the number of paths")

    def allocate(self, j, size, backlog):
        return round_to_allocation(self.x, size)

    def allocate_all(self, sizes: np.ndarray) -> np.ndarray:
        head = np.floor(np.outer(sizes, self.x[:-1]) + 1e-9).astype(np.int64)
        return np.column_stack([head, sizes - head.sum(axis=1)])

    def observe(self, info):
        pass


class ProportionalScheduler(StaticScheduler):
    """Proportions equal to the paths' (stationary-weighted) mean packet rates."""

    name = "proportional"

    def __init__(self):
        self.x = None

    def reset(self, paths, rng):
        rates = np.array([mean_rate(m) for m in paths.services])
        self.x = rates / rates.sum()


def batch_jsq_allocation(backlog: Sequence[float], size: int) -> tuple:
    """Whole batch to the path with the smallest backlog (lowest index on ties)."""
    n = int(np.argmin(np.asarray(backlog)))
    out = [0] * len(backlog)
    out[n] = int(size)
    return tuple(out)


class BatchJSQScheduler:
    name = "batch_jsq"

    def reset(self, paths, rng):
        pass

    def allocate(self, j, size, backlog):
        return batch_jsq_allocation(backlog, size)

    def observe(self, info):
        pass


# -- simulation --------------------------------------------------------------------------


@dataclass
class SimTrace:
    interarrival: np.ndarray  # (J,)
    sizes: np.ndarray  # (J,)
    alloc: np.ndarray  # (J, N)
    services: np.ndarray  # (J, N) realized chunk times
    backlog: np.ndarray  # (J, N) per-path backlog at each arrival
    waiting: np.ndarray  # (J,)
    proportions: np.ndarray  # (J, N) proportion vector in force for each batch
    extra: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return len(self.waiting)


def simulate(
    traffic: TrafficConfig,
    paths: PathConfig,
    scheduler,
    seed: int = 0,
    rep: int = 0,
    streams: Streams | None = None,
) -> SimTrace:
    """Run one replication; ``streams`` overrides the seeded draws."""
    if streams is None:
        streams = draw_streams(traffic, paths, seed, rep)
    t, K = streams.interarrival, streams.sizes
    J, N = len(t), paths.n_paths
    scheduler.reset(paths, streams.scheduler_rng)
    if getattr(scheduler, "static", False):
        return _simulate_static(t, K, streams, scheduler)
    alloc = np.zeros((J, N), dtype=np.int64)
    serv = np.zeros((J, N))
    backlog = np.zeros((J, N))
    props = np.zeros((J, N))
    cur = np.zeros(N)
    for j in range(J):
        backlog[j] = cur
        x = getattr(scheduler, "x", None)
        k = scheduler.allocate(j, int(K[j]), cur.copy())
        if len(k) != N or sum(k) != K[j] or min(k) < 0:
            raise ValueError(f"scheduler returned invalid allocation {k} for batch size {K[j]}")
        alloc[j] = k
        props[j] = x if x is not None else (np.asarray(k) / K[j] if K[j] else np.full(N, 1.0 / N))
        starts = tuple(p.start_state(j) for p in streams.paths)
        for n, p in enumerate(streams.paths):
            serv[j, n] = p.take(int(k[n]), j)
        nxt = np.maximum(0.0, cur + serv[j] - t[j])
        scheduler.observe(BatchInfo(j, int(K[j]), tuple(int(v) for v in k), serv[j].copy(), float(t[j]), cur.copy(), nxt.copy(), starts))
        cur = nxt
    waiting = backlog.max(axis=1) if N else np.zeros(J)
    return SimTrace(t.copy(), K.copy(), alloc, serv, backlog, waiting, props)


def _simulate_static(t, K, streams: Streams, scheduler) -> SimTrace:
    J, N = len(t), len(streams.paths)
    alloc = scheduler.allocate_all(K)
    serv = np.zeros((J, N))
    for n, p in enumerate(streams.paths):
        ends = np.cumsum(alloc[:, n])
        starts = ends - alloc[:, n]
        serv[:, n] = p._cum[ends] - p._cum[starts]
        if p.states is not None and p.mode == "chunk":
            serv[:, n] /= p.model.params.rates[p.states[:J]]
        p.pos = int(ends[-1]) if J else 0
    backlog = _lindley_backlog(serv, t)
    waiting = backlog.max(axis=1)
    props = np.tile(scheduler.x, (J, 1))
    return SimTrace(t.copy(), K.copy(), alloc, serv, backlog, waiting, props)


def _lindley_backlog(services: np.ndarray, interarrival: np.ndarray) -> np.ndarray:
    J, N = services.shape
    out = np.empty((J, N))
    tl = interarrival.tolist()
    for n in range(N):
        cur = 0.0
        col = out[:, n]
        sl = services[:, n].tolist()
        vals = [0.0] * J
        for j in range(J):
            vals[j] = cur
            cur = cur + sl[j] - tl[j]
            if cur < 0.0:
                cur = 0.0
        col[:] = vals
    return out


def waiting_time_direct(trace: SimTrace, j: int) -> float:
    """``W_j`` from the partial-sum formula ``max(0, max_{n,k} sum_{i=1..k} (s[n,j-i] - t[j-i]))``."""
    if j == 0:
        return 0.0
    inc = trace.services[:j] - trace.interarrival[:j, None]
    suffix = np.cumsum(inc[::-1], axis=0)
    return float(max(0.0, suffix.max()))


def lindley_waiting(services: np.ndarray, interarrival: np.ndarray) -> np.ndarray:
    """Per-batch waiting times from the per-path recursion, for arrays ``(J, N)`` and ``(J,)``."""
    services = np.atleast_2d(np.asarray(services, dtype=float))
    if services.shape[0] != len(interarrival):
        services = services.T
    return _lindley_backlog(services, np.asarray(interarrival, dtype=float)).max(axis=1)


# -- summaries ----------------------------------------------------------------------------


@dataclass
class Ccdf:
    sigma: np.ndarray
    prob: np.ndarray
    n: int


def ccdf(samples, sigma) -> Ccdf:
    """Empirical ``P(W >= sigma)`` on a grid."""
    samples = np.sort(np.asarray(samples, dtype=float).ravel())
    sigma = np.asarray(sigma, dtype=float)
    if samples.size == 0:
        return Ccdf(sigma, np.full(sigma.shape, np.nan), 0)
    below = np.searchsorted(samples, sigma, side="left")
    return Ccdf(sigma, 1.0 - below / samples.size, int(samples.size))


def write_trace_csv(path, trace: SimTrace, header: Sequence[str] = ()) -> None:
    N = trace.alloc.shape[1] if trace.alloc.ndim == 2 else 0
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["j", "t", "K"] + [f"k{n + 1}" for n in range(N)] + ["W"])
        for j in range(trace.horizon):
            w.writerow([j + 1, repr(float(trace.interarrival[j])), int(trace.sizes[j])]
                       + [int(v) for v in trace.alloc[j]] + [repr(float(trace.waiting[j]))])


def write_ccdf_csv(path, table: Ccdf, header: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["sigma", "ccdf", "n"])
        for s, p in zip(table.sigma, table.prob):
            w.writerow([repr(float(s)), repr(float(p)), table.n])
