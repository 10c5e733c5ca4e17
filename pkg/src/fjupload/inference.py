"""Service-time inference for the subgradient resamplers.

Two families are covered:

* i.i.d. exponential packet times with a conjugate gamma prior on the rate,
* Markov-modulated exponential packet times, where a chunk of ``m`` packets
  observed in hidden state ``k`` has a Gamma(m, rate_k) duration.  The
  modulating chain is fitted offline with EM and tracked online with Viterbi.

Rates follow the rate convention throughout: the emission density is
``rate^m x^(m-1) exp(-rate x) / Gamma(m)`` and the M-step estimate is
``sum(zeta * m) / sum(zeta * x)``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.special import gammaln

from .distributions import MmppParams, _jump_matrix

__all__ = [
    "GammaPosterior",
    "MmppParams",
    "posterior_update",
    "sample_predictive",
    "emission_logpdf",
    "forward_backward",
    "em_fit",
    "EmResult",
    "viterbi_map",
    "OnlineViterbi",
    "resample_mm_service",
    "read_params",
    "write_params",
    "read_trace",
    "TraceFormatError",
]

log = logging.getLogger(__name__)


# -- conjugate gamma posterior --------------------------------------------------


@dataclass(frozen=True)
class GammaPosterior:
    """Gamma(shape, rate) belief over an exponential packet rate."""

    shape: float = 1.0
    rate: float = 1.0

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError("posterior shape and rate must be positive")

    @property
    def mean_rate(self) -> float:
        return self.shape / self.rate


def posterior_update(post: GammaPosterior, packets: int, duration: float) -> GammaPosterior:
    """Absorb one chunk of ``packets`` packets that took ``duration`` to serve.

    A path that carried no packets has nothing to report; ``packets == 0``
    returns ``post`` unchanged.
    """
    if packets == 0:
        return post
    if packets < 0 or not duration > 0:
        raise ValueError("need packets >= 1 and a positive duration")
    return GammaPosterior(post.shape + packets, post.rate + duration)


def sample_predictive(post: GammaPosterior, packets: int, rng: np.random.Generator, size=None):
    """Draw a rate from the posterior, then a Gamma(packets, rate) chunk time."""
    if packets < 1:
        raise ValueError("predictive chunk size must be >= 1")
    lam = rng.gamma(post.shape, 1.0 / post.rate, size)
    return rng.gamma(packets, 1.0 / lam)


# -- hidden Markov model with gamma emissions -----------------------------------


def emission_logpdf(x: np.ndarray, m: np.ndarray, rates: np.ndarray) -> np.ndarray:
    """``(T, M)`` log-densities of chunk times ``x`` with shapes ``m`` per state."""
    x = np.asarray(x, dtype=float)[:, None]
    m = np.asarray(m, dtype=float)[:, None]
    rates = np.asarray(rates, dtype=float)[None, :]
    return m * np.log(rates) + (m - 1) * np.log(x) - rates * x - gammaln(m)


def _validate_obs(x, m):
    x = np.asarray(x, dtype=float)
    m = np.asarray(m, dtype=float)
    if x.ndim != 1 or x.shape != m.shape:
        raise ValueError("observations and shapes must be 1-d arrays of equal length")
    if len(x) == 0:
        raise ValueError("no observations")
    if np.any(x <= 0) or np.any(m < 1):
        raise ValueError("need positive observations and shapes >= 1")
    return x, m


def forward_backward(x, m, params: MmppParams):
    """Scaled forward-backward pass.

    Returns
    -------
    zeta : (T, M) array
        Posterior state marginals.
    xi : (T-1, M, M) array
        Posterior pairwise marginals of consecutive states.
    loglik : float
        Log-likelihood of the observations.
    """
    x, m = _validate_obs(x, m)
    logb = emission_logpdf(x, m, params.rates)
    shift = logb.max(axis=1, keepdims=True)
    b = np.exp(logb - shift)
    T, M = b.shape
    A = params.A
    alpha = np.empty((T, M))
    scale = np.empty(T)
    a = params.pi * b[0]
    scale[0] = a.sum()
    alpha[0] = a / scale[0]
    for t in range(1, T):
        a = (alpha[t - 1] @ A) * b[t]
        scale[t] = a.sum()
        alpha[t] = a / scale[t]
    beta = np.empty((T, M))
    beta[-1] = 1.0
    for t in range(T - 2, -1, -1):
        beta[t] = (A @ (b[t + 1] * beta[t + 1])) / scale[t + 1]
    zeta = alpha * beta
    zeta /= zeta.sum(axis=1, keepdims=True)
    xi = alpha[:-1, :, None] * A[None] * (b[1:] * beta[1:])[:, None, :] / scale[1:, None, None]
    xi /= xi.sum(axis=(1, 2), keepdims=True)
    with np.errstate(divide="ignore"):
        loglik = float(np.log(scale).sum() + shift.sum())
    return zeta, xi, loglik


@dataclass
class EmResult:
    params: MmppParams
    loglik: float
    history: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False
    reinitialized: int = 0


def _initial_params(x, m, n_states, rng) -> MmppParams:
    if n_states == 1:
        return MmppParams(np.ones(1), np.ones((1, 1)), np.array([m.sum() / x.sum()]))
    feat = np.log(x / m)
    _, labels = kmeans2(feat, n_states, minit="++", seed=rng, missing="warn")
    overall = m.sum() / x.sum()
    rates = np.empty(n_states)
    for k in range(n_states):
        sel = labels == k
        rates[k] = m[sel].sum() / x[sel].sum() if sel.any() else overall * np.exp(rng.normal(0.0, 0.5))
    A = np.full((n_states, n_states), 0.1 / (n_states - 1))
    np.fill_diagonal(A, 0.9)
    return MmppParams(np.full(n_states, 1.0 / n_states), A, rates)


def _em_run(x, m, params, max_iter, tol, rng):
    history = []
    reinit = 0
    converged = False
    overall = m.sum() / x.sum()
    for it in range(max_iter):
        zeta, xi, ll = forward_backward(x, m, params)
        history.append(ll)
        if len(history) > 1 and history[-1] - history[-2] < tol:
            converged = True
            break
        weight = zeta.sum(axis=0)
        rates = (zeta * m[:, None]).sum(axis=0) / np.maximum((zeta * x[:, None]).sum(axis=0), 1e-300)
        dead = weight < 1e-10
        if np.any(dead):
            reinit += int(dead.sum())
            log.warning("EM state(s) %s lost all posterior mass; reinitializing their rates", np.flatnonzero(dead))
            rates[dead] = overall * np.exp(rng.normal(0.0, 0.5, dead.sum()))
        pi = zeta[0] / zeta[0].sum()
        if len(x) > 1:
            trans = xi.sum(axis=0)
            rows = trans.sum(axis=1, keepdims=True)
            A = np.where(rows > 0, trans / np.where(rows > 0, rows, 1.0), params.A)
        else:
            A = params.A
        params = MmppParams(pi, A, rates)
    else:
        _, _, ll = forward_backward(x, m, params)
        history.append(ll)
    return EmResult(params, history[-1], history, len(history), converged, reinit)


def em_fit(
    x: Sequence[float],
    m: Sequence[float],
    n_states: int,
    max_iter: int = 200,
    tol: float = 1e-8,
    restarts: int = 5,
    seed: int | None = 0,
) -> EmResult:
    """Fit a Markov-modulated gamma-emission model by EM.

    Each restart is initialized by k-means on ``log(x / m)``; the fit with the
    highest final log-likelihood is returned.  ``history`` holds the
    log-likelihood before every M-step of the winning run.
    """
    x, m = _validate_obs(x, m)
    if n_states < 1:
        raise ValueError("need at least one state")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(1 if n_states == 1 else max(1, restarts)):
        res = _em_run(x, m, _initial_params(x, m, n_states, rng), max_iter, tol, rng)
        if best is None or res.loglik > best.loglik:
            best = res
    return best


def viterbi_map(x, m, params: MmppParams) -> np.ndarray:
    """Most likely hidden state sequence (0-based state indices)."""
    x, m = _validate_obs(x, m)
    logb = emission_logpdf(x, m, params.rates)
    with np.errstate(divide="ignore"):
        logA = np.log(params.A)
        delta = np.log(params.pi) + logb[0]
    T, M = logb.shape
    back = np.empty((T, M), dtype=np.int64)
    for t in range(1, T):
        cand = delta[:, None] + logA
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(M)] + logb[t]
    path = np.empty(T, dtype=np.int64)
    path[-1] = int(np.argmax(delta))
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


def path_logprob(x, m, states, params: MmppParams) -> float:
    """Joint log-probability of observations and a given state path."""
    x, m = _validate_obs(x, m)
    states = np.asarray(states)
    logb = emission_logpdf(x, m, params.rates)
    with np.errstate(divide="ignore"):
        lp = np.log(params.pi[states[0]]) + np.log(params.A[states[:-1], states[1:]]).sum()
    return float(lp + logb[np.arange(len(x)), states].sum())


class OnlineViterbi:
    """Incremental max-product tracker of the current MAP state."""

    def __init__(self, params: MmppParams):
        self.params = params
        with np.errstate(divide="ignore"):
            self._logA = np.log(params.A)
            self._logpi = np.log(params.pi)
        self._delta = None

    @property
    def state(self) -> int:
        """Last state of the MAP path so far (stationary mode before any data)."""
        if self._delta is None:
            return int(np.argmax(self.params.stationary()))
        return int(np.argmax(self._delta))

    def update(self, duration: float, packets: int) -> int:
        if packets < 1:
            return self.state
        logb = emission_logpdf([duration], [packets], self.params.rates)[0]
        if self._delta is None:
            self._delta = self._logpi + logb
        else:
            self._delta = (self._delta[:, None] + self._logA).max(axis=0) + logb
        self._delta -= self._delta.max()
        return self.state


# -- resampling conditional on a hidden state -------------------------------------


def resample_mm_service(
    params: MmppParams,
    state: int,
    packets: int,
    rng: np.random.Generator,
    size: int | None = None,
    mode: str = "packet",
):
    """Chunk times for ``packets`` packets starting in hidden ``state``.

    In ``"packet"`` mode the chain may move between consecutive packets; the
    first packet is served in ``state``.  In ``"chunk"`` mode the whole chunk
    is served in ``state``, i.e. Gamma(packets, rate_state).
    """
    if not 0 <= state < params.n_states:
        raise ValueError(f"state {state} outside [0, {params.n_states})")
    if mode not in ("packet", "chunk"):
        raise ValueError(f"unknown mode {mode!r}")
    scalar = size is None
    n = 1 if scalar else int(size)
    if packets == 0:
        out = np.zeros(n)
        return float(out[0]) if scalar else out
    if mode == "chunk":
        out = rng.gamma(packets, 1.0 / params.rates[state], n)
        return float(out[0]) if scalar else out
    # sojourn-based stepping, vectorized over samples: each sojourn of
    # length L in state s contributes a Gamma(L, rate_s) block
    out = np.zeros(n)
    cur = np.full(n, state, dtype=np.int64)
    left = np.full(n, packets, dtype=np.int64)
    jump = _jump_matrix(params.A)
    cum_jump = np.cumsum(jump, axis=1)
    stay_p = np.diag(params.A)
    active = np.arange(n)
    while active.size:
        s = cur[active]
        leave = 1.0 - stay_p[s]
        stay = np.where(leave > 0, rng.geometric(np.where(leave > 0, leave, 1.0)), left[active])
        take = np.minimum(stay, left[active])
        out[active] += rng.gamma(take, 1.0 / params.rates[s])
        left[active] -= take
        u = rng.random(active.size)
        cur[active] = np.minimum((u[:, None] > cum_jump[s]).sum(axis=1), params.n_states - 1)
        active = active[left[active] > 0]
    return float(out[0]) if scalar else out


# -- persistence ---------------------------------------------------------------------


class TraceFormatError(ValueError):
    pass


def write_params(path, params: MmppParams, loglik: float | None = None) -> None:
    """Plain-text ``key = values`` serialization (round-trips exactly)."""
    lines = [f"states = {params.n_states}", "pi = " + " ".join(repr(float(v)) for v in params.pi)]
    for i, row in enumerate(params.A):
        lines.append(f"A.{i} = " + " ".join(repr(float(v)) for v in row))
    lines.append("lambdas = " + " ".join(repr(float(v)) for v in params.rates))
    if loglik is not None:
        lines.append(f"loglik = {loglik!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_params(path) -> MmppParams:
    kv = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise TraceFormatError(f"{path}:{lineno}: expected 'key = values'")
        key, val = (s.strip() for s in line.split("=", 1))
        kv[key] = val
    try:
        n = int(kv["states"])
        pi = np.array(kv["pi"].split(), dtype=float)
        A = np.array([kv[f"A.{i}"].split() for i in range(n)], dtype=float)
        rates = np.array(kv["lambdas"].split(), dtype=float)
    except (KeyError, ValueError) as exc:
        raise TraceFormatError(f"{path}: malformed parameter file ({exc})") from exc
    return MmppParams(pi, A, rates)


def read_trace(path):
    """Training trace CSV with columns ``x`` (chunk time) and ``m`` (packets)."""
    xs, ms = [], []
    with open(path, newline="") as fh:
        rows = csv.DictReader(line for line in fh if not line.startswith("#"))
        if rows.fieldnames is None or not {"x", "m"} <= set(rows.fieldnames):
            raise TraceFormatError(f"{path}: trace needs a header with columns x,m")
        for lineno, row in enumerate(rows, 2):
            try:
                x, m = float(row["x"]), float(row["m"])
            except (TypeError, ValueError) as exc:
                raise TraceFormatError(f"{path}:{lineno}: {exc}") from exc
            if not (x > 0 and m >= 1 and float(m).is_integer()):
                raise TraceFormatError(f"{path}:{lineno}: need x > 0 and integer m >= 1")
            xs.append(x)
            ms.append(m)
    if not xs:
        raise TraceFormatError(f"{path}: empty trace")
    return np.array(xs), np.array(ms)
