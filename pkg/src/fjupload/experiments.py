"""Table builders behind the CLI subcommands.

Each ``*_rows`` function returns plain rows (lists) ready for ``csv.writer``;
the stream experiment returns per-replication statistics as arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import bounds, intermittent, order_stats
from .adaptive import AdaptiveScheduler, make_sampler
from .config import Config, services_for
from .distributions import Exponential, GridSpec, MmppParams
from .inference import em_fit
from .simulator import (
    BatchJSQScheduler,
    FixedBatches,
    PathConfig,
    PoissonBatches,
    ProportionalScheduler,
    StaticScheduler,
    TrafficConfig,
    draw_streams,
    simulate,
)


def grid_from(cfg: Config) -> GridSpec:
    return GridSpec(step_exp2=cfg["grid"]["step_exp2"], tail_tol=cfg["grid"]["tail_tol"])


def _sweep(cfg: Config, section: str):
    """Yield ``(label, models)``: the base path list, or one list per swept spec."""
    sec = cfg[section]
    base = list(sec["services"])
    if not sec["sweep_services"]:
        yield "base", services_for(cfg, base)
        return
    for spec in sec["sweep_services"]:
        specs = list(base)
        specs[sec["sweep_path"] - 1] = spec
        yield spec, services_for(cfg, specs)


# -- intermittent case ---------------------------------------------------------------


def intermittent_header(n: int) -> list:
    return ["label"] + [f"k{i + 1}" for i in range(n)] + ["psi", "optimal", "proportional"]


def intermittent_rows(cfg: Config) -> list:
    size = cfg["intermittent"]["size"]
    grid = grid_from(cfg)
    rows = []
    for label, models in _sweep(cfg, "intermittent"):
        if not 1 <= len(models) <= 3:
            raise ValueError("the intermittent sweep supports 1 to 3 paths")
        values = {a: order_stats.mean_upload_latency(a, models, grid)
                  for a in intermittent.compositions(size, len(models))}
        best = min(values, key=lambda a: (values[a], a))
        prop = intermittent.proportional_for_models(size, models)
        for a, psi in values.items():
            rows.append([label, *a, repr(psi), int(a == best), int(a == prop)])
    return rows


def sync_rows(cfg: Config) -> tuple:
    """Rows ``(label, K, chi, valid)`` and, per label, the K after which chi stays negative."""
    grid = grid_from(cfg)
    rows, crossings = [], {}
    for label, models in _sweep(cfg, "intermittent"):
        signs = []
        for K in cfg["intermittent"]["sizes"]:
            if K < len(models):
                rows.append([label, K, "", 0])
                continue
            chi = intermittent.synchronization_cost(K, models, grid)
            rows.append([label, K, repr(chi), 1])
            signs.append((K, chi))
        crossings[label] = first_persistent_negative(signs)
    return rows, crossings


def first_persistent_negative(pairs) -> Optional[int]:
    """Smallest K from which every later chi in ``pairs`` is negative."""
    k0 = None
    for K, chi in pairs:
        if chi < 0:
            if k0 is None:
                k0 = K
        else:
            k0 = None
    return k0


def nr_rows(cfg: Config) -> tuple:
    models = services_for(cfg, cfg["nr"]["services"])
    res = intermittent.optimal_nr(len(models), cfg["nr"]["size"], models, grid_from(cfg))
    rows = [[*c, r, repr(eta), repr(regret)] for c, r, eta, regret in res.table]
    return rows, res


def decay_rows(cfg: Config) -> list:
    sec = cfg["decay"]
    arrival = Exponential(sec["arrival_rate"])
    grid = grid_from(cfg)
    rows = []
    for label, models in _sweep(cfg, "decay"):
        try:
            best = bounds.optimal_allocation_by_decay(sec["size"], models, arrival, grid)
            table, best_alloc = best.table, best.alloc
        except bounds.UnstableError:
            table = [(a, bounds.decay_rates(a, models, arrival, grid))
                     for a in intermittent.compositions(sec["size"], len(models))]
            best_alloc = None
        for a, res in table:
            thetas = ["" if t is None else repr(t) for t in res.thetas]
            tilde = "" if res.theta_tilde is None or not res.all_stable else repr(res.theta_tilde)
            rows.append([label, *a, *thetas, tilde, int(res.all_stable), int(a == best_alloc)])
    return rows


# -- stream experiment ----------------------------------------------------------------------


def build_traffic(cfg: Config, horizon: Optional[int] = None) -> TrafficConfig:
    t = cfg["traffic"]
    if t["arrival"] == "mmpp":
        arrival = MmppParams.symmetric(t["arrival_rate"], t["arrival_multipliers"], t["arrival_self_loop"])
    else:
        arrival = Exponential(t["arrival_rate"])
    batches = PoissonBatches(t["batch_size"]) if t["batch"] == "poisson" else FixedBatches(t["batch_size"])
    return TrafficConfig(arrival, batches, t["horizon"] if horizon is None else horizon)


def build_paths(cfg: Config) -> PathConfig:
    return PathConfig(services_for(cfg, cfg["paths"]["services"]), cfg["paths"]["mm_step"])


TRAINING_REP = 1_000_000  # replication index reserved for offline training runs


def train_path_models(cfg: Config, seed: int) -> list:
    """Fit one modulated model per path on a proportional-allocation training run."""
    ad, em = cfg["adaptive"], cfg["em"]
    paths = build_paths(cfg)
    trace = simulate(build_traffic(cfg, ad["mm_train_batches"]), paths, ProportionalScheduler(), seed, TRAINING_REP)
    fitted = []
    for n in range(paths.n_paths):
        k = trace.alloc[:, n]
        sel = (k > 0) & (trace.services[:, n] > 0)
        res = em_fit(trace.services[sel, n], k[sel], ad["mm_states"], em["max_iter"], em["tol"], em["restarts"], seed)
        fitted.append(res.params)
    return fitted


def scheduler_factories(cfg: Config, seed: int) -> list:
    """``(label, factory)`` for every configured policy; adaptive expands per sampler."""
    ad = cfg["adaptive"]
    out = []
    fitted = None
    for policy in cfg["scheduler"]["policies"]:
        if policy == "proportional":
            out.append(("proportional", ProportionalScheduler))
        elif policy == "batch_jsq":
            out.append(("batch_jsq", BatchJSQScheduler))
        elif policy == "static":
            x = cfg["scheduler"]["static_x"]
            out.append(("static", lambda x=x: StaticScheduler(x)))
        else:
            for kind in ad["samplers"]:
                extra = {"prior_shape": ad["prior_shape"], "prior_rate": ad["prior_rate"], "mode": cfg["paths"]["mm_step"]}
                if kind == "mm_map":
                    if fitted is None:
                        fitted = train_path_models(cfg, seed)
                    extra["params"] = fitted

                def factory(kind=kind, extra=extra):
                    return AdaptiveScheduler(
                        make_sampler(kind, ad["samples"], **extra),
                        eta=ad["eta"],
                        history=ad["history"],
                        paper_sign=ad["paper_sign"],
                        window_cap=ad["window_cap"],
                    )

                out.append((f"adaptive_{kind}", factory))
    return out


@dataclass
class StreamResult:
    labels: list
    rep_means: dict  # label -> (R,) mean waiting time per replication
    waits: dict  # label -> pooled waiting times over all replications
    proportions: dict  # label -> (J, N) proportions in force, first replication
    allocations: dict = field(default_factory=dict)  # label -> (J, N) allocations, first replication

    def paired(self, a: str, b: str) -> tuple:
        """Mean and standard error of per-replication ``mean(b) - mean(a)``."""
        d = self.rep_means[b] - self.rep_means[a]
        se = d.std(ddof=1) / math.sqrt(len(d)) if len(d) > 1 else math.nan
        return float(d.mean()), float(se)


def run_stream(cfg: Config, seed: Optional[int] = None, replications: Optional[int] = None,
               progress: Optional[Callable[[str, int], None]] = None) -> StreamResult:
    """All configured schedulers on common random numbers, replication by replication."""
    seed = cfg["run"]["seed"] if seed is None else seed
    R = cfg["traffic"]["replications"] if replications is None else replications
    traffic, paths = build_traffic(cfg), build_paths(cfg)
    factories = scheduler_factories(cfg, seed)
    labels = [lab for lab, _ in factories]
    means = {lab: np.zeros(R) for lab in labels}
    waits = {lab: [] for lab in labels}
    props, allocs = {}, {}
    for rep in range(R):
        for lab, make in factories:
            tr = simulate(traffic, paths, make(), streams=draw_streams(traffic, paths, seed, rep))
            means[lab][rep] = tr.waiting.mean() if tr.horizon else math.nan
            waits[lab].append(tr.waiting)
            if rep == 0:
                props[lab], allocs[lab] = tr.proportions, tr.alloc
            if progress:
                progress(lab, rep)
    pooled = {lab: np.concatenate(w) if w else np.zeros(0) for lab, w in waits.items()}
    return StreamResult(labels, means, pooled, props, allocs)


def stationary_load(cfg: Config) -> float:
    traffic, paths = build_traffic(cfg), build_paths(cfg)
    # long-run packet throughput is 1/E[packet time], also for modulated paths
    capacity = sum(1.0 / m.mean for m in paths.services)
    return traffic.mean_batch / (capacity * traffic.mean_interarrival)
