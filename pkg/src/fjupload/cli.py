"""fjup command line: one subcommand per analysis, CSV out.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .bounds import UnstableError
from .config import ConfigError, load_config
from .inference import TraceFormatError, em_fit, read_trace, write_params
from .intermittent import RootNotBracketed, SearchSpaceError
from .order_stats import DivergentIntegralError
from .simulator import ccdf, write_ccdf_csv, write_trace_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("fjup")


def _header(cfg, seed, command):
    return [f"config-hash: {cfg.text_hash}", f"command: {command}", f"seed: {seed}"]


def _write_csv(path: Path, header_lines, columns, rows):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        w.writerows(rows)


def cmd_intermittent(cfg, args):
    rows = ex.intermittent_rows(cfg)
    n = len(cfg["intermittent"]["services"])
    out = args.out / "intermittent.csv"
    _write_csv(out, _header(cfg, args.seed, "intermittent"), ex.intermittent_header(n), rows)
    for r in rows:
        if r[-2]:
            print(f"{r[0]}: optimal allocation {tuple(r[1:1 + n])} psi={float(r[1 + n]):.6g}")
    return out


def cmd_sync(cfg, args):
    rows, crossings = ex.sync_rows(cfg)
    out = args.out / "sync_cost.csv"
    header = _header(cfg, args.seed, "sync")
    header += [f"allocate-from {label}: K={k0}" for label, k0 in crossings.items()]
    _write_csv(out, header, ["label", "K", "chi", "valid"], rows)
    for label, k0 in crossings.items():
        print(f"{label}: chi < 0 for every K >= {k0}" if k0 else f"{label}: no persistent sign change")
    return out


def cmd_nr(cfg, args):
    rows, res = ex.nr_rows(cfg)
    n = len(cfg["nr"]["services"])
    out = args.out / "nr_trellis.csv"
    _write_csv(out, _header(cfg, args.seed, "nr"), [f"k{i + 1}" for i in range(n)] + ["r", "eta", "regret"], rows)
    print(f"optimal r={res.r} allocation={res.chunks} latency={res.latency:.6g}")
    return out


def cmd_decay(cfg, args):
    rows = ex.decay_rows(cfg)
    n = len(cfg["decay"]["services"])
    cols = ["label"] + [f"k{i + 1}" for i in range(n)] + [f"theta{i + 1}" for i in range(n)]
    cols += ["theta_tilde", "stable", "optimal"]
    out = args.out / "decay.csv"
    _write_csv(out, _header(cfg, args.seed, "decay"), cols, rows)
    for r in rows:
        if r[-1]:
            print(f"{r[0]}: best allocation {tuple(r[1:1 + n])} theta_tilde={float(r[-3]):.6g}")
    return out


def cmd_stream(cfg, args):
    res = ex.run_stream(cfg, seed=args.seed,
                        progress=lambda lab, rep: log.info("replication %d done: %s", rep, lab))
    header = _header(cfg, args.seed, "stream")
    points = cfg["output"]["ccdf_points"]
    allw = np.concatenate([w for w in res.waits.values()]) if res.waits else np.zeros(0)
    top = float(allw.max()) if allw.size else 0.0
    sigma = np.linspace(0.0, top, points)
    summary = []
    for lab in res.labels:
        w = res.waits[lab]
        write_ccdf_csv(args.out / f"ccdf_{lab}.csv", ccdf(w, sigma), header)
        if w.size:
            m = res.rep_means[lab]
            se = m.std(ddof=1) / np.sqrt(len(m)) if len(m) > 1 else float("nan")
            p50, p95, p99 = np.percentile(w, [50, 95, 99])
            summary.append([lab, len(m), w.size, repr(float(m.mean())), repr(float(se)), repr(p50), repr(p95), repr(p99)])
            print(f"{lab}: mean waiting {m.mean():.4g} (se {se:.2g}), p95 {p95:.4g}")
        else:
            summary.append([lab, len(res.rep_means[lab]), 0, "", "", "", "", ""])
        props = res.proportions[lab]
        allocs = res.allocations[lab]
        n = props.shape[1] if props.ndim == 2 else 0
        _write_csv(args.out / f"allocation_{lab}.csv", header,
                   ["j"] + [f"x{i + 1}" for i in range(n)] + [f"k{i + 1}" for i in range(n)],
                   [[j + 1, *map(repr, map(float, props[j])), *map(int, allocs[j])] for j in range(len(props))])
    _write_csv(args.out / "summary.csv", header,
               ["scheduler", "replications", "samples", "mean_wait", "se", "p50", "p95", "p99"], summary)
    if cfg["output"]["dump_traces"]:
        from .simulator import draw_streams, simulate

        traffic, paths = ex.build_traffic(cfg), ex.build_paths(cfg)
        for lab, make in ex.scheduler_factories(cfg, args.seed):
            tr = simulate(traffic, paths, make(), streams=draw_streams(traffic, paths, args.seed, 0))
            write_trace_csv(args.out / f"trace_{lab}.csv", tr, header)
    return args.out / "summary.csv"


def cmd_train_mm(cfg, args):
    if args.trace is None:
        raise ConfigError("train-mm needs --trace FILE")
    x, m = read_trace(args.trace)
    em = cfg["em"]
    res = em_fit(x, m, em["states"], em["max_iter"], em["tol"], em["restarts"], args.seed)
    out = args.out / "mm_params.txt"
    write_params(out, res.params, res.loglik)
    print(f"final log-likelihood {res.loglik:.10g} after {res.n_iter} iterations")
    return out


COMMANDS = {
    "intermittent": (cmd_intermittent, "mean upload latency over all allocations"),
    "sync": (cmd_sync, "synchronization cost against data size"),
    "nr": (cmd_nr, "(N, r)-strategies with their regret"),
    "decay": (cmd_decay, "effective decay rate per allocation"),
    "stream": (cmd_stream, "stream-upload simulation comparing schedulers"),
    "train-mm": (cmd_train_mm, "fit a modulated service model to a trace"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fjup", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--seed", type=int, default=None, help="overrides [run] seed")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        if name == "train-mm":
            p.add_argument("--trace", type=Path, help="CSV with columns x,m")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is None:
            args.seed = cfg["run"]["seed"]
        try:
            args.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"output directory {args.out} not writable: {exc}") from exc
        COMMANDS[args.command][0](cfg, args)
    except (ConfigError, TraceFormatError) as exc:
        print(f"fjup: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"fjup: cannot write output: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, UnstableError, SearchSpaceError, DivergentIntegralError, RootNotBracketed,
            ValueError, TypeError) as exc:
        print(f"fjup: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
