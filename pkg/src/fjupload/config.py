"""INI experiment configuration with a fixed schema.

Every section and key is declared in ``SCHEMA``; anything else is rejected.
Values are parsed eagerly so that a bad file fails before any work starts.
"""
from __future__ import annotations

import configparser
import hashlib
import re
from pathlib import Path
from typing import Any, Callable

from .distributions import (
    Exponential,
    Gamma,
    LogNormal,
    MarkovModulatedExp,
    MmppParams,
    ServiceModel,
    Weibull,
)


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in re.split(r"[,\s]+", text.strip()) if v)


def _names(text: str) -> tuple:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _specs(text: str) -> tuple:
    return tuple(v.strip() for v in text.split(";") if v.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_range(text: str) -> tuple:
    """``"2-200"`` or ``"2, 5, 10"``."""
    text = text.strip()
    m = re.fullmatch(r"(\d+)\s*-\s*(\d+)", text)
    if m:
        lo, hi = int(m.group(1)), int(m.group(2))
        return tuple(range(lo, hi + 1))
    return tuple(int(v) for v in re.split(r"[,\s]+", text) if v)


Parser = Callable[[str], Any]

SCHEMA: dict[str, dict[str, tuple[Parser, Any]]] = {
    "run": {
        "name": (str, "run"),
        "seed": (int, 0),
    },
    "grid": {
        "step_exp2": (int, 14),
        "tail_tol": (float, 1e-9),
    },
    "intermittent": {
        "size": (int, 50),
        "services": (_specs, ("exp(4)", "exp(2)")),
        "sweep_path": (int, 0),
        "sweep_services": (_specs, ()),
        "sizes": (_int_range, tuple(range(2, 201))),
    },
    "nr": {
        "size": (int, 6),
        "services": (_specs, ("exp(1)", "exp(5)", "exp(10)")),
    },
    "decay": {
        "size": (int, 30),
        "arrival_rate": (float, 0.5),
        "services": (_specs, ("exp(20)", "exp(40)")),
        "sweep_path": (int, 0),
        "sweep_services": (_specs, ()),
    },
    "traffic": {
        "arrival": (str, "mmpp"),
        "arrival_rate": (float, 1.0),
        "arrival_multipliers": (_floats, (0.5, 1.0, 2.0)),
        "arrival_self_loop": (float, 0.9),
        "batch": (str, "poisson"),
        "batch_size": (int, 100),
        "horizon": (int, 5000),
        "replications": (int, 20),
    },
    "paths": {
        "services": (_specs, ("exp(2.2)", "exp(2.0)", "exp(1.8)", "exp(1.6)", "exp(1.4)")),
        "mm_multipliers": (_floats, (0.5, 1.0, 2.0)),
        "mm_self_loop": (float, 0.999),
        "mm_step": (str, "packet"),
    },
    "scheduler": {
        "policies": (_names, ("proportional", "batch_jsq", "adaptive")),
        "static_x": (_floats, ()),
    },
    "adaptive": {
        "samplers": (_names, ("oracle",)),
        "eta": (float, 1e-3),
        "samples": (int, 100),
        "history": (str, "observed"),
        "paper_sign": (_bool, False),
        "window_cap": (int, 1000),
        "prior_shape": (float, 1.0),
        "prior_rate": (float, 1.0),
        "mm_states": (int, 3),
        "mm_train_batches": (int, 2000),
    },
    "em": {
        "states": (int, 3),
        "max_iter": (int, 200),
        "tol": (float, 1e-8),
        "restarts": (int, 5),
    },
    "output": {
        "ccdf_points": (int, 200),
        "dump_traces": (_bool, False),
    },
}

_CHOICES = {
    ("traffic", "arrival"): ("mmpp", "exp"),
    ("traffic", "batch"): ("poisson", "fixed"),
    ("paths", "mm_step"): ("packet", "chunk"),
    ("adaptive", "history"): ("observed", "resampled"),
}

_POLICIES = ("static", "proportional", "batch_jsq", "adaptive")
_SAMPLERS = ("oracle", "iid_posterior", "mm_map", "ose")


class Config(dict):
    """``section -> {key: value}`` with every default filled in."""

    text_hash: str = ""

    def __getattr__(self, name):
        try:
            return self[name]
        except KeyError as exc:
            raise AttributeError(name) from exc


def parse_service(spec: str, mm_multipliers=(0.5, 1.0, 2.0), mm_self_loop: float = 0.999) -> ServiceModel:
    """``exp(rate)``, ``gamma(shape,rate)``, ``weibull(scale,shape)``, ``lognormal(mu,sigma)``, ``mm(base_rate)``."""
    m = re.fullmatch(r"\s*([a-z]+)\s*\(([^)]*)\)\s*", spec)
    if not m:
        raise ConfigError(f"cannot parse service spec {spec!r}")
    kind = m.group(1)
    try:
        args = tuple(float(a) for a in m.group(2).split(",") if a.strip())
    except ValueError as exc:
        raise ConfigError(f"non-numeric argument in {spec!r}") from exc
    arity = {"exp": 1, "gamma": 2, "weibull": 2, "lognormal": 2, "mm": 1}
    if kind not in arity:
        raise ConfigError(f"unknown service kind {kind!r} in {spec!r}")
    if len(args) != arity[kind]:
        raise ConfigError(f"{kind} takes {arity[kind]} argument(s), got {len(args)} in {spec!r}")
    try:
        if kind == "exp":
            return Exponential(*args)
        if kind == "gamma":
            return Gamma(*args)
        if kind == "weibull":
            return Weibull(*args)
        if kind == "lognormal":
            return LogNormal(*args)
        return MarkovModulatedExp(MmppParams.symmetric(args[0], mm_multipliers, mm_self_loop))
    except ValueError as exc:
        raise ConfigError(f"{spec!r}: {exc}") from exc


def parse_config(text: str, source: str = "<config>") -> Config:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";;"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    cfg = Config()
    for section, keys in SCHEMA.items():
        cfg[section] = {k: default for k, (_, default) in keys.items()}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            parser, _ = SCHEMA[section][key]
            try:
                cfg[section][key] = parser(raw)
            except ValueError as exc:
                raise ConfigError(f"{source}: [{section}] {key} = {raw!r}: {exc}") from exc
    _validate(cfg, source)
    canon = "\n".join(f"{s}.{k}={cfg[s][k]!r}" for s in sorted(cfg) for k in sorted(cfg[s]))
    cfg.text_hash = hashlib.sha256(canon.encode()).hexdigest()[:16]
    return cfg


def load_config(path) -> Config:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(p))


def _validate(cfg: Config, source: str) -> None:
    for (section, key), allowed in _CHOICES.items():
        if cfg[section][key] not in allowed:
            raise ConfigError(f"{source}: [{section}] {key} must be one of {allowed}")
    for p in cfg["scheduler"]["policies"]:
        if p not in _POLICIES:
            raise ConfigError(f"{source}: unknown policy {p!r}; choose from {_POLICIES}")
    for s in cfg["adaptive"]["samplers"]:
        if s not in _SAMPLERS:
            raise ConfigError(f"{source}: unknown sampler {s!r}; choose from {_SAMPLERS}")
    positive = [("traffic", "arrival_rate"), ("adaptive", "eta"), ("decay", "arrival_rate"), ("grid", "tail_tol")]
    for section, key in positive:
        if not cfg[section][key] > 0:
            raise ConfigError(f"{source}: [{section}] {key} must be positive")
    for section, key in [("traffic", "horizon"), ("traffic", "batch_size")]:
        if cfg[section][key] < 0:
            raise ConfigError(f"{source}: [{section}] {key} must be >= 0")
    if cfg["traffic"]["replications"] < 1 or cfg["adaptive"]["samples"] < 1:
        raise ConfigError(f"{source}: replications and samples must be >= 1")
    if not 0.0 <= cfg["traffic"]["arrival_self_loop"] <= 1.0 or not 0.0 <= cfg["paths"]["mm_self_loop"] <= 1.0:
        raise ConfigError(f"{source}: self-loop probabilities must lie in [0, 1]")
    for section in ("intermittent", "decay"):
        n = len(cfg[section]["services"])
        sp = cfg[section]["sweep_path"]
        if sp and not 1 <= sp <= n:
            raise ConfigError(f"{source}: [{section}] sweep_path must lie in [1, {n}]")
        if cfg[section]["sweep_services"] and not sp:
            raise ConfigError(f"{source}: [{section}] sweep_services needs sweep_path")
    # service specs must parse
    for section in ("intermittent", "nr", "decay", "paths"):
        specs = list(cfg[section]["services"]) + list(cfg[section].get("sweep_services", ()))
        for spec in specs:
            services_for(cfg, [spec])


def services_for(cfg: Config, specs) -> tuple:
    return tuple(parse_service(s, cfg["paths"]["mm_multipliers"], cfg["paths"]["mm_self_loop"]) for s in specs)


def config_hash(cfg: Config) -> str:
    return cfg.text_hash
