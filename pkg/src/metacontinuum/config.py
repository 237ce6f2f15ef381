"""INI experiment configuration.

Sections: ``[experiment]``, ``[rtt]``, one per layer (``[edge]``, ``[fog]``,
``[cloud]``), ``[trace]`` and ``[generate]``.  In a layer section the keys
``capacity``, ``predictor`` and ``prefetch_ttl`` are structural; any other
key is passed to the predictor.  ``--set section.key=value`` overrides win
over the file.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import asdict, fields

from .continuum.topology import LINKS
from .replay import LayerConfig, ReplayConfig, resolve_capacity
from .predictors import PREDICTORS
from .trace import TraceSpec

ENV_VAR = "METACONTINUUM_CONFIG"
LAYERS = ("edge", "fog", "cloud")
_LAYER_KEYS = ("capacity", "predictor", "prefetch_ttl")


class ConfigError(ValueError):
    pass


def coerce(text: str):
    t = text.strip()
    low = t.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", ""):
        return None
    for cast in (int, float):
        try:
            return cast(t)
        except ValueError:
            pass
    return t


def load(path=None, overrides=()) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep key case
    path = path or os.environ.get(ENV_VAR)
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        cp.read(path, encoding="utf-8")
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, option = key.strip().partition(".")
        if not sep or not dot or not option:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, option, value.strip())
    return cp


def _section(cp, name) -> dict:
    return {k: coerce(v) for k, v in cp.items(name)} if cp.has_section(name) else {}


def replay_config(cp) -> ReplayConfig:
    exp = _section(cp, "experiment")
    cfg = ReplayConfig()
    known = {f.name for f in fields(ReplayConfig)} - set(LAYERS) - {"rtts"}
    for k, v in exp.items():
        if k not in known:
            raise ConfigError(f"[experiment] unknown key {k!r}")
        setattr(cfg, k, v)
    cfg.topology = str(cfg.topology).upper()
    if cfg.topology not in ("E", "EC", "EFC"):
        raise ConfigError(f"topology must be E, EC or EFC, got {cfg.topology!r}")
    if cfg.backend not in ("direct", "pool"):
        raise ConfigError("backend must be direct or pool")
    if int(cfg.services) < 1 or int(cfg.pipeline_capacity) < 1:
        raise ConfigError("services and pipeline_capacity must be >= 1")
    cfg.rtts = {k: float(v) for k, v in _section(cp, "rtt").items()}
    for k, v in cfg.rtts.items():
        if k not in LINKS[cfg.topology]:
            raise ConfigError(f"[rtt] {k!r} is not a link of {cfg.topology}: {', '.join(LINKS[cfg.topology])}")
        if v < 0:
            raise ConfigError(f"[rtt] {k} must be >= 0")
    for layer in LAYERS:
        sec = _section(cp, layer)
        lc = getattr(cfg, layer)
        if "capacity" in sec:
            lc.capacity = None if sec["capacity"] is None else str(sec["capacity"])
            try:
                resolve_capacity(lc.capacity, 100)
            except ValueError as exc:
                raise ConfigError(f"[{layer}] capacity: {exc}") from None
        if "predictor" in sec:
            lc.predictor = str(sec["predictor"] or "none")
            if lc.predictor not in PREDICTORS:
                raise ConfigError(f"[{layer}] unknown predictor {lc.predictor!r}")
        if "prefetch_ttl" in sec:
            lc.prefetch_ttl = int(sec["prefetch_ttl"])
            if lc.prefetch_ttl < 0:
                raise ConfigError(f"[{layer}] prefetch_ttl must be >= 0")
        lc.params = {k: v for k, v in sec.items() if k not in _LAYER_KEYS}
    if cfg.cloud.predictor != "none":
        raise ConfigError("the cloud layer does not run a predictor")
    return cfg


def trace_spec(cp) -> tuple[TraceSpec, int]:
    sec = _section(cp, "generate")
    seed = int(sec.pop("seed", 0) or 0)
    known = {f.name for f in fields(TraceSpec)}
    kw = {}
    for k, v in sec.items():
        if k in ("overlap",):
            continue
        if k not in known:
            raise ConfigError(f"[generate] unknown key {k!r}")
        if k in ("hot_dir_size", "scan_size", "suffix_scan_size", "gap_ms"):
            lo, _, hi = str(v).partition("-")
            v = (int(lo), int(hi or lo))
        kw[k] = v
    return TraceSpec(**kw), seed


def as_dict(cfg: ReplayConfig) -> dict:
    return asdict(cfg)
