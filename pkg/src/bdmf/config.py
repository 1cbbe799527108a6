"""Run configuration: JSON file + flag overrides -> model, law, grid.

Precedence is flags > file > defaults.  The effective configuration is
hashed (sha256 of its canonical JSON) and embedded in every output file,
so identical configs are recognizable and outputs are byte-reproducible.
"""

import hashlib
import json
from typing import Optional

import numpy as np

from .measure import DistN, delta, geometric, poisson, uniform
from .rates import (
    NoInteraction,
    QuadraticPairwise,
    RateModel,
    linear_attraction,
    mm_inf_model,
    power_model,
    tabulated_model,
)

__all__ = ["ConfigError", "load_config", "merge", "build_model", "build_law",
           "build_grid", "config_hash", "DEFAULT_CONFIG"]


class ConfigError(ValueError):
    """Bad or inconsistent run configuration."""


DEFAULT_CONFIG = {
    "model": {
        "family": "mm_inf",
        "p": 3.0,
        "q": 5.0,
        "a": 1.0,
        "interaction": {"kind": "attraction", "strength": 1.0},
        "declared_lambda": None,
        "declared_alpha": None,
    },
    "experiment": {
        "N": 10,
        "N_list": [8, 16, 32, 64, 128, 256],
        "t_max": 3.0,
        "dt": None,
        "grid": {"start": 0.0, "stop": 3.0, "num": 31},
        "n_replicas": 1000,
        "epsilons": [0.1, 0.2],
        "delta": 0.5,
        "burn_in": 10.0,
        "n_samples": 20,
        "spacing": 1.0,
        "n_states": 10000,
        "coord_max": 100,
        "K": 4,
        "k_max": 20,
        "n_max": 100,
        "init": {"kind": "delta", "at": 0},
        "init_b": {"kind": "delta", "at": 3},
    },
    "io": {"outdir": "results", "formats": ["csv", "json"]},
    "seed": 12345,
    "threads": None,
}


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON (line {exc.lineno}): {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    return doc


def _deep_merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def merge(file_cfg: dict, overrides: dict) -> dict:
    """defaults <- file <- overrides (flags)."""
    return _deep_merge(_deep_merge(DEFAULT_CONFIG, file_cfg), overrides)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()[:16]


def _interaction(cfg: dict):
    kind = cfg.get("kind", "none")
    if kind == "none":
        return NoInteraction()
    if kind == "attraction":
        return linear_attraction(float(cfg.get("strength", 1.0)))
    if kind == "quadratic":
        return QuadraticPairwise(a=float(cfg.get("a", 1.0)))
    raise ConfigError(f"unknown interaction kind {kind!r} "
                      "(expected none | attraction | quadratic)")


def build_model(mcfg: dict) -> RateModel:
    fam = mcfg.get("family", "mm_inf")
    inter = _interaction(mcfg.get("interaction", {"kind": "none"}))
    dl = mcfg.get("declared_lambda")
    da = mcfg.get("declared_alpha")
    try:
        if fam == "mm_inf":
            model = mm_inf_model(float(mcfg["p"]), float(mcfg["q"]), interaction=inter,
                                 declared_lambda=dl, declared_alpha=da)
        elif fam == "power":
            model = power_model(float(mcfg["p"]), float(mcfg["q"]), float(mcfg.get("a", 1.0)),
                                interaction=inter, declared_lambda=dl, declared_alpha=da)
        elif fam == "table":
            tail = build_model({**mcfg["tail"], "interaction": {"kind": "none"}})
            model = tabulated_model(mcfg["birth_table"], mcfg["death_table"], tail,
                                    interaction=inter)
        else:
            raise ConfigError(f"unknown model family {fam!r} (expected mm_inf | power | table)")
    except KeyError as exc:
        raise ConfigError(f"model family {fam!r} is missing parameter {exc}") from exc
    try:
        model.validate()
    except ValueError as exc:
        raise ConfigError(f"model fails validation: {exc}") from exc
    return model


def build_law(icfg: dict) -> DistN:
    kind = icfg.get("kind", "delta")
    try:
        if kind == "delta":
            return delta(int(icfg.get("at", 0)), K=icfg.get("K"))
        if kind == "poisson":
            return poisson(float(icfg["mu"]), int(icfg.get("K", 40)))
        if kind == "uniform":
            return uniform(int(icfg["K"]))
        if kind == "geometric":
            return geometric(float(icfg["r"]), int(icfg.get("K", 40)))
        if kind == "table":
            return DistN(np.asarray(icfg["mass"], dtype=np.float64))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad initial law: {exc}") from exc
    raise ConfigError(f"unknown initial law kind {kind!r}")


def build_grid(gcfg, t_max: Optional[float] = None) -> np.ndarray:
    if isinstance(gcfg, dict):
        try:
            grid = np.linspace(float(gcfg["start"]), float(gcfg["stop"]), int(gcfg["num"]))
        except KeyError as exc:
            raise ConfigError(f"grid spec missing {exc}") from exc
    else:
        grid = np.asarray([float(v) for v in gcfg], dtype=np.float64)
    if grid.size == 0 or (np.diff(grid) < 0).any():
        raise ConfigError("grid must be nonempty and sorted")
    if t_max is not None and grid[-1] > t_max + 1e-12:
        raise ConfigError(f"grid ends at {grid[-1]} beyond t_max={t_max}")
    return grid
