"""JSON run configuration with the reference experiment as defaults."""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .market import AxisGrid, GridSpec, HestonParams, NoiseSpec
from .sinkhorn import SolverConfig

DEFAULTS = {
    "heston": {
        "s0": 5000.0,
        "v0": 0.15,
        "v_bar": 0.15,
        "lambda": 1.0,
        "eta": 0.05,
        "t1": 0.1,
        "t2": 0.2,
        "dt": 0.01,
        "n_paths": 1_000_000,
        "seed": 0,
        "corr": 0.0,
    },
    "grids": {
        "x": {"lower": 3400.0, "upper": 6400.0, "count": 40},
        "y": {"lower": 3200.0, "upper": 6700.0, "count": 50},
        "z": {"lower": 0.135, "upper": 0.165, "count": 5},
        "c_cap": 30.0,
        "match_means": True,
    },
    "noise": {"sigma1": 100.0, "sigma2": 150.0, "sigma3": 0.01},
    "solver": {
        "max_iters": 1000,
        "g_tol": 1e-12,
        "marginal_tol": 1e-9,
        "martingale_tol": 1e-6,
        "root_tol": 1e-12,
        "trace_every": 1,
        "center": True,
        "mean_tol": 1e-9,
    },
    "verify": {
        "mode": "random",
        "seeds": 20,
        "seed": 0,
        "max_shape": [5, 7, 3],
        "tol": 1e-8,
        "instance_dir": None,
        "potentials_dir": None,
        "transform": None,
        "perturb": 0.0,
    },
    "io": {
        "out_dir": "out",
        "instance_dir": None,
        "timing": False,
        "export_sample": False,
        "z_index": 2,
    },
}


class ConfigError(ValueError):
    pass


def _merge(base, override, path=""):
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be an object")
            _merge(base[key], value, where)
        else:
            base[key] = value
    return base


def load_config(path=None, overrides: dict | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config root must be an object")
        _merge(cfg, user)
    if overrides:
        _merge(cfg, overrides)
    return cfg


def heston_params(cfg) -> HestonParams:
    h = dict(cfg["heston"])
    h["lam"] = h.pop("lambda")
    if not isinstance(h["n_paths"], int) or isinstance(h["n_paths"], bool):
        raise ConfigError("heston.n_paths must be an integer")
    try:
        return HestonParams(**h)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"heston: {exc}") from exc


def grid_spec(cfg) -> GridSpec:
    g = cfg["grids"]
    try:
        return GridSpec(*(AxisGrid(float(g[a]["lower"]), float(g[a]["upper"]),
                                   int(g[a]["count"])) for a in "xyz"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"grids: {exc}") from exc


def noise_spec(cfg) -> NoiseSpec:
    try:
        spec = NoiseSpec(**cfg["noise"])
    except TypeError as exc:
        raise ConfigError(f"noise: {exc}") from exc
    if min(spec.sigma1, spec.sigma2, spec.sigma3) < 0:
        raise ConfigError("noise scales must be nonnegative")
    return spec


def solver_config(cfg) -> SolverConfig:
    s = {k: v for k, v in cfg["solver"].items() if k not in ("center", "mean_tol")}
    try:
        return SolverConfig(**s)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"solver: {exc}") from exc
