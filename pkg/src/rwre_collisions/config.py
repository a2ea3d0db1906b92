"""Run configuration: a TOML tree with defaults, strict keys and flag overrides."""

from __future__ import annotations

import copy
import sys

from .environment import make_law
from .errors import ConfigError
from .experiments import PROBES, ExperimentConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULTS = {
    "seed": 0,
    "threads": None,
    "law": {"kind": "two_point", "atoms": [[0.75, 0.6], [0.25, 0.4]]},
    "schedule": {"kappa": None, "epsilon": "auto", "C0": 2.0, "horizon_cap": 10**7,
                 "i_max": 30},
    "walkers": {"d": 1, "p": 1, "starts": None},
    "experiment": {
        "probe": None,
        "horizon": 10**6,
        "replicas": 200,
        "environments": 20,
        "i_list": [1, 2, 3],
        "n_grid": None,
        "envelope_constant": 2.0,
        "bootstrap": 2000,
        "mode": "dp",
        "x_start": 0,
        "window_halfwidth": None,
        "compare_law": None,
    },
    "output": {"dir": "out"},
}

# blocks whose contents are validated elsewhere
_OPAQUE = {"law", "compare_law"}


def _merge(base: dict, over: dict, path=""):
    for key, val in over.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and key not in _OPAQUE:
            if not isinstance(val, dict):
                raise ConfigError(f"config key {where!r} must be a table")
            _merge(base[key], val, where + ".")
        else:
            base[key] = val


def resolve(tree: dict | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then the file tree, then dotted-key overrides (flags win)."""
    cfg = copy.deepcopy(DEFAULTS)
    _merge(cfg, tree or {})
    for dotted, val in (overrides or {}).items():
        if val is None:
            continue
        *parents, leaf = dotted.split(".")
        node = {leaf: val}
        for p in reversed(parents):
            node = {p: node}
        _merge(cfg, node)
    return validate(cfg)


def load(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def validate(cfg: dict) -> dict:
    cfg["law"] = make_law(cfg["law"]).to_descriptor()
    exp = cfg["experiment"]
    if exp["compare_law"] is not None:
        exp["compare_law"] = make_law(exp["compare_law"]).to_descriptor()
    if exp["probe"] is not None and exp["probe"] not in PROBES:
        raise ConfigError(f"unknown probe {exp['probe']!r}; expected one of {PROBES}")
    w = cfg["walkers"]
    d, p = int(w["d"]), int(w["p"])
    if d < 0 or p < 0:
        raise ConfigError("walkers.d and walkers.p must be nonnegative")
    starts = w["starts"] if w["starts"] is not None else [0] * (d + p)
    if len(starts) != d + p:
        raise ConfigError(f"walkers.starts needs d + p = {d + p} entries, got {len(starts)}")
    w.update(d=d, p=p, starts=[int(x) for x in starts])
    if exp["mode"] not in ("dp", "mc"):
        raise ConfigError(f"experiment.mode must be 'dp' or 'mc', got {exp['mode']!r}")
    return cfg


def experiment_config(cfg: dict, law=None) -> ExperimentConfig:
    w, exp, sch = cfg["walkers"], cfg["experiment"], cfg["schedule"]
    d = w["d"]
    return ExperimentConfig(
        law=law or cfg["law"], d=d, p=w["p"], s_starts=tuple(w["starts"][:d]),
        z_starts=tuple(w["starts"][d:]), horizon=int(exp["horizon"]),
        replicas=int(exp["replicas"]), environments=int(exp["environments"]),
        master_seed=int(cfg["seed"]), kappa=sch["kappa"], epsilon=sch["epsilon"],
        C0=float(sch["C0"]), horizon_cap=int(sch["horizon_cap"]),
        i_list=tuple(exp["i_list"]), n_grid=exp["n_grid"],
        envelope_constant=float(exp["envelope_constant"]), bootstrap=int(exp["bootstrap"]),
        mode=exp["mode"], x_start=int(exp["x_start"]),
        window_halfwidth=exp["window_halfwidth"],
    ).validate()
