"""Run configuration: TOML in, validated dataclass out, resolved copy back."""

import copy
from pathlib import Path

import tomli
import tomli_w

from .fmap import DEFAULT_GAMMA, DEFAULT_LAMBDA, MASK_KINDS

DEFAULTS = {
    "seed": 0,
    "basis": {"k": 60, "backend": "auto"},
    "fmap": {"mask": "resolvent", "gamma": DEFAULT_GAMMA, "lambda": DEFAULT_LAMBDA,
             "normalize_mask": False},
    "refine": {"steps": 8, "k_start": 20, "k_end": 60, "rank_rule": True},
    "features": {"source": "wks", "m": 64, "n_energies": 128, "normalize": True},
    "overlap": {"threshold": 0.5},
    "data": {"kind": "cut", "bases": ["icosphere", "capsule", "quadruped"], "n_pairs": 5,
             "n_test": 5, "partiality": [0.2, 0.6], "n_seeds": 3},
    "net": {"widths": [64, 64], "out_dim": 32, "heads": 4, "head_dim": 8, "fps_count": 128,
            "lr": 1e-3, "inputs": ["xyz"], "interpolation": "idw", "overlap_hidden": 32,
            "k": 30, "mask": "resolvent", "gamma": DEFAULT_GAMMA, "lam": DEFAULT_LAMBDA,
            "attention": True},
    "loss": {"w_spec": 1.0, "w_nce": 1.0, "w_over": 1.0, "tau": 0.07, "alpha_bij": 1.0,
             "alpha_orth": 1.0, "mode": "supervised", "nce_samples": 128},
    "train": {"epochs": 100, "augment": True, "augment_mode": "pair"},
    "ablation": {"studies": ["mask", "loss"], "n_pairs": 20, "features": "wks"},
}


class ConfigError(ValueError):
    """Invalid configuration file or value."""


def _merge(base, over, path=""):
    for key, val in over.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown configuration key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{where!r} must be a table")
            _merge(base[key], val, where)
        else:
            if isinstance(base[key], bool) != isinstance(val, bool):
                raise ConfigError(f"{where!r} must be {type(base[key]).__name__}")
            if isinstance(base[key], (int, float)) and not isinstance(val, (int, float)):
                raise ConfigError(f"{where!r} must be a number")
            if isinstance(base[key], int) and not isinstance(base[key], bool) and val != int(val):
                raise ConfigError(f"{where!r} must be an integer")
            if isinstance(base[key], str) and not isinstance(val, str):
                raise ConfigError(f"{where!r} must be a string")
            if isinstance(base[key], list) and not isinstance(val, list):
                raise ConfigError(f"{where!r} must be an array")
            base[key] = val


def _validate(cfg):
    if cfg["basis"]["k"] < 1:
        raise ConfigError("basis.k must be positive")
    if cfg["fmap"]["mask"] not in MASK_KINDS:
        raise ConfigError(f"fmap.mask must be one of {MASK_KINDS}")
    if cfg["fmap"]["lambda"] < 0 or cfg["fmap"]["gamma"] <= 0:
        raise ConfigError("fmap.lambda must be >= 0 and fmap.gamma > 0")
    r = cfg["refine"]
    if r["steps"] < 0 or not 1 <= r["k_start"] <= r["k_end"]:
        raise ConfigError("refine schedule must satisfy steps >= 0 and 1 <= k_start <= k_end")
    if not 0.0 <= cfg["overlap"]["threshold"] <= 1.0:
        raise ConfigError("overlap.threshold must lie in [0, 1]")
    if cfg["train"]["epochs"] < 0:
        raise ConfigError("train.epochs must be >= 0")
    if cfg["train"]["augment_mode"] not in ("pair", "shape"):
        raise ConfigError("train.augment_mode must be 'pair' or 'shape'")
    bad = set(cfg["ablation"]["studies"]) - {"mask", "loss"}
    if bad:
        raise ConfigError(f"unknown ablation studies {sorted(bad)}")


def resolve(overrides=None):
    """Defaults updated by ``overrides`` (a nested dict), validated."""
    cfg = copy.deepcopy(DEFAULTS)
    _merge(cfg, overrides or {})
    _validate(cfg)
    return cfg


def load_config(path):
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except tomli.TOMLDecodeError as err:
        raise ConfigError(f"{path}: {err}") from None
    return resolve(raw)


def dump_config(path, cfg, comments=()):
    """Write the resolved configuration, preceded by ``#`` comment lines."""
    head = "".join(f"# {c}\n" for c in comments)
    Path(path).write_text(head + tomli_w.dumps(cfg))


def net_config(cfg):
    from .learn.nn import ToyNetConfig
    n = dict(cfg["net"])
    n["widths"] = tuple(n["widths"])
    n["inputs"] = tuple(n["inputs"])
    return ToyNetConfig(seed=cfg["seed"], **n)


def loss_config(cfg):
    from .learn.losses import LossConfig
    return LossConfig(**cfg["loss"])
