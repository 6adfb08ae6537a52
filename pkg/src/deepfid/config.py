"""Experiment configuration: YAML files, shipped presets and validation."""

from __future__ import annotations

import copy
import math
from pathlib import Path

import yaml

from .models import MODELS, BOD_OBSERVATION, ModelError, make_model


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration (CLI exit code 2)."""


MODES = ("train", "sample", "sweep", "coverage", "bod-compare")

DEFAULTS = {
    "mode": None,
    "seed": None,
    "out": "runs/out",
    "threads": 1,
    "model": {"name": None, "constants": {}},
    "encoder": {"hidden_layers": [64] * 9, "weights": None},
    "train": {
        "w1": 1.0, "w2": 1.0, "epochs": 10, "batch_size": 128, "learning_rate": 1e-3,
        "adam_beta1": 0.9, "adam_beta2": 0.999, "adam_epsilon": 1e-8,
        "train_fraction": 0.8, "n_train_params": 100_000,
        "param_low": None, "param_high": None,
        # centre the training box on the least-squares fit of the observation
        "pilot_centered": False, "pilot_rel": 0.5,
    },
    "afc": {
        "enabled": False, "epsilon": None, "threshold_quantile": 0.05, "pilot_size": 10_000,
        "max_itr": None, "distance": "l2",
    },
    "inference": {"alpha": 0.9, "n_fid": 1000, "grid_points": 512, "grid_margin": 0.05},
    "coverage": {"truths": [], "n_datasets": 200},
    "sweep": {"epsilons": None, "quantiles": [1.0, 0.5, 0.2, 0.05], "pool_size": 20_000},
    "observation": {"values": None, "file": None, "truth": None},
    "bod": {"n_boot": 1000, "mcmc_samples": 50_000, "burn_in": 5_000, "grid_points": 400,
            "coarse_bounds": [[0.01, 5.0], [0.001, 2.0]], "contour_points": 80},
}

PRESETS = {
    "laplace-noafc": {
        "mode": "coverage", "seed": 20240101, "out": "runs/laplace-noafc",
        "model": {"name": "laplace", "constants": {"m": 100}},
        "coverage": {"truths": [[0.0, 1.0]], "n_datasets": 200},
    },
    "laplace-afc": {
        "mode": "coverage", "seed": 20240101, "out": "runs/laplace-afc",
        "model": {"name": "laplace", "constants": {"m": 100}},
        "afc": {"enabled": True},
        "coverage": {"truths": [[0.0, 1.0]], "n_datasets": 200},
    },
    "laplace-sample": {
        "mode": "sample", "seed": 20240101, "out": "runs/laplace-sample",
        "model": {"name": "laplace", "constants": {"m": 100}},
        "afc": {"enabled": True},
        "observation": {"truth": [0.0, 1.0]},
    },
    "nonlinear-train": {
        "mode": "train", "seed": 20240102, "out": "runs/nonlinear-train",
        "model": {"name": "nonlinear-q", "constants": {"m": 3, "q": 3.0}},
        "train": {"param_low": [0.0], "param_high": [6.0]},
    },
    "nonlinear-noafc": {
        "mode": "coverage", "seed": 20240102, "out": "runs/nonlinear-noafc",
        "model": {"name": "nonlinear-q", "constants": {"m": 3, "q": 3.0}},
        "train": {"param_low": [0.0], "param_high": [6.0]},
        "coverage": {"truths": [[1.0], [2.0], [3.0], [4.0]], "n_datasets": 200},
    },
    "nonlinear-afc": {
        "mode": "coverage", "seed": 20240102, "out": "runs/nonlinear-afc",
        "model": {"name": "nonlinear-q", "constants": {"m": 3, "q": 3.0}},
        "train": {"param_low": [0.0], "param_high": [6.0]},
        "afc": {"enabled": True},
        "coverage": {"truths": [[1.0], [2.0], [3.0], [4.0]], "n_datasets": 200},
    },
    "nonlinear-sweep": {
        "mode": "sweep", "seed": 20240102, "out": "runs/nonlinear-sweep",
        "model": {"name": "nonlinear-q", "constants": {"m": 3, "q": 3.0}},
        "train": {"param_low": [0.0], "param_high": [6.0]},
        "observation": {"truth": [3.5]},
        "sweep": {"quantiles": [1.0, 0.5, 0.2, 0.05], "pool_size": 20_000},
    },
    "bod-compare": {
        "mode": "bod-compare", "seed": 20240103, "out": "runs/bod-compare",
        "model": {"name": "bod", "constants": {}},
        "train": {"pilot_centered": True, "pilot_rel": 0.5},
        "afc": {"enabled": True},
        "observation": {"values": list(BOD_OBSERVATION)},
    },
    "smoke": {
        "mode": "coverage", "seed": 7, "out": "runs/smoke",
        "model": {"name": "laplace", "constants": {"m": 100}},
        "afc": {"enabled": True, "pilot_size": 1000},
        "inference": {"n_fid": 200},
        "coverage": {"truths": [[0.0, 1.0]], "n_datasets": 2},
    },
}


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict) and k != "constants":
            if not isinstance(v, dict):
                raise ConfigError(f"config key {path + k!r} must be a mapping")
            out[k] = _merge(base[k], v, path + k + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


def preset(name: str) -> dict:
    try:
        return copy.deepcopy(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def load_config_file(path) -> dict:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path} does not hold a mapping")
    return doc


def resolve(raw: dict, **overrides) -> dict:
    """Defaults <- raw <- non-None overrides, then validate; returns the full config."""
    cfg = _merge(DEFAULTS, raw)
    for k, v in overrides.items():
        if v is not None:
            cfg[k] = v
    validate(cfg)
    return cfg


def build_model(cfg):
    try:
        return make_model(cfg["model"]["name"], **(cfg["model"]["constants"] or {}))
    except (TypeError, ModelError) as exc:
        raise ConfigError(f"bad model settings: {exc}") from None


def validate(cfg: dict):
    if cfg["mode"] not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool) or cfg["seed"] < 0:
        raise ConfigError("a non-negative integer master seed is required")
    if not isinstance(cfg["threads"], int) or cfg["threads"] < 1:
        raise ConfigError("threads must be a positive integer")
    if cfg["model"]["name"] not in MODELS:
        raise ConfigError(f"model.name must be one of {sorted(MODELS)}")
    model = build_model(cfg)
    p, m = model.param_dim, model.data_dim

    tr = cfg["train"]
    for key in ("param_low", "param_high"):
        if tr[key] is not None and len(tr[key]) != p:
            raise ConfigError(f"train.{key} has {len(tr[key])} entries, model has {p} parameters")
    if not tr["pilot_centered"] and cfg["mode"] != "train" and model.inverse is None \
            and cfg["encoder"]["weights"] is None and tr["param_low"] is None:
        raise ConfigError("an encoder is needed: give encoder.weights, a training box, or pilot_centered")
    if tr["epochs"] < 0 or tr["batch_size"] < 1 or not 0 < tr["train_fraction"] < 1:
        raise ConfigError("invalid training settings")
    if tr["w1"] < 0 or tr["w2"] < 0 or tr["w1"] + tr["w2"] <= 0:
        raise ConfigError("train.w1 and train.w2 must be nonnegative and not both zero")
    if not cfg["encoder"]["hidden_layers"]:
        raise ConfigError("encoder.hidden_layers must be non-empty")

    w = cfg["encoder"]["weights"]
    if w is not None and cfg["mode"] != "train":
        if not Path(w).is_file():
            raise ConfigError(f"encoder weight file {w} does not exist")
        from .encoder import load_weights
        try:
            spec, _ = load_weights(w)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"unreadable weight file {w}: {exc}") from None
        if spec.input_dim != 2 * m or spec.output_dim != p:
            raise ConfigError(f"weight file {w} does not fit model {model.name} (m={m}, p={p})")

    a = cfg["afc"]
    if a["epsilon"] is not None and not a["epsilon"] >= 0:
        raise ConfigError("afc.epsilon must be nonnegative")
    if not 0 < a["threshold_quantile"] <= 1:
        raise ConfigError("afc.threshold_quantile must lie in (0, 1]")
    if a["pilot_size"] < 100:
        raise ConfigError("afc.pilot_size must be at least 100")
    if a["max_itr"] is not None and a["max_itr"] < cfg["inference"]["n_fid"]:
        raise ConfigError("afc.max_itr must be at least inference.n_fid")
    if a["distance"] not in ("l2", "frobenius"):
        raise ConfigError("afc.distance must be 'l2' or 'frobenius'")

    inf = cfg["inference"]
    if not 0 < inf["alpha"] < 1:
        raise ConfigError("inference.alpha must lie in (0, 1)")
    if inf["n_fid"] < 1 or inf["grid_points"] < 1:
        raise ConfigError("inference.n_fid and grid_points must be positive")

    if cfg["mode"] == "coverage":
        truths = cfg["coverage"]["truths"]
        if not truths:
            raise ConfigError("coverage.truths is empty")
        for t in truths:
            if len(t) != p:
                raise ConfigError(f"truth {t} has {len(t)} entries, model has {p} parameters")
            if not all(lo <= v <= hi for v, lo, hi in zip(t, model.lower, model.upper)):
                raise ConfigError(f"truth {t} lies outside the parameter domain")
        if cfg["coverage"]["n_datasets"] < 1:
            raise ConfigError("coverage.n_datasets must be positive")

    obs = cfg["observation"]
    if obs["values"] is not None and len(obs["values"]) != m:
        raise ConfigError(f"observation has {len(obs['values'])} values, model expects {m}")
    if obs["truth"] is not None and len(obs["truth"]) != p:
        raise ConfigError(f"observation.truth has {len(obs['truth'])} entries, model has {p}")
    if obs["file"] is not None and not Path(obs["file"]).is_file():
        raise ConfigError(f"observation file {obs['file']} does not exist")

    if cfg["mode"] == "sweep":
        sw = cfg["sweep"]
        if sw["epsilons"] is not None:
            if not sw["epsilons"]:
                raise ConfigError("sweep.epsilons is empty")
        elif not sw["quantiles"]:
            raise ConfigError("sweep needs epsilons or quantiles")
        if sw["pool_size"] < 1:
            raise ConfigError("sweep.pool_size must be positive")
    if cfg["mode"] == "bod-compare" and model.name != "bod":
        raise ConfigError("bod-compare runs on the bod model only")


def as_float(v):
    """YAML has no literal for infinity in all dialects; accept the string 'inf'."""
    if isinstance(v, str) and v.strip().lower() in ("inf", "+inf", "infinity"):
        return math.inf
    return float(v)
