#!/usr/bin/env python3
"""
Workbench Configuration

Loads the single YAML configuration file, merges it over the built-in defaults
and applies ``section.key=value`` overrides coming from the command line.

Dependencies:
    pip install PyYAML
"""

import copy
from typing import Any, Dict, Iterable, Optional

import yaml

from .utils import data_path, read_file_content


class ConfigError(Exception):
    """Custom exception for invalid or unknown configuration values."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


DEFAULT_CONFIG: Dict[str, Any] = {
    "env": {
        "step_cap": 200,
        "p_fail": 0.2,
    },
    "rl": {
        "alpha": 0.1,
        "gamma": 0.95,
        "q_tau": 1.0,
        "initial_q": 0.0,
    },
    "shaping": {
        "schedule": {
            "shape": "linear",
            "tau0": 0.2,
            "tau_max": 5.0,
            "horizon_fraction": 0.6,
        },
    },
    "trainer": {
        "training_map": "train.map",
        "grammar": "frogger.grammar",
        "n_agents": 200,
        "episodes_per_agent": 300,
        "horizon": 25,
        "accuracies": [0.6, 0.8, 1.0],
        "seed": 7,
    },
    "seq2seq": {
        "epochs": 100,
        "layers": 2,
        "hidden": 64,
        "embedding": 32,
        "learning_rate": 0.5,
        "batch_size": 8,
        "clip_norm": 5.0,
        "plateau_tol": 0.001,
        "plateau_patience": 10,
        "plateau_window": 5,
        "min_learning_rate": 0.001,
        "init_scale": 0.1,
        "workers": 1,
        "seed": 11,
    },
    "advice": {
        "length_normalize": False,
    },
    "experiment": {
        "maps": ["map25.map", "map50.map", "map75.map"],
        "dynamics": ["deterministic", "stochastic"],
        "agents": ["qlearn", "observation", "language60", "language80", "language100"],
        "episodes": {
            "deterministic": 2000,
            "stochastic": 8000,
        },
        "eval_period": 100,
        "eval_episodes": 20,
        "replicates": 10,
        "workers": 1,
        "seed": 2018,
        "schedules": [],
    },
    "pipeline": {
        "output_dir": "artifacts",
    },
}

FULL_SCALE_OVERRIDES = [
    "trainer.n_agents=1000",
    "seq2seq.hidden=300",
    "seq2seq.embedding=300",
    "seq2seq.batch_size=32",
    "experiment.episodes.deterministic=5000",
    "experiment.episodes.stochastic=25000",
    "experiment.replicates=100",
]

# Sections whose values are free-form mappings or lists of mappings
_OPEN_KEYS = {"experiment.schedules"}


def default_config_path() -> str:
    """Return the path of the shipped, documented configuration file."""
    return data_path("config", "default.yml")


def _merge(base: Dict[str, Any], update: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    """Deep-merge ``update`` into a copy of ``base``, rejecting unknown keys."""
    merged = copy.deepcopy(base)
    for key, value in update.items():
        dotted = f"{prefix}{key}"
        if key not in merged:
            raise ConfigError(f"Unknown configuration key: {dotted}", key=dotted)
        if isinstance(merged[key], dict) and dotted not in _OPEN_KEYS:
            if not isinstance(value, dict):
                raise ConfigError(f"Configuration key '{dotted}' must be a mapping", key=dotted)
            merged[key] = _merge(merged[key], value, prefix=f"{dotted}.")
        else:
            merged[key] = value
    return merged


def apply_override(config: Dict[str, Any], override: str) -> Dict[str, Any]:
    """
    Apply one ``section.key=value`` override.

    Args:
        config: Merged configuration dictionary
        override: Override string; the value is parsed as a YAML scalar or list

    Returns:
        A new configuration dictionary

    Raises:
        ConfigError: If the override is malformed or names an unknown key
    """
    if "=" not in override:
        raise ConfigError(f"Override must look like section.key=value: '{override}'")
    dotted, raw_value = override.split("=", 1)
    parts = [p for p in dotted.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"Override has an empty key: '{override}'")
    value = yaml.safe_load(raw_value) if raw_value.strip() else None

    update: Dict[str, Any] = {parts[-1]: value}
    for part in reversed(parts[:-1]):
        update = {part: update}
    return _merge(config, update)


def load_config(path: Optional[str] = None, overrides: Iterable[str] = (),
                full_scale: bool = False) -> Dict[str, Any]:
    """
    Load the workbench configuration.

    Args:
        path: YAML file to merge over the defaults (None uses the shipped default file)
        overrides: ``section.key=value`` strings applied after the file
        full_scale: Apply the full-size settings before the explicit overrides

    Returns:
        Fully merged configuration dictionary

    Raises:
        ConfigError: If the file is not a mapping or names unknown keys
        FileNotFoundError: If the file does not exist
    """
    config = copy.deepcopy(DEFAULT_CONFIG)
    file_path = path or default_config_path()
    content = yaml.safe_load(read_file_content(file_path)) or {}
    if not isinstance(content, dict):
        raise ConfigError(f"Configuration file {file_path} must contain a mapping")
    config = _merge(config, content)

    if full_scale:
        for override in FULL_SCALE_OVERRIDES:
            config = apply_override(config, override)
    for override in overrides:
        config = apply_override(config, override)
    return config


def get_setting(config: Dict[str, Any], dotted: str) -> Any:
    """
    Read a required setting by dotted key.

    Raises:
        ConfigError: If any part of the key is missing
    """
    node: Any = config
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"Required configuration key '{dotted}' is not set", key=dotted)
        node = node[part]
    return node
