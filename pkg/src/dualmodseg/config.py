"""Run configuration: one JSON document plus dotted-path overrides.

The config mirrors the CLI's needs: data/work directories, the labeled
fraction, network and trainer settings, and an optional phantom section.
``--set a.b.c=value`` overrides parse the value as JSON when possible and
fall back to a plain string.
"""

import copy
import json
from dataclasses import dataclass
from pathlib import Path

from .losses import LossWeights
from .network import NetworkConfig
from .phantom import PhantomSpec
from .trainer import TrainConfig

DEFAULT_CONFIG = {
    "data_dir": "phantom_data",
    "work_dir": "work",
    "label_fraction": 0.1,
    "net": {
        "in_channels": 1,
        "n_classes": 2,
        "channel_dims": [8, 16, 32, 64, 128],
        "crop": [64, 64],
        "enable_mem": True,
        "enable_cif": True,
        "attention_dim": 16,
    },
    "train": {
        "learning_rate": 6e-3,
        "weight_decay": 4e-4,
        "max_steps": 800,
        "batch_labeled": 4,
        "batch_unlabeled": 4,
        "seed": 1234,
        "eval_every": 200,
        "weights": {"beta": 1.0, "gamma_dice": 1.0, "lambda_cons": 0.01},
    },
    "phantom": {
        "n_patients": 20,
        "dims": [16, 64, 64],
        "lesion_radius_range": [4, 7],
        "complementarity": 0.8,
        "noise_sigma": 0.1,
        "seed": 1234,
    },
}


@dataclass
class RunConfig:
    data_dir: Path
    work_dir: Path
    label_fraction: float
    net: NetworkConfig
    train: TrainConfig
    phantom: PhantomSpec | None
    raw: dict


class ConfigError(Exception):
    pass


def apply_override(config: dict, assignment: str) -> None:
    """Apply one `dotted.path=value` override in place."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    dotted, _, raw_value = assignment.partition("=")
    keys = dotted.strip().split(".")
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    node = config
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            raise ConfigError(f"override {assignment!r}: no section {key!r}")
        node = node[key]
    if keys[-1] not in node:
        raise ConfigError(f"override {assignment!r}: unknown key {keys[-1]!r}")
    node[keys[-1]] = value


def load_run_config(config_path=None, overrides=(), label_fraction=None) -> RunConfig:
    """Merge defaults, an optional JSON file, CLI overrides; validate everything."""
    config = copy.deepcopy(DEFAULT_CONFIG)
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})")
        _deep_update(config, loaded)
    for assignment in overrides:
        apply_override(config, assignment)
    if label_fraction is not None:
        config["label_fraction"] = label_fraction

    if not (0.0 < config["label_fraction"] <= 1.0):
        raise ConfigError(f"label_fraction must be in (0, 1], got {config['label_fraction']}")
    try:
        net = NetworkConfig.from_dict(config["net"])
        net.validate()
        train = TrainConfig.from_dict(config["train"])
        if not isinstance(train.weights, LossWeights):
            raise ValueError("train.weights must be an object")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad network/trainer config: {exc}")
    if train.learning_rate <= 0 or train.max_steps < 1:
        raise ConfigError("train.learning_rate must be > 0 and train.max_steps >= 1")

    phantom = None
    if config.get("phantom") is not None:
        p = dict(config["phantom"])
        try:
            phantom = PhantomSpec(
                n_patients=int(p["n_patients"]),
                dims=tuple(p["dims"]),
                lesion_radius_range=tuple(p["lesion_radius_range"]),
                complementarity=float(p["complementarity"]),
                noise_sigma=float(p["noise_sigma"]),
                seed=int(p["seed"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad phantom config: {exc}")

    return RunConfig(
        data_dir=Path(config["data_dir"]),
        work_dir=Path(config["work_dir"]),
        label_fraction=float(config["label_fraction"]),
        net=net,
        train=train,
        phantom=phantom,
        raw=config,
    )


def _deep_update(base: dict, update: dict) -> None:
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
