"""Structured config file loading for the experiment harness.

One YAML file with nested sections (experiment, hp, env, model, augment)
maps onto ExperimentConfig. Unknown keys are rejected rather than
ignored so typos fail loudly. Every section and key is optional; omitted
values take the dataclass defaults.
"""

from __future__ import annotations

from dataclasses import asdict
from typing import Any, Dict, Mapping, Optional

import yaml

from .augment import AugmentRanges
from .env import ShiftSpec
from .runner import EnvTemplate, ExperimentConfig, ModelConfig
from .types import BaselineSpec, ConfigError, HyperParams

_SECTIONS = ("experiment", "hp", "env", "model", "augment")


def _check_keys(section: str, data: Mapping[str, Any], allowed) -> None:
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {', '.join(unknown)}")


def _parse_baseline(value: Any) -> BaselineSpec:
    if isinstance(value, str):
        return BaselineSpec.parse(value)
    if isinstance(value, Mapping):
        _check_keys("hp.baseline", value, ("kind", "value", "window", "prior"))
        return BaselineSpec(**value)
    raise ConfigError(f"cannot parse baseline spec {value!r}")


def _parse_shift(value: Any) -> ShiftSpec:
    if isinstance(value, str):
        return ShiftSpec.parse(value)
    if isinstance(value, Mapping):
        _check_keys("env.shift", value, ("kind", "max_cells", "count"))
        return ShiftSpec(**value)
    raise ConfigError(f"cannot parse shift spec {value!r}")


def config_from_dict(data: Mapping[str, Any]) -> ExperimentConfig:
    if not isinstance(data, Mapping):
        raise ConfigError("config root must be a mapping of sections")
    _check_keys("root", data, _SECTIONS)

    hp_data = dict(data.get("hp") or {})
    _check_keys("hp", hp_data, ("perturb_scale", "kl_weight", "n_max",
                                "learning_rate", "baseline", "rounding",
                                "batch_size", "grad_steps_per_episode"))
    if "baseline" in hp_data:
        hp_data["baseline"] = _parse_baseline(hp_data["baseline"])
    hp = HyperParams(**hp_data)

    env_data = dict(data.get("env") or {})
    _check_keys("env", env_data, ("grid", "grid_h", "grid_w", "cell_px",
                                  "shift", "feedback_mode", "action_dims",
                                  "action_tokens", "max_move", "vocab",
                                  "instr_len", "n_clutter", "place_margin",
                                  "horizon_slack", "max_span", "layout_seed"))
    if "grid" in env_data:
        grid = env_data.pop("grid")
        if not (isinstance(grid, (list, tuple)) and len(grid) == 2):
            raise ConfigError(f"env.grid must be [height, width], got {grid!r}")
        env_data["grid_h"], env_data["grid_w"] = int(grid[0]), int(grid[1])
    if "shift" in env_data:
        env_data["shift"] = _parse_shift(env_data["shift"])
    env = EnvTemplate(**env_data)

    model_data = dict(data.get("model") or {})
    _check_keys("model", model_data, ("embed_dim", "feature_dim", "enc_hidden",
                                      "head_hidden", "bc_epochs",
                                      "bc_learning_rate", "bc_label_smoothing",
                                      "bc_aug_shift_px", "bc_aug_copies",
                                      "bc_seed"))
    model = ModelConfig(**model_data)

    aug_data = dict(data.get("augment") or {})
    _check_keys("augment", aug_data, ("kinds", "shift_px", "noise_sigma",
                                      "brightness_delta", "patch_px"))
    if "kinds" in aug_data:
        aug_data["kinds"] = tuple(aug_data["kinds"])
    ranges = AugmentRanges(**aug_data)

    exp_data = dict(data.get("experiment") or {})
    _check_keys("experiment", exp_data,
                ("variant", "episodes", "eval_rollouts", "seeds", "n_tasks",
                 "vote_mode", "u_aggregate", "identity_views",
                 "persist_buffer", "adapt_during_eval", "buffer_capacity"))
    if "seeds" in exp_data:
        exp_data["seeds"] = tuple(int(s) for s in exp_data["seeds"])
    return ExperimentConfig(hp=hp, env=env, model=model, ranges=ranges, **exp_data)


def config_to_dict(config: ExperimentConfig) -> Dict[str, Any]:
    """Inverse of config_from_dict; load(dump(c)) == c."""
    return {
        "experiment": {
            "variant": config.variant,
            "episodes": config.episodes,
            "eval_rollouts": config.eval_rollouts,
            "seeds": list(config.seeds),
            "n_tasks": config.n_tasks,
            "vote_mode": config.vote_mode,
            "u_aggregate": config.u_aggregate,
            "identity_views": config.identity_views,
            "persist_buffer": config.persist_buffer,
            "adapt_during_eval": config.adapt_during_eval,
            "buffer_capacity": config.buffer_capacity,
        },
        "hp": {**asdict(config.hp), "baseline": asdict(config.hp.baseline)},
        "env": {**asdict(config.env), "shift": asdict(config.env.shift)},
        "model": asdict(config.model),
        "augment": {**asdict(config.ranges), "kinds": list(config.ranges.kinds)},
    }


def load_config(path: Optional[str]) -> ExperimentConfig:
    """Load a YAML config file; None gives the all-defaults config."""
    if path is None:
        return ExperimentConfig()
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}")
    if data is None:
        return ExperimentConfig()
    return config_from_dict(data)


def dump_config(config: ExperimentConfig, path: str) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config_to_dict(config), fh, sort_keys=False)
