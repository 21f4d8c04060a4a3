"""Run-configuration files: strict JSON schema with explicit versioning.

Unknown keys are rejected everywhere (fail fast on typos), floats survive
the parse/serialize round trip exactly, and a suite file may carry the
construction certificate next to the runnable configuration.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .driver import RunConfig
from .environment import DEFAULT_LEARNING_RATE, EnvironmentConfig, SyntheticTask
from .errors import ConfigError
from .rewards import AlphaSchedule

CONFIG_SCHEMA_VERSION = 1

_TOP_KEYS = {
    "schema_version",
    "horizon",
    "beta",
    "alpha_schedule",
    "pm_eval",
    "normalization",
    "seed",
    "environment",
    "trace_path",
    "certificate",
}
_SCHEDULE_KEYS = {"kind", "alpha0", "alpha_min", "decay"}
_ENV_KEYS = {"learning_rate", "noise_std", "seed", "theta0", "target", "auxiliaries"}
_TASK_KEYS = {"label", "center", "curvature"}


def _reject_unknown(d: dict, allowed: set, where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"missing required key {key!r} in {where}")
    return d[key]


def _task_from_dict(d: dict, where: str) -> SyntheticTask:
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    _reject_unknown(d, _TASK_KEYS, where)
    return SyntheticTask(
        center=np.asarray(_require(d, "center", where), dtype=float),
        curvature=np.asarray(_require(d, "curvature", where), dtype=float),
        label=str(d.get("label", "")),
    )


def _schedule_from_dict(d: dict) -> AlphaSchedule:
    if not isinstance(d, dict):
        raise ConfigError("alpha_schedule must be an object")
    _reject_unknown(d, _SCHEDULE_KEYS, "alpha_schedule")
    defaults = AlphaSchedule()
    return AlphaSchedule(
        kind=d.get("kind", defaults.kind),
        alpha0=float(d.get("alpha0", defaults.alpha0)),
        alpha_min=float(d.get("alpha_min", defaults.alpha_min)),
        decay=float(d.get("decay", defaults.decay)),
    )


def _environment_from_dict(d, where: str = "environment"):
    if d == "external":
        return "external"
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object or the string 'external'")
    _reject_unknown(d, _ENV_KEYS, where)
    target = _task_from_dict(_require(d, "target", f"{where}.target"), f"{where}.target")
    aux_list = _require(d, "auxiliaries", where)
    if not isinstance(aux_list, list):
        raise ConfigError(f"{where}.auxiliaries must be a list")
    auxiliaries = [
        _task_from_dict(a, f"{where}.auxiliaries[{i}]") for i, a in enumerate(aux_list)
    ]
    theta0 = d.get("theta0")
    return EnvironmentConfig(
        target=target,
        auxiliaries=auxiliaries,
        learning_rate=float(d.get("learning_rate", DEFAULT_LEARNING_RATE)),
        theta0=None if theta0 is None else np.asarray(theta0, dtype=float),
        seed=int(d.get("seed", 0)),
        noise_std=float(d.get("noise_std", 0.0)),
    )


def config_from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("run configuration must be a JSON object")
    _reject_unknown(d, _TOP_KEYS, "run configuration")
    version = _require(d, "schema_version", "run configuration")
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported configuration schema version {version!r} "
            f"(expected {CONFIG_SCHEMA_VERSION})"
        )
    return RunConfig(
        horizon=int(_require(d, "horizon", "run configuration")),
        environment=_environment_from_dict(_require(d, "environment", "run configuration")),
        beta=float(d.get("beta", 0.1)),
        alpha_schedule=_schedule_from_dict(d.get("alpha_schedule", {})),
        pm_eval=str(d.get("pm_eval", "pre_update")),
        normalization=str(d.get("normalization", "raw")),
        seed=int(d.get("seed", 0)),
        trace_path=d.get("trace_path"),
    )


def config_to_dict(config: RunConfig, certificate: dict | None = None) -> dict:
    if config.environment == "external":
        env_payload = "external"
    elif isinstance(config.environment, EnvironmentConfig):
        env = config.environment
        env_payload = {
            "learning_rate": env.learning_rate,
            "noise_std": env.noise_std,
            "seed": env.seed,
            "theta0": env.theta0.tolist(),
            "target": _task_to_dict(env.target),
            "auxiliaries": [_task_to_dict(a) for a in env.auxiliaries],
        }
    else:
        raise ConfigError(
            f"cannot serialize environment of type {type(config.environment).__name__}"
        )
    payload = {
        "schema_version": CONFIG_SCHEMA_VERSION,
        "horizon": config.horizon,
        "beta": config.beta,
        "alpha_schedule": {
            "kind": config.alpha_schedule.kind,
            "alpha0": config.alpha_schedule.alpha0,
            "alpha_min": config.alpha_schedule.alpha_min,
            "decay": config.alpha_schedule.decay,
        },
        "pm_eval": config.pm_eval,
        "normalization": config.normalization,
        "seed": config.seed,
        "environment": env_payload,
    }
    if config.trace_path is not None:
        payload["trace_path"] = str(config.trace_path)
    if certificate is not None:
        payload["certificate"] = certificate
    return payload


def _task_to_dict(task: SyntheticTask) -> dict:
    return {
        "label": task.label,
        "center": task.center.tolist(),
        "curvature": task.curvature.tolist(),
    }


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration file {path}: {exc}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"configuration file {path} is not valid JSON: {exc}") from exc
    return config_from_dict(d)


def save_config(
    config: RunConfig, path: str | Path, certificate: dict | None = None
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = config_to_dict(config, certificate=certificate)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
