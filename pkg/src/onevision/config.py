"""Run-configuration file handling: a flat `section.key = value` text
format (a TOML-compatible subset, one assignment per line, `#` comments).
Absent keys take the benchmark defaults: 20 Hz control over the 100 Hz
base, delays 30/40/50 ms, noise 0.005, horizon 20, duration 20 s.
"""

from __future__ import annotations

import dataclasses
from typing import Dict, Tuple

from onevision.core import DelaySpec, seconds_to_ticks
from onevision.sim import RunConfig


class ConfigError(ValueError):
    """Malformed configuration; the message names the key and line."""


_DEFAULT_DELAY_MS = {"obs_ms": 30.0, "act_ms": 40.0, "comm_ms": 50.0, "control_ms": 50.0}

# key -> (RunConfig field, parser)
_SCALAR_KEYS = {
    "task": ("task", str),
    "framework": ("framework", str),
    "seed": ("seed", int),
    "duration_s": ("duration_s", float),
    "horizon": ("horizon", int),
    "noise.sensor": ("sensor_noise", float),
    "noise.disturbance": ("disturbance_noise", float),
    "model_error.accel_ratio": ("r1", float),
    "model_error.wheelbase_ratio": ("r2", float),
    "weights.qx": ("qx", float),
    "weights.qu": ("qu", float),
    "optimizer.max_iters": ("lbfgs_max_iters", int),
    "optimizer.g_tol": ("lbfgs_g_tol", float),
    "optimizer.memory": ("lbfgs_memory", int),
}


def parse_value(raw: str):
    raw = raw.strip()
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        return raw[1:-1]
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        if any(c in raw for c in ".eE") and not raw.lstrip("+-").isdigit():
            return float(raw)
        return int(raw)
    except ValueError:
        return raw  # bare string


def parse_config_text(text: str) -> Dict[str, Tuple[object, int]]:
    """Parse into {dotted key: (value, line number)}."""
    out: Dict[str, Tuple[object, int]] = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {ln}: expected 'key = value', got {line.strip()!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {ln}: empty key")
        if key in out:
            raise ConfigError(f"line {ln}: duplicate key {key!r}")
        out[key] = (parse_value(raw), ln)
    return out


def config_from_text(text: str) -> RunConfig:
    entries = parse_config_text(text)
    fields: dict = {}
    delay_ms = dict(_DEFAULT_DELAY_MS)
    for key, (value, ln) in entries.items():
        if key.startswith("delay."):
            sub = key.split(".", 1)[1]
            if sub not in delay_ms:
                raise ConfigError(
                    f"line {ln}: unknown key {key!r}; delay keys: "
                    + ", ".join(f"delay.{k}" for k in _DEFAULT_DELAY_MS)
                )
            try:
                delay_ms[sub] = float(value)
            except (TypeError, ValueError):
                raise ConfigError(f"line {ln}: key {key!r}: expected a number, got {value!r}")
            continue
        if key not in _SCALAR_KEYS:
            raise ConfigError(f"line {ln}: unknown key {key!r}")
        field, caster = _SCALAR_KEYS[key]
        try:
            fields[field] = caster(value)
        except (TypeError, ValueError):
            raise ConfigError(
                f"line {ln}: key {key!r}: expected {caster.__name__}, got {value!r}"
            )
    try:
        delays = DelaySpec(
            obs=seconds_to_ticks(delay_ms["obs_ms"] / 1000.0),
            act=seconds_to_ticks(delay_ms["act_ms"] / 1000.0),
            comm=seconds_to_ticks(delay_ms["comm_ms"] / 1000.0),
            control_interval=seconds_to_ticks(delay_ms["control_ms"] / 1000.0),
        )
    except ValueError as exc:
        raise ConfigError(f"delay settings invalid: {exc}") from exc
    return RunConfig(delays=delays, **fields)


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_text(fh.read())


def serialize_config(cfg: RunConfig) -> str:
    """Emit a file that round-trips through load_config."""
    d = cfg.delays
    lines = [
        f'task = "{cfg.task}"',
        f'framework = "{cfg.framework}"',
        f"seed = {cfg.seed}",
        f"duration_s = {cfg.duration_s!r}",
        f"horizon = {cfg.horizon}",
        f"delay.obs_ms = {d.obs * 10}",
        f"delay.act_ms = {d.act * 10}",
        f"delay.comm_ms = {d.comm * 10}",
        f"delay.control_ms = {d.control_interval * 10}",
        f"noise.sensor = {cfg.sensor_noise!r}",
        f"noise.disturbance = {cfg.disturbance_noise!r}",
        f"model_error.accel_ratio = {cfg.r1!r}",
        f"model_error.wheelbase_ratio = {cfg.r2!r}",
        f"weights.qx = {cfg.qx!r}",
        f"weights.qu = {cfg.qu!r}",
        f"optimizer.max_iters = {cfg.lbfgs_max_iters}",
        f"optimizer.g_tol = {cfg.lbfgs_g_tol!r}",
        f"optimizer.memory = {cfg.lbfgs_memory}",
    ]
    return "\n".join(lines) + "\n"
