"""Flat ``key = value`` run configuration files.

Keys match the field names of :class:`ScenarioConfig`, :class:`TrainingConfig`
and the sweep description. Lists are comma separated; lists of points use
``;`` between points (``bs_positions = 25,50; 75,50``). ``#`` starts a comment.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .env import ScenarioConfig
from .marl import TrainingConfig


class ConfigError(ValueError):
    pass


def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in v.split(",") if x.strip())


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.split(",") if x.strip())


def _points(v: str) -> tuple[tuple[float, float], ...]:
    pts = tuple(_floats(p) for p in v.split(";") if p.strip())
    if any(len(p) != 2 for p in pts):
        raise ValueError(f"expected x,y pairs, got {v!r}")
    return pts


def _pair(v: str) -> tuple[float, float]:
    p = _floats(v)
    if len(p) != 2:
        raise ValueError(f"expected two numbers, got {v!r}")
    return p


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _strs(v: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in v.split(",") if x.strip())


SCENARIO_PARSERS = {
    "area_side": float, "num_uavs": int, "num_bss": int, "num_channels": int,
    "power_levels": _floats, "p_min": float, "p_max": float, "noise": float, "alpha": float,
    "uav_altitude": float, "bs_altitude": float, "bs_positions": _points,
    "side_range": _pair, "velocity_range": _pair, "velocity_scale": float,
    "slot_duration": float, "steps_per_episode": int, "history": int, "image": str,
    "reward_metric": str, "psnr_cap": float, "thresholds": _floats, "reward": str,
    "observe_coverage": _bool, "seed": int,
    "sides": _floats, "speeds": _floats, "centers": _points, "radii": _floats,
    "phases": _floats, "directions": _ints,
}

TRAINING_PARSERS = {
    "gamma": float, "batch_size": int, "memory_capacity": int, "learning_rate": float,
    "eps_start": float, "eps_min": float, "eps_decay": float, "target_sync": int,
    "train_episodes": int, "test_episodes": int, "lstm_units": int, "dense": _ints,
}

SWEEP_PARSERS = {
    "sweep_var": str, "sweep_values": _strs, "seeds": _ints, "methods": _strs, "images": _strs,
    "workers": int,
}

assert set(SCENARIO_PARSERS) == {f.name for f in fields(ScenarioConfig)}
assert set(TRAINING_PARSERS) == {f.name for f in fields(TrainingConfig)}


@dataclass
class RunConfig:
    scenario: ScenarioConfig
    training: TrainingConfig
    sweep: dict


def parse_config_text(text: str, source: str = "<string>") -> RunConfig:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        raw[key] = value
    parsed: dict[str, dict] = {"scenario": {}, "training": {}, "sweep": {}}
    for key, value in raw.items():
        for section, table in (("scenario", SCENARIO_PARSERS), ("training", TRAINING_PARSERS),
                               ("sweep", SWEEP_PARSERS)):
            if key in table:
                if value.lower() == "none":
                    parsed[section][key] = None
                    break
                try:
                    parsed[section][key] = table[key](value)
                except ValueError as exc:
                    raise ConfigError(f"{source}: bad value for {key}: {exc}") from None
                break
        else:
            raise ConfigError(f"{source}: unknown key {key!r}")
    try:
        scenario = ScenarioConfig(**{k: v for k, v in parsed["scenario"].items() if v is not None})
        training = TrainingConfig(**{k: v for k, v in parsed["training"].items() if v is not None})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return RunConfig(scenario, training, parsed["sweep"])


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    return parse_config_text(p.read_text(), str(p))


def format_config(scenario: ScenarioConfig, training: TrainingConfig | None = None) -> str:
    """Render configs back to the flat file format (round-trips through the parser)."""
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, tuple):
            if v and isinstance(v[0], tuple):
                return "; ".join(",".join(repr(float(x)) for x in p) for p in v)
            return ",".join(repr(x) for x in v)
        return repr(v) if isinstance(v, float) else str(v)

    lines = [f"{f.name} = {fmt(getattr(scenario, f.name))}" for f in fields(scenario)
             if getattr(scenario, f.name) is not None]
    if training is not None:
        lines += [f"{f.name} = {fmt(getattr(training, f.name))}" for f in fields(training)]
    return "\n".join(lines) + "\n"
