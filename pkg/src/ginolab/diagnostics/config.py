"""Flat experiment configuration with dotted keys and typed defaults."""

from __future__ import annotations

from ..errors import GinoLabError


class ConfigError(GinoLabError):
    """Unknown key or a value that does not parse as the key's type."""


# Every key an experiment may read. The type of the default decides how an
# override string is parsed; tuples are comma-separated lists.
DEFAULTS: dict = {
    "seed": 0,
    "data.n": 64,
    "data.beta": 2.0,
    "data.lambda_cut": 100.0,
    "data.alpha": 1.0,
    "model.degree": 16,
    "model.hidden": 16,
    "model.lambda_max": 100.0,
    "model.gain": 0.1,
    "train.steps": 4000,
    "train.batch": 16,
    "train.lr": 1e-2,
    "train.weight_decay": 1e-4,
    "train.clip_norm": 1.0,
    "train.eval_every": 100,
    "train.eval_batch": 64,
    "train.energy_weight": 10.0,
    "train.smooth_weight": 0.0,
    "cnn.steps": 400,
    "cnn.batch": 8,
    "cnn.lr": 1e-3,
    "cnn.eval_every": 100,
    "e2.random_angles": 29,
    "e2.inputs": 16,
    "e3.deltas": (0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3),
    "e4.resolutions": (32, 64, 128),
    "e4.steps": 800,
    "e4.eval_batch": 16,
    "e5.alpha_reg": 0.025,
    "e5.split": 1,
    "e5.steps": 2000,
    "e5.energy_weight": 0.0,
    "e5.gauge_inputs": 4,
    "e6a.lambdas": (25.0, 50.0, 100.0, 200.0, 400.0),
    "e6a.steps": 2000,
    "e6b.weights": (0.0, 1e-4, 1e-2),
    "e6b.seeds": (0, 1, 2),
    "e6b.steps": 1500,
    "e6b.delta": 0.3,
    "bounds.samples": 64,
    "bounds.beta": 4.0,
    "bounds.lambda_cut": 400.0,
    "bounds.s": 0.0,
    "bounds.gamma": 2.0,
    "bounds.steps": 500,
    "bounds.grid": 4096,
    "bounds.inject": 0,
    "gen.count": 4,
}


def _parse(key: str, text: str):
    default = DEFAULTS[key]
    try:
        if isinstance(default, tuple):
            kind = type(default[0])
            return tuple(kind(_number(v, kind)) for v in text.split(",") if v.strip())
        if isinstance(default, str):
            return text
        return _number(text, type(default))
    except ValueError:
        raise ConfigError(f"cannot parse {text!r} for {key}") from None


def _number(text: str, kind):
    text = text.strip()
    if kind is int:
        return int(text, 0)
    return float(text)


def parse_config_text(text: str) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment, blank lines are skipped."""
    overrides = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        overrides[key] = value
    return overrides


def resolve(*layers: dict) -> dict:
    """Defaults updated by each layer of string or typed overrides, in order."""
    config = dict(DEFAULTS)
    for layer in layers:
        for key, value in layer.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            config[key] = _parse(key, value) if isinstance(value, str) else _coerce(key, value)
    return config


def _coerce(key: str, value):
    default = DEFAULTS[key]
    if isinstance(default, tuple):
        return tuple(type(default[0])(v) for v in value)
    return type(default)(value)


def snapshot(config: dict) -> dict:
    """JSON-ready copy: tuples become lists, keys sorted."""
    return {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(config.items())}
