"""Flat `key = value` config files.

One statement per line, `#` starts a whole-line comment, blank lines are
ignored. Keys not in the schema are errors (typo protection), as are
duplicates. Keys left out fall back to the built-in defaults, so a config
only needs the values it changes.

Two schemas exist: the run config (network architecture + training
hyperparameters, see RUN_SCHEMA) and the synthesis spec (dataset
generator knobs, see SYNTH_SCHEMA). The packaged ``default.cfg`` holds
the shipped run config.
"""

from __future__ import annotations

from importlib import resources

from .data import SynthSpec
from .network import NetworkConfig
from .training import TrainConfig

__all__ = [
    "ConfigError",
    "RUN_SCHEMA",
    "SYNTH_SCHEMA",
    "parse_config_text",
    "load_run_config",
    "load_synth_spec",
    "default_config_text",
]


class ConfigError(ValueError):
    """Malformed config text or values."""


# key -> (section, type); sections route values to the right dataclass
RUN_SCHEMA = {
    "growth_rate": ("network", int),
    "layers_per_block": ("network", int),
    "depth": ("network", int),
    "final_block_layers": ("network", int),
    "leaky_alpha": ("network", float),
    "lambda_p": ("training", float),
    "lambda_h": ("training", float),
    "lr0": ("training", float),
    "batch_size": ("training", int),
    "plateau_patience": ("training", int),
    "plateau_factor": ("training", float),
    "stop_patience": ("training", int),
    "max_epochs": ("training", int),
    "seed": ("training", int),
    "val_fraction": ("training", float),
    "improve_tol": ("training", float),
}

SYNTH_SCHEMA = {
    "seed": int,
    "n_tracks": int,
    "duration_s": float,
    "f0_min_hz": float,
    "f0_max_hz": float,
    "voices": int,
    "partials": int,
    "partial_rolloff": float,
    "attack_s": float,
    "release_s": float,
    "onset_rate_hz": float,
    "burst_decay_ms": float,
    "band_emphasis": float,
    "gain_harm": float,
    "gain_perc": float,
}


def parse_config_text(text, valid_keys):
    """Raw key -> string-value mapping, validated against valid_keys."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in valid_keys:
            raise ConfigError(
                f"line {lineno}: unknown key {key!r} (valid: {', '.join(sorted(valid_keys))})"
            )
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if not value:
            raise ConfigError(f"line {lineno}: empty value for {key!r}")
        values[key] = value
    return values


def _convert(key, value, target_type):
    try:
        return target_type(value)
    except ValueError as exc:
        raise ConfigError(
            f"key {key!r}: cannot parse {value!r} as {target_type.__name__}"
        ) from exc


def default_config_text():
    return resources.files("hpsep").joinpath("default.cfg").read_text()


def load_run_config(path=None):
    """(NetworkConfig, TrainConfig) from a run config file.

    path=None loads the packaged default.cfg.
    """
    text = default_config_text() if path is None else open(path).read()
    raw = parse_config_text(text, RUN_SCHEMA.keys())
    net_kwargs = {}
    train_kwargs = {}
    for key, value in raw.items():
        section, target_type = RUN_SCHEMA[key]
        dest = net_kwargs if section == "network" else train_kwargs
        dest[key] = _convert(key, value, target_type)
    try:
        return NetworkConfig(**net_kwargs), TrainConfig(**train_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_synth_spec(path):
    raw = parse_config_text(open(path).read(), SYNTH_SCHEMA.keys())
    kwargs = {k: _convert(k, v, SYNTH_SCHEMA[k]) for k, v in raw.items()}
    try:
        return SynthSpec(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
