import logging
from pathlib import Path

from dotenv import dotenv_values

from docs.constants import config_keys, scenarios
from src.modules.errors import ConfigError

logger = logging.getLogger(__name__)


def _coerce(key, raw):
    kind = config_keys[key]
    text = str(raw).strip()
    try:
        if kind == "int":
            return int(float(text)) if "e" in text.lower() else int(text)
        if kind == "float":
            return float(text)
        return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"invalid value for {key} ({kind}): {raw!r}") from None


def _check_key(key, source):
    if key not in config_keys:
        raise ConfigError(f"unknown config key {key!r} in {source}; valid keys: {', '.join(sorted(config_keys))}")


def parse_overrides(overrides):
    """--set key=value pairs to a dict of raw strings."""
    parsed = {}
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        parsed[key.strip()] = value.strip()
    return parsed


def load_config(path=None, overrides=None, scenario=None):
    """Scenario defaults, then the key = value file at `path`, then --set overrides."""
    values = dict(scenarios.get(scenario, {}))
    raw = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        for key, value in dotenv_values(path).items():
            _check_key(key, path)
            if value is None:
                raise ConfigError(f"config key {key} in {path} has no value")
            raw[key] = value
    for key, value in parse_overrides(overrides).items():
        _check_key(key, "--set")
        raw[key] = value
    for key, value in raw.items():
        values[key] = _coerce(key, value)
    if raw:
        logger.info("config overrides: %s", ", ".join(f"{k}={v}" for k, v in sorted(raw.items())))
    return values
