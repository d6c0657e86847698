"""Flat ``key = value`` configuration files."""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    pass


def load_config(path) -> dict[str, str]:
    """Read ``key = value`` lines; ``#`` starts a comment, blank lines ignored."""
    out: dict[str, str] = {}
    for n, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            key, sep, value = line.partition(":")
        if not sep or not key.strip():
            raise ConfigError(f"{path}:{n}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


def get_int(cfg: dict, key: str, default: int) -> int:
    try:
        return int(cfg.get(key, default))
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {cfg[key]!r}") from None


def get_float(cfg: dict, key: str, default: float) -> float:
    try:
        return float(cfg.get(key, default))
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {cfg[key]!r}") from None


def get_bool(cfg: dict, key: str, default: bool) -> bool:
    value = cfg.get(key)
    if value is None:
        return default
    return value.lower() in ("1", "true", "yes", "on")
