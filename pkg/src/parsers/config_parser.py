"""
config_parser.py

Parser for JSON experiment files and ``key.path=value`` overrides.
"""

import json
from typing import Any, Dict, Iterable, Mapping, Tuple

from src.utils.errors import ConfigError


def parse_config(file_path):
    """
    Parse a JSON experiment file.

    Args:
        file_path (str): Path to the JSON file.

    Returns:
        dict: The parsed configuration tree.
    """
    try:
        with open(file_path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {file_path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{file_path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{file_path} must contain a JSON object at top level")
    return data


def parse_override(text: str) -> Tuple[str, Any]:
    """
    Split ``key.path=value``; the value is read as JSON and falls back to a
    plain string.
    """
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key.path=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def deep_merge(base: Mapping[str, Any], update: Mapping[str, Any]) -> Dict[str, Any]:
    """Recursively merge ``update`` into a copy of ``base``."""
    merged = {k: (deep_merge(v, {}) if isinstance(v, Mapping) else v) for k, v in base.items()}
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def apply_overrides(config: Mapping[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    result = deep_merge(config, {})
    for text in overrides:
        key, value = parse_override(text)
        node = result
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.get(part)
            if child is None:
                child = node[part] = {}
            elif not isinstance(child, dict):
                raise ConfigError(f"override {key!r} descends into non-object {part!r}")
            node = child
        node[parts[-1]] = value
    return result
