"""Access to the data files shipped with the package."""

from __future__ import annotations

from pathlib import Path

from .exceptions import ConfigError

_DATA_DIR = Path(__file__).parent / "data"


def data_dir() -> Path:
    return _DATA_DIR


def builtin_ruleset_path(name: str) -> Path:
    path = _DATA_DIR / "rulesets" / f"{name}.json"
    if not path.exists():
        available = sorted(p.stem for p in (_DATA_DIR / "rulesets").glob("*.json"))
        raise ConfigError(f"no built-in ruleset {name!r}; available: {available}")
    return path


def builtin_pool_path() -> Path:
    return _DATA_DIR / "pools" / "table2.toml"


def builtin_world_path(name: str) -> Path:
    path = _DATA_DIR / "worlds" / f"{name}.json"
    if not path.exists():
        available = sorted(p.stem for p in (_DATA_DIR / "worlds").glob("*.json"))
        raise ConfigError(f"no built-in world {name!r}; available: {available}")
    return path
