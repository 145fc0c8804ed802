"""TOML loading with strict key checking, plus run manifests."""

from __future__ import annotations

import hashlib
import json
import platform
import sys
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError


def load_toml(path: str | Path) -> dict[str, Any]:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


def load_packaged_toml(name: str) -> dict[str, Any]:
    text = resources.files("baqudit").joinpath("data", name).read_text()
    return tomllib.loads(text)


def check_keys(
    table: Mapping[str, Any],
    allowed: Iterable[str],
    where: str,
    required: Iterable[str] = (),
) -> None:
    allowed = set(allowed)
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    missing = sorted(set(required) - set(table))
    if missing:
        raise ConfigError(f"missing key(s) in {where}: {', '.join(missing)}")


def as_float(table: Mapping[str, Any], key: str, where: str) -> float:
    val = table[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{where}.{key} must be a number, got {val!r}")
    return float(val)


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def build_manifest(
    command: str,
    argv: list[str],
    config_paths: Iterable[str | Path] = (),
    seed: int | None = None,
    extra: Mapping[str, Any] | None = None,
) -> dict[str, Any]:
    import numpy
    import scipy

    from . import __version__

    manifest: dict[str, Any] = {
        "command": command,
        "argv": list(argv),
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
        "seed": seed,
        "config_sha256": {str(p): file_sha256(p) for p in config_paths},
    }
    if extra:
        manifest.update(extra)
    return manifest


def write_json(path: str | Path, payload: Any) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
