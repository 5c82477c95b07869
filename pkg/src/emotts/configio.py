"""Flat key-value config files: one `key = value` per line, `#` comments.

Used for SpectroConfig/ModelHyper snapshots stored next to checkpoints and
for training stage configs.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any, Mapping, TypeVar

T = TypeVar("T")


def read_kv(path: str | Path) -> dict[str, str]:
    kv: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        kv[key.strip()] = value.strip()
    return kv


def write_kv(path: str | Path, mapping: Mapping[str, Any]) -> None:
    lines = [f"{key} = {value}" for key, value in mapping.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _cast(value: str, typ: Any) -> Any:
    if typ is bool or typ == "bool":
        return value.strip().lower() in ("1", "true", "yes", "on")
    if typ is int or typ == "int":
        return int(value)
    if typ is float or typ == "float":
        return float(value)
    return value


def dataclass_to_kv(obj: Any) -> dict[str, Any]:
    return dataclasses.asdict(obj)


def dataclass_from_kv(cls: type[T], kv: Mapping[str, str]) -> T:
    """Build a dataclass from string values, casting by declared field type."""
    kwargs = {}
    for field in dataclasses.fields(cls):
        if field.name in kv:
            kwargs[field.name] = _cast(kv[field.name], field.type)
    return cls(**kwargs)
