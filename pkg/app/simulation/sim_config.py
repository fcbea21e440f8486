"""
Flat `key = value` experiment files.

Lines are `key = value`; blank lines and `#` comments are ignored.
A syntax pass records which line set each key, values are read with
python-dotenv, and pydantic validation errors are reported against the
line that set the offending key.
"""

import re
from pathlib import Path
from typing import Any

from dotenv import dotenv_values
from pydantic import ValidationError

from app.core.errors import ConfigError
from app.schemas.simulation import SimConfig

_LINE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*=(.*)$")


def _index_lines(path: Path, text: str) -> dict[str, int]:
    seen: dict[str, int] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        match = _LINE.match(line)
        if not match:
            raise ConfigError("expected 'key = value'", path=path, line=number)
        key = match.group(1).lower()
        if key in seen:
            raise ConfigError(
                f"duplicate key '{key}' (first set on line {seen[key]})", path=path, line=number
            )
        seen[key] = number
    return seen


def load_sim_config(path: Path | str) -> SimConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config ({exc.strerror})", path=path) from exc

    lines = _index_lines(path, text)
    values: dict[str, Any] = {
        k.lower(): v for k, v in dotenv_values(path, interpolate=False).items() if v is not None
    }

    known = {name for name in SimConfig.model_fields} | {
        f.alias for f in SimConfig.model_fields.values() if f.alias
    }
    for key in values:
        if key not in known:
            raise ConfigError(f"unknown key '{key}'", path=path, line=lines.get(key))

    try:
        return SimConfig.model_validate(values)
    except ValidationError as exc:
        first = exc.errors()[0]
        key = str(first["loc"][0]) if first["loc"] else None
        line = lines.get(key) if key else None
        raise ConfigError(f"{key or 'config'}: {first['msg']}", path=path, line=line) from exc


def dump_sim_config(config: SimConfig) -> str:
    """Render a config back to key = value text."""
    out = []
    for key, value in config.model_dump(by_alias=True, exclude_none=True).items():
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = str(value).lower()
        out.append(f"{key} = {value}")
    return "\n".join(out) + "\n"
