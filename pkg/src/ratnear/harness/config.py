"""Flat key=value configuration with a typed schema.

A config file is plain text: one `key = value` per line, `#` comments and
blank lines ignored, no sections.  Each subcommand declares a schema (a
tuple of ConfigField); unknown keys are rejected rather than silently
dropped.  Precedence is flag > environment > file: environment variables
are spelled RATNEAR_<KEY> upper-cased.

Value kinds:
  int, float, str, bool      scalars
  floats, ints               comma-separated lists
  numbers                    comma-separated exact-or-float scalars; tokens
                             with a slash or pure integers parse to Fraction
                             (kept exact downstream), the rest to float
"""

import os
import re
from dataclasses import dataclass
from fractions import Fraction

from ..errors import ConfigError

_INT_RE = re.compile(r"^[+-]?\d+$")
ENV_PREFIX = "RATNEAR_"


@dataclass(frozen=True)
class ConfigField:
    name: str
    kind: str
    default: object = None
    required: bool = False
    help: str = ""


def _parse_bool(tok: str):
    low = tok.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"cannot parse boolean from {tok!r}")


def _parse_number(tok: str):
    tok = tok.strip()
    if "/" in tok:
        try:
            return Fraction(tok)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"bad fraction {tok!r}") from exc
    if _INT_RE.match(tok):
        return Fraction(int(tok))
    try:
        return float(tok)
    except ValueError as exc:
        raise ConfigError(f"bad number {tok!r}") from exc


def _coerce(field: ConfigField, raw: str):
    try:
        if field.kind == "int":
            return int(raw)
        if field.kind == "float":
            return float(raw)
        if field.kind == "str":
            return raw.strip()
        if field.kind == "bool":
            return _parse_bool(raw)
        if field.kind == "floats":
            return tuple(float(tok) for tok in raw.split(",") if tok.strip())
        if field.kind == "ints":
            return tuple(int(tok) for tok in raw.split(",") if tok.strip())
        if field.kind == "numbers":
            return tuple(_parse_number(tok) for tok in raw.split(",") if tok.strip())
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"key {field.name}: cannot parse {raw!r} as {field.kind}") from exc
    raise ConfigError(f"key {field.name}: unknown kind {field.kind!r}")


def parse_file(path: str) -> dict:
    """Raw key -> string map from a flat config file."""
    out = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                stripped = line.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                if "=" not in stripped:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                key, _, val = stripped.partition("=")
                key = key.strip()
                if key in out:
                    raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
                out[key] = val.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return out


def load_config(schema, file_path=None, flag_values=None, environ=None) -> dict:
    """Merge file, environment and flags under the schema; flags win.

    flag_values maps key -> raw string (or already-typed value, passed
    through).  Returns a fully-typed dict with defaults filled in.
    """
    environ = os.environ if environ is None else environ
    fields = {f.name: f for f in schema}
    raw = {}
    if file_path is not None:
        file_raw = parse_file(file_path)
        unknown = sorted(set(file_raw) - set(fields))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        raw.update(file_raw)
    for name in fields:
        env_key = ENV_PREFIX + name.upper()
        if env_key in environ:
            raw[name] = environ[env_key]
    if flag_values:
        for name, val in flag_values.items():
            if name not in fields:
                raise ConfigError(f"unknown flag key {name!r}")
            if val is not None:
                raw[name] = val
    cfg = {}
    for name, field in fields.items():
        if name in raw:
            val = raw[name]
            cfg[name] = val if not isinstance(val, str) else _coerce(field, val)
        elif field.required:
            raise ConfigError(f"missing required config key {name!r}")
        else:
            cfg[name] = field.default
    return cfg


def canonical_lines(cfg: dict) -> str:
    """Deterministic key=value rendering used for the config hash."""
    parts = []
    for key in sorted(cfg):
        val = cfg[key]
        if isinstance(val, tuple):
            rendered = ",".join(str(v) for v in val)
        else:
            rendered = str(val)
        parts.append(f"{key}={rendered}")
    return "\n".join(parts) + "\n"
