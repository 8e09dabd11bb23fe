"""Plain-text configuration format shared by every file the tool reads/writes.

Format: ``key = <python literal>`` lines grouped under ``[section]`` headers.
Dots in a section name nest dictionaries (``[scenario.M1]``).  Values are
parsed with :func:`ast.literal_eval`, so numbers, strings, lists and nested
lists all round-trip.  ``#`` starts a comment.
"""

from __future__ import annotations

import ast
import os
import tempfile
from pathlib import Path


class ConfigError(ValueError):
    """Malformed configuration text or missing/ill-typed key."""


def parse_text(text: str, source: str = "<string>") -> dict:
    root: dict = {}
    section = root
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        lineno = i + 1
        line = _strip_comment(lines[i]).strip()
        i += 1
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = root
            for part in line[1:-1].strip().split("."):
                if not part:
                    raise ConfigError(f"{source}:{lineno}: empty section name component")
                section = section.setdefault(part, {})
                if not isinstance(section, dict):
                    raise ConfigError(f"{source}:{lineno}: section collides with key {part!r}")
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {lines[lineno - 1]!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        value = value.strip()
        # multi-line values: keep consuming lines until brackets balance
        while _bracket_depth(value) > 0 and i < len(lines):
            value += " " + _strip_comment(lines[i]).strip()
            i += 1
        try:
            section[key] = ast.literal_eval(value)
        except (ValueError, SyntaxError) as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from exc
    return root


def read_file(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_text(text, source=str(path))


def format_config(data: dict, header: str = "") -> str:
    """Serialize a nested dict back into the config format (deterministic)."""
    lines: list[str] = []
    if header:
        lines.extend(f"# {h}".rstrip() for h in header.splitlines())
    _emit(data, [], lines)
    return "\n".join(lines) + "\n"


def write_file(path: str | Path, data: dict, header: str = "") -> None:
    """Atomic write: serialize to a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = format_config(data, header=header)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def require(section: dict, key: str, kind: type, source: str = "config"):
    """Fetch a typed key, raising ConfigError with a usable message."""
    if key not in section:
        raise ConfigError(f"{source}: missing required key {key!r}")
    value = section[key]
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(f"{source}: key {key!r} should be {kind.__name__}, got {type(value).__name__}")
    return value


def _bracket_depth(text: str) -> int:
    depth = 0
    in_string: str | None = None
    for ch in text:
        if in_string:
            if ch == in_string:
                in_string = None
        elif ch in ("'", '"'):
            in_string = ch
        elif ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth -= 1
    return depth


def _strip_comment(line: str) -> str:
    out = []
    in_string: str | None = None
    for ch in line:
        if in_string:
            if ch == in_string:
                in_string = None
        elif ch in ("'", '"'):
            in_string = ch
        elif ch == "#":
            break
        out.append(ch)
    return "".join(out)


def _emit(data: dict, prefix: list[str], lines: list[str]) -> None:
    scalars = {k: v for k, v in data.items() if not isinstance(v, dict)}
    subsections = {k: v for k, v in data.items() if isinstance(v, dict)}
    if prefix and (scalars or not subsections):
        if lines:
            lines.append("")
        lines.append(f"[{'.'.join(prefix)}]")
    for key, value in scalars.items():
        lines.append(f"{key} = {value!r}")
    for key, value in subsections.items():
        _emit(value, prefix + [key], lines)
