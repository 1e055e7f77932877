"""Flat dotted-key config files: parsing, validation, hashing.

Format: one ``key = value`` pair per line, ``#`` comments, blank lines
ignored. Keys are dotted paths (``radio.fft_size``). Values are parsed as
JSON when possible (numbers, booleans, quoted strings, lists) and fall back
to bare strings.
"""

import hashlib
import json


class ConfigError(Exception):
    """Raised for malformed or unknown configuration input."""

    def __init__(self, message, line_no=None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


def parse_value(text):
    text = text.strip()
    try:
        return json.loads(text)
    except (json.JSONDecodeError, ValueError):
        return text


def parse_flat_config_lines(text):
    """Parse dotted-key text; returns (values, {key: line_no})."""
    out = {}
    lines = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line_no)
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError("empty key", line_no)
        if key in out:
            raise ConfigError(f"duplicate key {key!r}", line_no)
        out[key] = parse_value(value)
        lines[key] = line_no
    return out, lines


def parse_flat_config(text):
    """Parse dotted-key text into an ordered dict; raises ConfigError."""
    return parse_flat_config_lines(text)[0]


def read_flat_config(path):
    with open(path, "r") as fh:
        return parse_flat_config(fh.read())


def read_flat_config_lines(path):
    with open(path, "r") as fh:
        return parse_flat_config_lines(fh.read())


def check_keys(values, known, context="config", lines=None):
    """Reject unknown dotted keys; `known` is an iterable of exact keys.

    When `lines` maps keys to source line numbers, the error names the line
    each unknown key came from."""
    known = set(known)
    unknown = [k for k in values if k not in known]
    if unknown:
        if lines:
            described = ", ".join(
                f"{k!r} (line {lines[k]})" if k in lines else repr(k)
                for k in sorted(unknown)
            )
        else:
            described = ", ".join(repr(k) for k in sorted(unknown))
        err = ConfigError(
            f"unknown {context} key(s): {described}; "
            f"run the validate command to list accepted keys"
        )
        if lines:
            err.line_no = lines.get(sorted(unknown)[0])
        raise err


def config_hash(values):
    """Short stable hash of a normalized key/value mapping."""
    canon = json.dumps(
        {str(k): values[k] for k in sorted(values)}, sort_keys=True, default=str
    )
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


__all__ = [
    "ConfigError",
    "parse_value",
    "parse_flat_config",
    "parse_flat_config_lines",
    "read_flat_config",
    "read_flat_config_lines",
    "check_keys",
    "config_hash",
]
