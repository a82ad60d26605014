"""Plain-text key=value configuration files.

Lines are ``key = value``; blank lines and lines starting with '#' are
skipped.  Keys are dotted (``activity.window_frames``); values stay
strings here and are coerced by the consuming module.
"""

from __future__ import annotations


def parse_config_text(text: str) -> dict[str, str]:
    conf: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        conf[key.strip()] = value.strip()
    return conf


def load_config(path) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())
