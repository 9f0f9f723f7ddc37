"""Small string helpers shared by the simulator, prompts and ranking."""

from __future__ import annotations

import re
from typing import Mapping

PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")
_TOKEN_RE = re.compile(r"[a-z0-9]+")


def placeholders(template: str) -> list[str]:
    """Names of ``{name}`` placeholders in order of appearance (with repeats)."""
    return PLACEHOLDER_RE.findall(template)


def fill(template: str, values: Mapping[str, object]) -> str:
    """Substitute ``{name}`` placeholders in one pass.

    Substituted text is never rescanned, so values may contain braces.
    Raises KeyError naming the first unknown placeholder.
    """

    def _sub(match: re.Match[str]) -> str:
        return str(values[match.group(1)])

    return PLACEHOLDER_RE.sub(_sub, template)


def tokenize(text: str | None) -> list[str]:
    """Lowercased alphanumeric runs; everything else separates tokens."""
    if not text:
        return []
    return _TOKEN_RE.findall(text.lower())


def normalize_ws(text: str) -> str:
    return " ".join(text.split())
