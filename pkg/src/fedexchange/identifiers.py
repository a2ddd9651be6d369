"""Typed, namespaced identifiers for parties, sites, assets and results.

Identifiers render as ``<kind>:<namespace>:<name>``. The namespace is a
DNS-style label owned by exactly one party; the name is free-form (it may
contain dots and further colons) but must be unique within its namespace.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Union


class Kind(str, Enum):
    PARTY = "party"
    SITE = "site"
    ASSET = "asset"
    ASSET_COLLECTION = "asset_collection"
    ASSET_CATEGORY = "asset_category"
    SITE_CATEGORY = "site_category"
    PARTY_CATEGORY = "party_category"
    RESULT = "result"


_KINDS = {k.value: k for k in Kind}

# DNS-style label: letters, digits, dots, hyphens, underscores. No colons.
_NAMESPACE_RE = re.compile(r"^[A-Za-z0-9._-]+$")


class MalformedIdentifier(ValueError):
    """Raised when identifier text cannot be parsed."""

    def __init__(self, text: str, position: int, reason: str):
        self.text = text
        self.position = position
        self.reason = reason
        super().__init__(f"{reason} at position {position} in {text!r}")


@dataclass(frozen=True)
class Identifier:
    kind: Kind
    namespace: str
    name: str

    def __post_init__(self) -> None:
        if not isinstance(self.kind, Kind):
            object.__setattr__(self, "kind", Kind(self.kind))
        if not self.namespace:
            raise MalformedIdentifier(self.name, 0, "empty namespace")
        if not _NAMESPACE_RE.match(self.namespace):
            raise MalformedIdentifier(self.namespace, 0, "invalid namespace")
        if not self.name:
            raise MalformedIdentifier(self.namespace, 0, "empty name")

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.namespace}:{self.name}"

    def __repr__(self) -> str:
        return f"Identifier({str(self)!r})"


class Wildcard:
    """Matches any identifier. Rendered as ``*``; a singleton."""

    _instance: "Wildcard | None" = None

    def __new__(cls) -> "Wildcard":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __str__(self) -> str:
        return "*"

    def __repr__(self) -> str:
        return "ANY"


ANY = Wildcard()

IdentifierPattern = Union[Identifier, Wildcard]


def parse_identifier(text: str) -> Identifier:
    """Parse ``<kind>:<namespace>:<name>`` text into an Identifier."""
    parts = text.split(":", 2)
    if len(parts) != 3:
        raise MalformedIdentifier(text, len(text), "expected <kind>:<ns>:<name>")
    kind_text, namespace, name = parts
    if kind_text not in _KINDS:
        raise MalformedIdentifier(text, 0, f"unknown kind {kind_text!r}")
    if not namespace:
        raise MalformedIdentifier(text, len(kind_text) + 1, "empty namespace")
    if not _NAMESPACE_RE.match(namespace):
        raise MalformedIdentifier(text, len(kind_text) + 1, "invalid namespace")
    if not name:
        raise MalformedIdentifier(text, len(kind_text) + len(namespace) + 2, "empty name")
    return Identifier(_KINDS[kind_text], namespace, name)


def parse_pattern(text: str) -> IdentifierPattern:
    """Parse identifier text, with ``*`` denoting the wildcard."""
    if text == "*":
        return ANY
    return parse_identifier(text)


def render_pattern(pattern: IdentifierPattern) -> str:
    return str(pattern)
