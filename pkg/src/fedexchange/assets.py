"""Assets: data payloads and named compute behaviours.

Compute assets name a registered behaviour plus its parameters; the
behaviour is a deterministic, pure transformation from named input
payloads to named output payloads, standing in for container images.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from typing import Callable, Mapping

from .identifiers import Identifier, Kind, parse_identifier


class MissingComputeBehavior(KeyError):
    pass


@dataclass(frozen=True)
class Asset:
    id: Identifier
    kind: str  # "data" | "compute"
    payload: bytes
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in ("data", "compute"):
            raise ValueError(f"asset kind must be data or compute, got {self.kind!r}")
        if self.id.kind not in (Kind.ASSET, Kind.RESULT):
            raise ValueError(f"asset ids must have kind asset or result: {self.id}")


def compute_asset(id: Identifier, behavior: str,
                  parameters: Mapping[str, object] | None = None,
                  metadata: Mapping[str, str] | None = None) -> Asset:
    payload = json.dumps(
        {"behavior": behavior, "parameters": dict(parameters or {})},
        sort_keys=True,
    ).encode()
    return Asset(id, "compute", payload, dict(metadata or {}))


def compute_spec(asset: Asset) -> tuple[str, dict]:
    if asset.kind != "compute":
        raise ValueError(f"{asset.id} is not a compute asset")
    spec = json.loads(asset.payload)
    return spec["behavior"], spec["parameters"]


def asset_to_json(asset: Asset) -> dict:
    return {
        "id": str(asset.id),
        "kind": asset.kind,
        "payload": base64.b64encode(asset.payload).decode(),
        "metadata": dict(asset.metadata),
    }


def asset_from_json(data: dict) -> Asset:
    return Asset(
        parse_identifier(data["id"]),
        data["kind"],
        base64.b64decode(data["payload"]),
        dict(data.get("metadata", {})),
    )


# Behaviour signature: (named input payloads, parameters, output names)
# -> named output payloads.
BehaviorFn = Callable[[Mapping[str, bytes], Mapping[str, object], tuple[str, ...]],
                      dict[str, bytes]]


class BehaviorRegistry:
    """Registered compute behaviours, keyed by unique name."""

    def __init__(self) -> None:
        self._behaviors: dict[str, BehaviorFn] = {}

    def register(self, name: str, fn: BehaviorFn) -> None:
        if name in self._behaviors:
            raise ValueError(f"behavior {name!r} already registered")
        self._behaviors[name] = fn

    def get(self, name: str) -> BehaviorFn:
        fn = self._behaviors.get(name)
        if fn is None:
            raise MissingComputeBehavior(name)
        return fn

    def run(self, behavior: str, inputs: Mapping[str, bytes],
            parameters: Mapping[str, object],
            output_names: tuple[str, ...]) -> dict[str, bytes]:
        return self.get(behavior)(inputs, parameters, output_names)
