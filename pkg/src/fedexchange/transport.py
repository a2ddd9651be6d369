"""Wire-level handlers and in-process clients.

Every operation crossing a site boundary is expressed as a JSON-able
payload handled by one of the functions below. The in-process clients
round-trip payloads through ``json`` so both modes exercise exactly the
same wire format; the HTTP layer mounts the same handlers on endpoints.
"""

from __future__ import annotations

import json
from typing import Callable

from .assets import MissingComputeBehavior, asset_from_json, asset_to_json
from .identifiers import MalformedIdentifier
from .planner import NoValidPlan
from .registry import (
    BadRecordSignature,
    NamespaceTaken,
    RegistryServer,
    UnknownOwner,
    record_from_json,
    record_to_json,
)
from .registry import NotFound as RegistryNotFound
from .replication import (
    ReplicaUpdate,
    StaleReplica,
    VersionFromFuture,
    VersionMismatch,
    update_from_json,
    update_to_json,
)
from .rules import (
    BadSignature,
    RuleError,
    SignedRule,
    SubjectNotOwned,
    UnknownSigner,
    signed_rule_from_json,
    signed_rule_to_json,
)
from .site import (
    BadRequestSignature,
    ExecutionFailed,
    NotFound,
    PermissionDenied,
    RemoteError,
    SiteServer,
    UsageDenied,
    permissions_to_json,
)
from .workflow import BadSubmissionSignature, SignedSubmission


_ERROR_CODES: list[tuple[type, str]] = [
    (NotFound, "NotFound"),
    (RegistryNotFound, "NotFound"),
    (PermissionDenied, "PermissionDenied"),
    (UsageDenied, "UsageDenied"),
    (StaleReplica, "StaleReplica"),
    (BadRequestSignature, "BadRequestSignature"),
    (BadSubmissionSignature, "BadSubmissionSignature"),
    (UnknownSigner, "UnknownSigner"),
    (SubjectNotOwned, "SubjectNotOwned"),
    (BadSignature, "BadSignature"),
    (NamespaceTaken, "NamespaceTaken"),
    (UnknownOwner, "UnknownOwner"),
    (BadRecordSignature, "BadRecordSignature"),
    (VersionFromFuture, "VersionError"),
    (VersionMismatch, "VersionError"),
    (NoValidPlan, "NoValidPlan"),
    (ExecutionFailed, "ExecutionFailed"),
    (MissingComputeBehavior, "MissingComputeBehavior"),
    (MalformedIdentifier, "BadRequest"),
    (RuleError, "BadRequest"),
    (KeyError, "NotFound"),
    (ValueError, "BadRequest"),
]

HTTP_STATUS = {
    "NotFound": 404,
    "PermissionDenied": 403,
    "UsageDenied": 403,
    "StaleReplica": 503,
    "BadRequestSignature": 401,
    "BadSubmissionSignature": 401,
    "UnknownSigner": 401,
    "SubjectNotOwned": 403,
    "BadSignature": 401,
    "NamespaceTaken": 409,
    "UnknownOwner": 400,
    "BadRecordSignature": 401,
    "VersionError": 409,
    "NoValidPlan": 409,
    "ExecutionFailed": 500,
    "MissingComputeBehavior": 400,
    "BadRequest": 400,
}


def error_code(exc: BaseException) -> str:
    for exc_type, code in _ERROR_CODES:
        if isinstance(exc, exc_type):
            return code
    return "InternalError"


# --- site external handlers --------------------------------------------------


def handle_policy_updates(server: SiteServer, payload: dict) -> dict:
    update = server.policy_updates(int(payload["from_version"]))
    return update_to_json(update, signed_rule_to_json)


def handle_retrieve_asset(server: SiteServer, payload: dict) -> dict:
    asset, perms = server.retrieve_asset(payload)
    return {"asset": asset_to_json(asset), "permissions": permissions_to_json(perms)}


def handle_execute_steps(server: SiteServer, payload: dict) -> dict:
    return {"steps": server.execute_steps(payload)}


# --- site internal handlers ---------------------------------------------------


def handle_store_asset(server: SiteServer, payload: dict) -> dict:
    asset = asset_from_json(payload)
    server.store_asset(asset)
    return {"stored": str(asset.id)}


def handle_add_rule(server: SiteServer, payload: dict) -> dict:
    signed = signed_rule_from_json(payload)
    tx = server.add_rule(signed)
    return {"transaction": tx, "hash": signed.hash}


def handle_delete_rule(server: SiteServer, rule_hash: str) -> dict:
    return {"transaction": server.delete_rule(rule_hash)}


def handle_submit_workflow(server: SiteServer, payload: dict) -> dict:
    submission = SignedSubmission.from_json(payload)
    return {"job_id": server.submit_workflow(submission)}


def handle_get_job(server: SiteServer, job_id: str) -> dict:
    return server.get_job(job_id).status_json()


# --- registry handlers --------------------------------------------------------


def handle_register(server: RegistryServer, payload: dict) -> dict:
    record = record_from_json(payload)
    if payload["type"] == "party":
        return {"transaction": server.register_party(record)}
    return {"transaction": server.register_site(record)}


def handle_registry_updates(server: RegistryServer, payload: dict) -> dict:
    update = server.get_updates(int(payload["from_version"]))
    return update_to_json(update, record_to_json)


# --- in-process clients ---------------------------------------------------


def _roundtrip(data: dict) -> dict:
    return json.loads(json.dumps(data))


def _call(handler: Callable[..., dict], *args) -> dict:
    try:
        return _roundtrip(handler(*args))
    except RemoteError:
        raise
    except Exception as exc:
        raise RemoteError(error_code(exc), str(exc)) from exc


class LocalSiteClient:
    """Client for a site living in the same process.

    Payloads still round-trip through JSON so the wire format is always
    exercised.
    """

    def __init__(self, server: SiteServer):
        self._server = server

    def policy_updates(self, from_version: int) -> ReplicaUpdate[SignedRule]:
        data = _call(handle_policy_updates, self._server,
                     _roundtrip({"from_version": from_version}))
        return update_from_json(data, signed_rule_from_json, str)

    def retrieve_asset(self, request: dict) -> dict:
        return _call(handle_retrieve_asset, self._server, _roundtrip(request))

    def submit_job(self, request: dict) -> dict:
        return _call(handle_execute_steps, self._server, _roundtrip(request))


class LocalRegistryClient:
    def __init__(self, server: RegistryServer):
        self._server = server

    def get_updates(self, from_version: int):
        data = _call(handle_registry_updates, self._server,
                     {"from_version": from_version})
        return update_from_json(data, record_from_json, str)

    def register(self, record) -> int:
        return _call(handle_register, self._server,
                     record_to_json(record))["transaction"]


class LocalConnector:
    """Endpoint-URL to in-process site client resolution."""

    def __init__(self) -> None:
        self._sites: dict[str, SiteServer] = {}

    def register(self, server: SiteServer) -> None:
        self._sites[server.config.endpoint] = server

    def site_client(self, endpoint: str) -> LocalSiteClient:
        server = self._sites.get(endpoint)
        if server is None:
            raise RemoteError("NotFound", f"no site at {endpoint}")
        return LocalSiteClient(server)
