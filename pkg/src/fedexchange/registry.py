"""Central party/site directory, served to sites via replication.

Records are signed by their subject's key: party records by the party's
own main key, site records by the owning party's main key. The exchange
root key certifies party keys; admission beyond that is a no-op hook that
operators can replace.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import Callable, Hashable, Union
from urllib.parse import urlparse

from . import crypto
from .crypto import KeyPairRecord, PrivateKey
from .identifiers import Identifier, Kind, parse_identifier
from .replication import (
    CanonicalStore,
    Clock,
    Replica,
    ReplicaUpdate,
)


class NamespaceTaken(ValueError):
    pass


class UnknownOwner(ValueError):
    pass


class BadRecordSignature(ValueError):
    pass


class NotFound(KeyError):
    pass


@dataclass(frozen=True)
class PartyRecord:
    id: Identifier
    namespace: str
    main_key: KeyPairRecord
    user_ca_key: KeyPairRecord
    user_keys: tuple[KeyPairRecord, ...]
    signature: bytes  # by main_key over signed_payload()

    def __post_init__(self) -> None:
        if self.id.kind is not Kind.PARTY:
            raise ValueError(f"party record id must be a party identifier: {self.id}")

    def signed_payload(self) -> bytes:
        return _record_payload_bytes(party_record_to_json(self))


@dataclass(frozen=True)
class SiteRecord:
    id: Identifier
    owner: Identifier
    admin: Identifier
    endpoint: str
    endpoint_key: KeyPairRecord
    signature: bytes  # by the owner's main key over signed_payload()

    def __post_init__(self) -> None:
        if self.id.kind is not Kind.SITE:
            raise ValueError(f"site record id must be a site identifier: {self.id}")

    def signed_payload(self) -> bytes:
        return _record_payload_bytes(site_record_to_json(self))


RegistryRecord = Union[PartyRecord, SiteRecord]


def _record_payload_bytes(data: dict) -> bytes:
    payload = {k: v for k, v in data.items() if k != "signature"}
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()


def _key_to_json(record: KeyPairRecord) -> dict:
    return {
        "owner": str(record.owner),
        "role": record.role,
        "public": record.public.hex(),
        "issuer": str(record.issuer),
        "certification": record.certification.hex(),
    }


def _key_from_json(data: dict) -> KeyPairRecord:
    return KeyPairRecord(
        parse_identifier(data["owner"]),
        data["role"],
        bytes.fromhex(data["public"]),
        parse_identifier(data["issuer"]),
        bytes.fromhex(data["certification"]),
    )


def party_record_to_json(record: PartyRecord) -> dict:
    return {
        "type": "party",
        "id": str(record.id),
        "namespace": record.namespace,
        "main_key": _key_to_json(record.main_key),
        "user_ca_key": _key_to_json(record.user_ca_key),
        "user_keys": [_key_to_json(k) for k in record.user_keys],
        "signature": record.signature.hex(),
    }


def site_record_to_json(record: SiteRecord) -> dict:
    return {
        "type": "site",
        "id": str(record.id),
        "owner": str(record.owner),
        "admin": str(record.admin),
        "endpoint": record.endpoint,
        "endpoint_key": _key_to_json(record.endpoint_key),
        "signature": record.signature.hex(),
    }


def record_to_json(record: RegistryRecord) -> dict:
    if isinstance(record, PartyRecord):
        return party_record_to_json(record)
    return site_record_to_json(record)


def record_from_json(data: dict) -> RegistryRecord:
    if data["type"] == "party":
        return PartyRecord(
            parse_identifier(data["id"]),
            data["namespace"],
            _key_from_json(data["main_key"]),
            _key_from_json(data["user_ca_key"]),
            tuple(_key_from_json(k) for k in data["user_keys"]),
            bytes.fromhex(data["signature"]),
        )
    return SiteRecord(
        parse_identifier(data["id"]),
        parse_identifier(data["owner"]),
        parse_identifier(data["admin"]),
        data["endpoint"],
        _key_from_json(data["endpoint_key"]),
        bytes.fromhex(data["signature"]),
    )


def make_party_record(
    id: Identifier,
    namespace: str,
    main_key: KeyPairRecord,
    user_ca_key: KeyPairRecord,
    user_keys: tuple[KeyPairRecord, ...],
    main_private: PrivateKey,
) -> PartyRecord:
    unsigned = PartyRecord(id, namespace, main_key, user_ca_key, user_keys, b"")
    return PartyRecord(
        id, namespace, main_key, user_ca_key, user_keys,
        main_private.sign(unsigned.signed_payload()),
    )


def make_site_record(
    id: Identifier,
    owner: Identifier,
    admin: Identifier,
    endpoint: str,
    endpoint_key: KeyPairRecord,
    owner_main_private: PrivateKey,
) -> SiteRecord:
    unsigned = SiteRecord(id, owner, admin, endpoint, endpoint_key, b"")
    return SiteRecord(
        id, owner, admin, endpoint, endpoint_key,
        owner_main_private.sign(unsigned.signed_payload()),
    )


def _record_key(record: RegistryRecord) -> Hashable:
    return str(record.id)


AdmissionPolicy = Callable[[RegistryRecord], None]


class RegistryServer:
    """Canonical store of party and site records."""

    def __init__(self, root_public: bytes, lifetime: float = 3600.0,
                 clock: Clock = time.time,
                 admission: AdmissionPolicy | None = None):
        self.root_public = root_public
        self._store: CanonicalStore[RegistryRecord] = CanonicalStore(
            _record_key, lifetime, clock
        )
        # Admission beyond signature checks is an operator hook; accept all.
        self._admission = admission or (lambda record: None)

    @property
    def version(self) -> int:
        return self._store.version

    def _visible_parties(self) -> dict[str, PartyRecord]:
        return {
            str(r.id): r for r in self._store.visible().values()
            if isinstance(r, PartyRecord)
        }

    def register_party(self, record: PartyRecord) -> int:
        for existing in self._visible_parties().values():
            if existing.namespace == record.namespace and existing.id != record.id:
                raise NamespaceTaken(record.namespace)
        if not record.main_key.verify_certification(self.root_public):
            raise BadRecordSignature(f"main key of {record.id} not certified by root")
        if not record.user_ca_key.verify_certification(self.root_public):
            raise BadRecordSignature(f"user CA key of {record.id} not certified by root")
        for user_key in record.user_keys:
            if not user_key.verify_certification(record.user_ca_key.public):
                raise BadRecordSignature(f"user key of {record.id} not certified by its CA")
        if not crypto.verify(record.main_key.public, record.signature,
                             record.signed_payload()):
            raise BadRecordSignature(f"record signature of {record.id} invalid")
        self._admission(record)
        if str(record.id) in {str(i) for i in self._store.visible()}:
            _, tx = self._store.replace(str(record.id), record)
            return tx
        return self._store.insert(record)

    def register_site(self, record: SiteRecord) -> int:
        parties = self._visible_parties()
        owner = parties.get(str(record.owner))
        if owner is None:
            raise UnknownOwner(str(record.owner))
        if str(record.admin) not in parties:
            raise UnknownOwner(str(record.admin))
        url = urlparse(record.endpoint)
        if not url.scheme or not url.netloc:
            raise ValueError(f"invalid endpoint URL: {record.endpoint!r}")
        if not record.endpoint_key.verify_certification(owner.main_key.public):
            raise BadRecordSignature(f"endpoint key of {record.id} not certified by owner")
        if not crypto.verify(owner.main_key.public, record.signature,
                             record.signed_payload()):
            raise BadRecordSignature(f"record signature of {record.id} invalid")
        self._admission(record)
        if str(record.id) in {str(i) for i in self._store.visible()}:
            _, tx = self._store.replace(str(record.id), record)
            return tx
        return self._store.insert(record)

    def deregister(self, id: Identifier) -> int:
        return self._store.delete(str(id))

    def get_updates(self, from_version: int) -> ReplicaUpdate[RegistryRecord]:
        return self._store.get_updates(from_version)


class RegistryReplica:
    """Local replica of the registry, with lookups over the visible set.

    Also serves as the registry view for rule and submission verification.
    """

    def __init__(self, fetch: Callable[[int], ReplicaUpdate[RegistryRecord]],
                 clock: Clock = time.time):
        self._replica: Replica[RegistryRecord] = Replica(_record_key, fetch, clock)

    def ensure_fresh(self) -> None:
        self._replica.ensure_fresh()

    def is_fresh(self) -> bool:
        return self._replica.is_fresh()

    @property
    def current_version(self) -> int:
        return self._replica.current_version

    def _records(self) -> dict[Hashable, RegistryRecord]:
        return self._replica.objects()  # raises StaleReplica when expired

    def party(self, id: Identifier) -> PartyRecord | None:
        record = self._records().get(str(id))
        return record if isinstance(record, PartyRecord) else None

    def site(self, id: Identifier) -> SiteRecord | None:
        record = self._records().get(str(id))
        return record if isinstance(record, SiteRecord) else None

    def sites(self) -> list[SiteRecord]:
        return sorted(
            (r for r in self._records().values() if isinstance(r, SiteRecord)),
            key=lambda r: str(r.id),
        )

    def parties(self) -> list[PartyRecord]:
        return sorted(
            (r for r in self._records().values() if isinstance(r, PartyRecord)),
            key=lambda r: str(r.id),
        )

    def party_by_namespace(self, namespace: str) -> PartyRecord | None:
        for record in self.parties():
            if record.namespace == namespace:
                return record
        return None

    def lookup_site_endpoint(self, id: Identifier) -> str:
        record = self.site(id)
        if record is None:
            raise NotFound(str(id))
        return record.endpoint

    def lookup_party_keys(self, id: Identifier) -> tuple[KeyPairRecord, ...]:
        record = self.party(id)
        if record is None:
            raise NotFound(str(id))
        return (record.main_key, record.user_ca_key) + record.user_keys

    # RegistryView protocol for rule verification.
    def party_namespace(self, party: Identifier) -> str | None:
        record = self.party(party)
        return record.namespace if record else None

    def party_main_key(self, party: Identifier) -> bytes | None:
        record = self.party(party)
        return record.main_key.public if record else None
