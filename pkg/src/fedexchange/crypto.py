"""Abstract signature scheme and key records.

The exchange models certificate chains as issuer links between key records
rather than as certificate documents: a key record names its issuer, and
carries the issuer's signature over the record's identifying fields.

The concrete scheme is Ed25519; it is named in SCHEME and recorded in
golden-file headers so substitutes satisfying the same sign/verify contract
can be swapped in one place.
"""

from __future__ import annotations

from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .identifiers import Identifier

SCHEME = "ed25519"

# Key roles, matching the chain structure: party keys are issued by the
# exchange root, user pseudonym keys by the owning party's user CA, and
# site endpoint keys by the owning party's main key.
ROLE_PARTY_MAIN = "party-main"
ROLE_PARTY_USER_CA = "party-user-ca"
ROLE_USER_PSEUDONYM = "user-pseudonym"
ROLE_SITE_ENDPOINT = "site-endpoint"


class PrivateKey:
    """Signing half of a key pair."""

    def __init__(self, key: Ed25519PrivateKey):
        self._key = key

    @classmethod
    def generate(cls) -> "PrivateKey":
        return cls(Ed25519PrivateKey.generate())

    @classmethod
    def from_bytes(cls, raw: bytes) -> "PrivateKey":
        return cls(Ed25519PrivateKey.from_private_bytes(raw))

    def to_bytes(self) -> bytes:
        from cryptography.hazmat.primitives import serialization

        return self._key.private_bytes(
            serialization.Encoding.Raw,
            serialization.PrivateFormat.Raw,
            serialization.NoEncryption(),
        )

    def public_bytes(self) -> bytes:
        from cryptography.hazmat.primitives import serialization

        return self._key.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )

    def sign(self, data: bytes) -> bytes:
        return self._key.sign(data)


def verify(public: bytes, signature: bytes, data: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, data)
    except (InvalidSignature, ValueError):
        return False
    return True


@dataclass(frozen=True)
class KeyPairRecord:
    """Public half of a key pair, bound to its owner and issuer.

    ``certification`` is the issuer's signature over the record's
    identifying fields (owner, role, public key), forming a chain that
    stands in for an X.509 certificate.
    """

    owner: Identifier
    role: str
    public: bytes
    issuer: Identifier
    certification: bytes

    def signed_payload(self) -> bytes:
        return key_record_bytes(self.owner, self.role, self.public)

    def verify_certification(self, issuer_public: bytes) -> bool:
        return verify(issuer_public, self.certification, self.signed_payload())


def key_record_bytes(owner: Identifier, role: str, public: bytes) -> bytes:
    """Deterministic bytes an issuer signs when certifying a key."""
    owner_b = str(owner).encode()
    role_b = role.encode()
    return (
        len(owner_b).to_bytes(4, "big")
        + owner_b
        + len(role_b).to_bytes(4, "big")
        + role_b
        + len(public).to_bytes(4, "big")
        + public
    )


def certify(
    owner: Identifier, role: str, public: bytes, issuer: Identifier, issuer_key: PrivateKey
) -> KeyPairRecord:
    """Create a key record certified by the issuer's private key."""
    cert = issuer_key.sign(key_record_bytes(owner, role, public))
    return KeyPairRecord(owner, role, public, issuer, cert)
