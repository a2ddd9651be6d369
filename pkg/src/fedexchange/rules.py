"""The eight policy rule types, their canonical byte form, and rule signing.

Text form is function-call syntax, one rule per line:

    MayAccess(asset:ns_a:D, site:ns_a:Asite)
    MayUse(asset:ns_a:D, party:ns_b:B, "non-commercial")
    ResultOfDataIn(asset:ns_a:D, asset:ns_b:Bproc, y, asset_collection:ns_a:Dres)

Canonical byte form is a one-byte variant tag followed by length-prefixed
UTF-8 fields in declared order (4-byte big-endian lengths); it is what
gets signed, and doubles as the rule's storage key via its SHA-256 hash.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from typing import Protocol, Union

from . import crypto
from .identifiers import (
    ANY,
    Identifier,
    IdentifierPattern,
    Kind,
    Wildcard,
    parse_identifier,
    parse_pattern,
)


class RuleError(ValueError):
    pass


def _require_kind(value: Identifier, field: str, *kinds: Kind) -> None:
    if value.kind not in kinds:
        allowed = "/".join(k.value for k in kinds)
        raise RuleError(f"{field} must have kind {allowed}, got {value}")


def _require_concrete(value: IdentifierPattern, field: str) -> Identifier:
    if isinstance(value, Wildcard):
        raise RuleError(f"{field} is the rule subject and may not be a wildcard")
    return value


_ASSETISH = (Kind.ASSET, Kind.ASSET_COLLECTION, Kind.ASSET_CATEGORY, Kind.RESULT)


@dataclass(frozen=True)
class InAssetCollection:
    asset: Identifier
    collection: Identifier

    def __post_init__(self) -> None:
        _require_concrete(self.asset, "asset")
        _require_kind(self.asset, "asset", *_ASSETISH)
        _require_kind(self.collection, "collection", Kind.ASSET_COLLECTION)


@dataclass(frozen=True)
class InAssetCategory:
    asset: Identifier
    category: Identifier

    def __post_init__(self) -> None:
        _require_kind(self.asset, "asset", *_ASSETISH)
        _require_kind(self.category, "category", Kind.ASSET_CATEGORY)


@dataclass(frozen=True)
class InSiteCategory:
    site: Identifier
    category: Identifier

    def __post_init__(self) -> None:
        _require_kind(self.site, "site", Kind.SITE, Kind.SITE_CATEGORY)
        _require_kind(self.category, "category", Kind.SITE_CATEGORY)


@dataclass(frozen=True)
class InPartyCategory:
    party: Identifier
    category: Identifier

    def __post_init__(self) -> None:
        _require_kind(self.party, "party", Kind.PARTY, Kind.PARTY_CATEGORY)
        _require_kind(self.category, "category", Kind.PARTY_CATEGORY)


@dataclass(frozen=True)
class MayAccess:
    asset: IdentifierPattern
    site: IdentifierPattern

    def __post_init__(self) -> None:
        asset = _require_concrete(self.asset, "asset")
        _require_kind(asset, "asset", Kind.ASSET, Kind.ASSET_COLLECTION)
        if isinstance(self.site, Identifier):
            _require_kind(self.site, "site", Kind.SITE, Kind.SITE_CATEGORY)


@dataclass(frozen=True)
class MayUse:
    asset: IdentifierPattern
    party: IdentifierPattern
    conditions: str = ""

    def __post_init__(self) -> None:
        asset = _require_concrete(self.asset, "asset")
        _require_kind(asset, "asset", Kind.ASSET, Kind.ASSET_COLLECTION)
        if isinstance(self.party, Identifier):
            _require_kind(self.party, "party", Kind.PARTY, Kind.PARTY_CATEGORY)


@dataclass(frozen=True)
class ResultOfDataIn:
    data_asset: IdentifierPattern
    compute_asset: IdentifierPattern
    output: str  # output name or "*"
    collection: Identifier

    def __post_init__(self) -> None:
        data = _require_concrete(self.data_asset, "data_asset")
        _require_kind(data, "data_asset", Kind.ASSET, Kind.ASSET_COLLECTION)
        if isinstance(self.compute_asset, Identifier):
            _require_kind(self.compute_asset, "compute_asset", Kind.ASSET, Kind.ASSET_CATEGORY)
        _require_kind(self.collection, "collection", Kind.ASSET_COLLECTION)


@dataclass(frozen=True)
class ResultOfComputeIn:
    data_asset: IdentifierPattern
    compute_asset: IdentifierPattern
    output: str
    collection: Identifier

    def __post_init__(self) -> None:
        compute = _require_concrete(self.compute_asset, "compute_asset")
        _require_kind(compute, "compute_asset", Kind.ASSET, Kind.ASSET_COLLECTION)
        if isinstance(self.data_asset, Identifier):
            _require_kind(self.data_asset, "data_asset", Kind.ASSET, Kind.ASSET_CATEGORY)
        _require_kind(self.collection, "collection", Kind.ASSET_COLLECTION)


Rule = Union[
    InAssetCollection,
    InAssetCategory,
    InSiteCategory,
    InPartyCategory,
    MayAccess,
    MayUse,
    ResultOfDataIn,
    ResultOfComputeIn,
]

# Variant tags for canonical serialization; order is part of the format.
_VARIANTS: list[type] = [
    InAssetCollection,
    InAssetCategory,
    InSiteCategory,
    InPartyCategory,
    MayAccess,
    MayUse,
    ResultOfDataIn,
    ResultOfComputeIn,
]
_TAG = {cls: i + 1 for i, cls in enumerate(_VARIANTS)}
_BY_NAME = {cls.__name__: cls for cls in _VARIANTS}


def subject(rule: Rule) -> Identifier:
    """The identifier whose namespace owner is entitled to make this rule."""
    if isinstance(rule, InAssetCollection):
        return rule.asset
    if isinstance(rule, InAssetCategory):
        return rule.category
    if isinstance(rule, InSiteCategory):
        return rule.category
    if isinstance(rule, InPartyCategory):
        return rule.category
    if isinstance(rule, MayAccess):
        return rule.asset  # type: ignore[return-value]
    if isinstance(rule, MayUse):
        return rule.asset  # type: ignore[return-value]
    if isinstance(rule, ResultOfDataIn):
        return rule.data_asset  # type: ignore[return-value]
    if isinstance(rule, ResultOfComputeIn):
        return rule.compute_asset  # type: ignore[return-value]
    raise TypeError(f"not a rule: {rule!r}")


def _fields(rule: Rule) -> list[str]:
    if isinstance(rule, InAssetCollection):
        return [str(rule.asset), str(rule.collection)]
    if isinstance(rule, InAssetCategory):
        return [str(rule.asset), str(rule.category)]
    if isinstance(rule, InSiteCategory):
        return [str(rule.site), str(rule.category)]
    if isinstance(rule, InPartyCategory):
        return [str(rule.party), str(rule.category)]
    if isinstance(rule, MayAccess):
        return [str(rule.asset), str(rule.site)]
    if isinstance(rule, MayUse):
        return [str(rule.asset), str(rule.party), rule.conditions]
    if isinstance(rule, (ResultOfDataIn, ResultOfComputeIn)):
        return [str(rule.data_asset), str(rule.compute_asset), rule.output, str(rule.collection)]
    raise TypeError(f"not a rule: {rule!r}")


def canonical_bytes(rule: Rule) -> bytes:
    """Deterministic byte form of a rule: tag byte + length-prefixed fields."""
    out = bytes([_TAG[type(rule)]])
    for field in _fields(rule):
        raw = field.encode("utf-8")
        out += len(raw).to_bytes(4, "big") + raw
    return out


def rule_hash(rule: Rule) -> str:
    return hashlib.sha256(canonical_bytes(rule)).hexdigest()


# --- text form -------------------------------------------------------------

_RULE_RE = re.compile(r"^\s*([A-Za-z]+)\s*\((.*)\)\s*$", re.S)


def _split_args(body: str) -> list[str]:
    args: list[str] = []
    current: list[str] = []
    in_quote = False
    for ch in body:
        if ch == '"':
            in_quote = not in_quote
            current.append(ch)
        elif ch == "," and not in_quote:
            args.append("".join(current).strip())
            current = []
        else:
            current.append(ch)
    last = "".join(current).strip()
    if last or args:
        args.append(last)
    return args


def _unquote(text: str) -> str:
    if len(text) >= 2 and text.startswith('"') and text.endswith('"'):
        return text[1:-1]
    return text


def parse_rule(text: str) -> Rule:
    """Parse one rule in function-call text form."""
    match = _RULE_RE.match(text)
    if not match:
        raise RuleError(f"not a rule: {text!r}")
    name, body = match.groups()
    if name not in _BY_NAME:
        raise RuleError(f"unknown rule type {name!r}")
    args = _split_args(body)
    try:
        if name == "InAssetCollection":
            return InAssetCollection(parse_identifier(args[0]), parse_identifier(args[1]))
        if name == "InAssetCategory":
            return InAssetCategory(parse_identifier(args[0]), parse_identifier(args[1]))
        if name == "InSiteCategory":
            return InSiteCategory(parse_identifier(args[0]), parse_identifier(args[1]))
        if name == "InPartyCategory":
            return InPartyCategory(parse_identifier(args[0]), parse_identifier(args[1]))
        if name == "MayAccess":
            return MayAccess(parse_pattern(args[0]), parse_pattern(args[1]))
        if name == "MayUse":
            conditions = _unquote(args[2]) if len(args) > 2 else ""
            return MayUse(parse_pattern(args[0]), parse_pattern(args[1]), conditions)
        cls = _BY_NAME[name]
        return cls(
            parse_pattern(args[0]),
            parse_pattern(args[1]),
            args[2],
            parse_identifier(args[3]),
        )
    except IndexError as exc:
        raise RuleError(f"wrong number of arguments in {text!r}") from exc


def render_rule(rule: Rule) -> str:
    name = type(rule).__name__
    fields = _fields(rule)
    if isinstance(rule, MayUse):
        fields = fields[:2] + [f'"{rule.conditions}"']
    return f"{name}({', '.join(fields)})"


# --- signing ---------------------------------------------------------------


class UnknownSigner(ValueError):
    pass


class SubjectNotOwned(ValueError):
    pass


class BadSignature(ValueError):
    pass


@dataclass(frozen=True)
class SignedRule:
    rule: Rule
    signer: Identifier
    signature: bytes

    @property
    def hash(self) -> str:
        return rule_hash(self.rule)


class RegistryView(Protocol):
    """The slice of the registry a rule verifier needs."""

    def party_namespace(self, party: Identifier) -> "str | None": ...

    def party_main_key(self, party: Identifier) -> "bytes | None": ...


def sign_rule(rule: Rule, signer: Identifier, key: crypto.PrivateKey) -> SignedRule:
    return SignedRule(rule, signer, key.sign(canonical_bytes(rule)))


def verify_rule(signed: SignedRule, registry: RegistryView) -> bool:
    """Check a rule's signature and the signer's ownership of the subject.

    Raises UnknownSigner, SubjectNotOwned or BadSignature; returns True
    when the rule is acceptable.
    """
    namespace = registry.party_namespace(signed.signer)
    key = registry.party_main_key(signed.signer)
    if namespace is None or key is None:
        raise UnknownSigner(str(signed.signer))
    if subject(signed.rule).namespace != namespace:
        raise SubjectNotOwned(
            f"{signed.signer} (namespace {namespace}) does not own "
            f"{subject(signed.rule)}"
        )
    if not crypto.verify(key, signed.signature, canonical_bytes(signed.rule)):
        raise BadSignature(render_rule(signed.rule))
    return True


def is_valid_rule(signed: SignedRule, registry: RegistryView) -> bool:
    try:
        return verify_rule(signed, registry)
    except (UnknownSigner, SubjectNotOwned, BadSignature):
        return False


# --- wire form -------------------------------------------------------------


def signed_rule_to_json(signed: SignedRule) -> dict:
    return {
        "rule": render_rule(signed.rule),
        "signer": str(signed.signer),
        "signature": signed.signature.hex(),
    }


def signed_rule_from_json(data: dict) -> SignedRule:
    return SignedRule(
        parse_rule(data["rule"]),
        parse_identifier(data["signer"]),
        bytes.fromhex(data["signature"]),
    )
