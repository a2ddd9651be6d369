import pytest

from fedexchange.crypto import PrivateKey
from fedexchange.identifiers import ANY, Identifier, Kind, parse_identifier
from fedexchange.rules import (
    BadSignature,
    InAssetCategory,
    InAssetCollection,
    MayAccess,
    MayUse,
    ResultOfComputeIn,
    ResultOfDataIn,
    RuleError,
    SignedRule,
    SubjectNotOwned,
    UnknownSigner,
    canonical_bytes,
    is_valid_rule,
    parse_rule,
    render_rule,
    rule_hash,
    sign_rule,
    signed_rule_from_json,
    signed_rule_to_json,
    subject,
    verify_rule,
)

RULE_TEXTS = [
    "InAssetCollection(asset:ns_a:D, asset_collection:ns_a:Dres)",
    "InAssetCategory(asset:ns_a:D, asset_category:ns_a:tables)",
    "InSiteCategory(site:ns_a:Asite, site_category:ns_a:eu)",
    "InPartyCategory(party:ns_b:B, party_category:ns_a:partners)",
    "MayAccess(asset:ns_a:D, site:ns_a:Asite)",
    "MayAccess(asset:ns_a:D, *)",
    'MayUse(asset:ns_a:D, party:ns_b:B, "non-commercial")',
    "ResultOfDataIn(asset:ns_a:D, asset:ns_b:Bproc, y, asset_collection:ns_a:Dres)",
    "ResultOfDataIn(asset:ns_a:D, *, *, asset_collection:ns_a:Dres)",
    "ResultOfComputeIn(*, asset:ns_b:Bproc, *, asset_collection:ns_b:Dres)",
]

# Frozen canonical byte forms; the serialization format is part of the
# signed material and must never drift.
GOLDEN_BYTES = {
    "InAssetCollection(asset:ns_a:D, asset_collection:ns_a:Dres)":
        "010000000c61737365743a6e735f613a440000001a61737365745f636f6c6c"
        "656374696f6e3a6e735f613a44726573",
    "MayAccess(asset:ns_a:D, site:ns_a:Asite)":
        "050000000c61737365743a6e735f613a440000000f736974653a6e735f613a"
        "4173697465",
    "MayAccess(asset:ns_a:D, *)":
        "050000000c61737365743a6e735f613a44000000012a",
    'MayUse(asset:ns_a:D, party:ns_b:B, "non-commercial")':
        "060000000c61737365743a6e735f613a440000000c70617274793a6e735f62"
        "3a420000000e6e6f6e2d636f6d6d65726369616c",
    "ResultOfDataIn(asset:ns_a:D, asset:ns_b:Bproc, y, asset_collection:ns_a:Dres)":
        "070000000c61737365743a6e735f613a440000001061737365743a6e735f62"
        "3a4270726f6300000001790000001a61737365745f636f6c6c656374696f6e"
        "3a6e735f613a44726573",
    "ResultOfComputeIn(*, asset:ns_b:Bproc, *, asset_collection:ns_b:Dres)":
        "08000000012a0000001061737365743a6e735f623a4270726f63000000012a"
        "0000001a61737365745f636f6c6c656374696f6e3a6e735f623a44726573",
}


@pytest.mark.parametrize("text", RULE_TEXTS)
def test_text_roundtrip(text):
    rule = parse_rule(text)
    assert parse_rule(render_rule(rule)) == rule


def test_render_quotes_conditions():
    rule = parse_rule('MayUse(asset:ns_a:D, party:ns_b:B, "non-commercial")')
    assert render_rule(rule) == 'MayUse(asset:ns_a:D, party:ns_b:B, "non-commercial")'
    assert rule.conditions == "non-commercial"


def test_conditions_may_contain_commas():
    rule = parse_rule('MayUse(asset:ns_a:D, party:ns_b:B, "a, b, c")')
    assert rule.conditions == "a, b, c"
    assert parse_rule(render_rule(rule)) == rule


@pytest.mark.parametrize("text,expected", sorted(GOLDEN_BYTES.items()))
def test_canonical_bytes_frozen(text, expected):
    assert canonical_bytes(parse_rule(text)).hex() == expected


def test_rule_hash_is_sha256_of_canonical_bytes():
    import hashlib

    rule = parse_rule("MayAccess(asset:ns_a:D, site:ns_a:Asite)")
    assert rule_hash(rule) == hashlib.sha256(canonical_bytes(rule)).hexdigest()


def test_distinct_rules_distinct_bytes():
    seen = {canonical_bytes(parse_rule(t)) for t in RULE_TEXTS}
    assert len(seen) == len(RULE_TEXTS)


def test_variant_tag_distinguishes_result_rule_families():
    data = parse_rule(
        "ResultOfDataIn(asset:ns_a:D, asset:ns_a:K, y, asset_collection:ns_a:C)")
    compute = parse_rule(
        "ResultOfComputeIn(asset:ns_a:D, asset:ns_a:K, y, asset_collection:ns_a:C)")
    assert canonical_bytes(data) != canonical_bytes(compute)
    assert canonical_bytes(data)[1:] == canonical_bytes(compute)[1:]


def test_subject_field():
    assert subject(parse_rule("MayAccess(asset:ns_a:D, site:ns_b:S)")) == \
        parse_identifier("asset:ns_a:D")
    assert subject(parse_rule(
        "ResultOfComputeIn(*, asset:ns_b:Bproc, *, asset_collection:ns_b:C)")) == \
        parse_identifier("asset:ns_b:Bproc")
    assert subject(parse_rule(
        "InPartyCategory(party:ns_b:B, party_category:ns_a:partners)")) == \
        parse_identifier("party_category:ns_a:partners")


def test_subject_may_not_be_wildcard():
    with pytest.raises(RuleError):
        parse_rule("MayAccess(*, site:ns_a:Asite)")
    with pytest.raises(RuleError):
        parse_rule("ResultOfDataIn(*, asset:ns_b:K, y, asset_collection:ns_a:C)")
    with pytest.raises(RuleError):
        parse_rule("ResultOfComputeIn(asset:ns_a:D, *, y, asset_collection:ns_a:C)")


def test_kind_constraints():
    with pytest.raises(RuleError):
        parse_rule("MayAccess(site:ns_a:S, site:ns_a:Asite)")
    with pytest.raises(RuleError):
        parse_rule("InAssetCollection(asset:ns_a:D, asset_category:ns_a:K)")


def test_parse_rejects_garbage():
    for bad in ["", "MayAccess", "Frobnicate(a, b)",
                "MayAccess(asset:ns_a:D)"]:
        with pytest.raises(RuleError):
            parse_rule(bad)


# --- signing -----------------------------------------------------------------


class FakeRegistry:
    """RegistryView over a dict: party id -> (namespace, main key bytes)."""

    def __init__(self, parties):
        self._parties = parties

    def party_namespace(self, party):
        entry = self._parties.get(party)
        return entry[0] if entry else None

    def party_main_key(self, party):
        entry = self._parties.get(party)
        return entry[1] if entry else None


@pytest.fixture
def world():
    key_a = PrivateKey.generate()
    key_b = PrivateKey.generate()
    a = parse_identifier("party:ns_a:A")
    b = parse_identifier("party:ns_b:B")
    registry = FakeRegistry({
        a: ("ns_a", key_a.public_bytes()),
        b: ("ns_b", key_b.public_bytes()),
    })
    return a, key_a, b, key_b, registry


def test_sign_and_verify(world):
    a, key_a, _, _, registry = world
    rule = parse_rule("MayAccess(asset:ns_a:D, site:ns_b:Bsite)")
    signed = sign_rule(rule, a, key_a)
    assert verify_rule(signed, registry)
    assert is_valid_rule(signed, registry)


def test_non_owner_signature_rejected(world):
    a, key_a, b, key_b, registry = world
    # B signs a rule whose subject lives in A's namespace.
    rule = parse_rule("MayAccess(asset:ns_a:D, site:ns_b:Bsite)")
    signed = sign_rule(rule, b, key_b)
    with pytest.raises(SubjectNotOwned):
        verify_rule(signed, registry)
    assert not is_valid_rule(signed, registry)


def test_unknown_signer_rejected(world):
    *_, registry = world
    ghost = parse_identifier("party:ns_x:X")
    rule = parse_rule("MayAccess(asset:ns_x:D, site:ns_x:S)")
    signed = sign_rule(rule, ghost, PrivateKey.generate())
    with pytest.raises(UnknownSigner):
        verify_rule(signed, registry)


def test_tampered_rule_rejected(world):
    a, key_a, _, _, registry = world
    rule = parse_rule("MayAccess(asset:ns_a:D, site:ns_b:Bsite)")
    signed = sign_rule(rule, a, key_a)
    # Swap in a different rule body under the original signature.
    tampered = SignedRule(parse_rule("MayAccess(asset:ns_a:D, *)"),
                          signed.signer, signed.signature)
    with pytest.raises(BadSignature):
        verify_rule(tampered, registry)
    assert not is_valid_rule(tampered, registry)


def test_signed_rule_json_roundtrip(world):
    a, key_a, _, _, registry = world
    rule = parse_rule('MayUse(asset:ns_a:D, party:ns_b:B, "research-only")')
    signed = sign_rule(rule, a, key_a)
    restored = signed_rule_from_json(signed_rule_to_json(signed))
    assert restored == signed
    assert verify_rule(restored, registry)


def test_wildcard_fields_survive_signing(world):
    a, key_a, _, _, registry = world
    rule = ResultOfDataIn(parse_identifier("asset:ns_a:D"), ANY, "*",
                          parse_identifier("asset_collection:ns_a:C"))
    signed = sign_rule(rule, a, key_a)
    restored = signed_rule_from_json(signed_rule_to_json(signed))
    assert restored.rule == rule
    assert verify_rule(restored, registry)
