"""Rule store snapshot and the permission evaluation algebra.

Evaluation is purely functional over an immutable snapshot of verified
rules. Access for a site follows a path up through site categories to a
MayAccess rule naming the asset or a collection that (transitively)
contains it; usage for a party works the same way through party
categories and MayUse rules. Workflow results carry a permissions object,
a set of sets of collections: a site needs access to at least one member
of every inner set.
"""

from __future__ import annotations

from typing import FrozenSet, Iterable, Mapping, Optional

from .identifiers import ANY, Identifier, IdentifierPattern, Wildcard
from .rules import (
    InAssetCategory,
    InAssetCollection,
    InPartyCategory,
    InSiteCategory,
    MayAccess,
    MayUse,
    RegistryView,
    ResultOfComputeIn,
    ResultOfDataIn,
    Rule,
    SignedRule,
    is_valid_rule,
)

PermissionsObject = FrozenSet[FrozenSet[Identifier]]


def primary_permissions(asset: Identifier) -> PermissionsObject:
    """P for a primary asset is exactly {{asset}}."""
    return frozenset({frozenset({asset})})


def _upset(start: Identifier, edges: Mapping[Identifier, frozenset[Identifier]]
           ) -> frozenset[Identifier]:
    """Reflexive-transitive closure upward along membership edges."""
    seen = {start}
    stack = [start]
    while stack:
        node = stack.pop()
        for parent in edges.get(node, ()):
            if parent not in seen:
                seen.add(parent)
                stack.append(parent)
    return frozenset(seen)


class Relations:
    """Relations derived from a rule snapshot, with memoised closures."""

    def __init__(self, rules: Iterable[Rule]):
        self.rules = tuple(rules)
        self.may_access: list[tuple[Identifier, IdentifierPattern]] = []
        self.may_use: list[tuple[Identifier, IdentifierPattern, str]] = []
        self.result_data: list[tuple[IdentifierPattern, IdentifierPattern, str, Identifier]] = []
        self.result_compute: list[tuple[IdentifierPattern, IdentifierPattern, str, Identifier]] = []
        collection_edges: dict[Identifier, set[Identifier]] = {}
        asset_category_edges: dict[Identifier, set[Identifier]] = {}
        site_category_edges: dict[Identifier, set[Identifier]] = {}
        party_category_edges: dict[Identifier, set[Identifier]] = {}
        for rule in self.rules:
            if isinstance(rule, MayAccess):
                self.may_access.append((rule.asset, rule.site))  # type: ignore[arg-type]
            elif isinstance(rule, MayUse):
                self.may_use.append((rule.asset, rule.party, rule.conditions))  # type: ignore[arg-type]
            elif isinstance(rule, InAssetCollection):
                collection_edges.setdefault(rule.asset, set()).add(rule.collection)
            elif isinstance(rule, InAssetCategory):
                asset_category_edges.setdefault(rule.asset, set()).add(rule.category)
            elif isinstance(rule, InSiteCategory):
                site_category_edges.setdefault(rule.site, set()).add(rule.category)
            elif isinstance(rule, InPartyCategory):
                party_category_edges.setdefault(rule.party, set()).add(rule.category)
            elif isinstance(rule, ResultOfDataIn):
                self.result_data.append(
                    (rule.data_asset, rule.compute_asset, rule.output, rule.collection)
                )
            elif isinstance(rule, ResultOfComputeIn):
                self.result_compute.append(
                    (rule.data_asset, rule.compute_asset, rule.output, rule.collection)
                )
        self._collection_edges = {k: frozenset(v) for k, v in collection_edges.items()}
        self._asset_category_edges = {k: frozenset(v) for k, v in asset_category_edges.items()}
        self._site_category_edges = {k: frozenset(v) for k, v in site_category_edges.items()}
        self._party_category_edges = {k: frozenset(v) for k, v in party_category_edges.items()}
        self._upset_cache: dict[tuple[str, Identifier], frozenset[Identifier]] = {}

    def _cached_upset(self, tag: str, edges, node: Identifier) -> frozenset[Identifier]:
        cached = self._upset_cache.get((tag, node))
        if cached is None:
            cached = _upset(node, edges)
            self._upset_cache[(tag, node)] = cached
        return cached

    def collection_upset(self, asset: Identifier) -> frozenset[Identifier]:
        """Asset plus all collections (transitively) containing it."""
        return self._cached_upset("coll", self._collection_edges, asset)

    def asset_category_upset(self, asset: Identifier) -> frozenset[Identifier]:
        return self._cached_upset("acat", self._asset_category_edges, asset)

    def site_upset(self, site: Identifier) -> frozenset[Identifier]:
        return self._cached_upset("site", self._site_category_edges, site)

    def party_upset(self, party: Identifier) -> frozenset[Identifier]:
        return self._cached_upset("party", self._party_category_edges, party)


def build_relations(rules: Iterable[Rule]) -> Relations:
    return Relations(rules)


def _matches(pattern: IdentifierPattern, candidates: frozenset[Identifier]) -> bool:
    return isinstance(pattern, Wildcard) or pattern in candidates


def has_access(rel: Relations, site: Identifier, asset: Identifier) -> bool:
    """True iff the site reaches a MayAccess rule covering the asset."""
    sites = rel.site_upset(site)
    assets = rel.collection_upset(asset)
    for rule_asset, rule_site in rel.may_access:
        if rule_asset in assets and _matches(rule_site, sites):
            return True
    return False


def may_use(rel: Relations, party: Identifier, asset: Identifier
            ) -> Optional[frozenset[str]]:
    """Conditions of all matching MayUse rules, or None when no path exists."""
    parties = rel.party_upset(party)
    assets = rel.collection_upset(asset)
    conditions: set[str] = set()
    found = False
    for rule_asset, rule_party, rule_conditions in rel.may_use:
        if rule_asset in assets and _matches(rule_party, parties):
            found = True
            conditions.add(rule_conditions)
    return frozenset(conditions) if found else None


def match_result_rules(rel: Relations, input: Identifier, compute: Identifier,
                       output: str) -> tuple[frozenset[Identifier], frozenset[Identifier]]:
    """Collections the (input, compute, output) combination maps into.

    Returns the targets matched via ResultOfDataIn and via ResultOfComputeIn.
    The subject side is lifted through collections and the other asset
    through categories; the lifting is reversed between the two rule types.
    """
    input_collections = rel.collection_upset(input)
    input_categories = rel.asset_category_upset(input)
    compute_collections = rel.collection_upset(compute)
    compute_categories = rel.asset_category_upset(compute)
    via_data = frozenset(
        target
        for data_pat, compute_pat, output_pat, target in rel.result_data
        if _matches(data_pat, input_collections)
        and _matches(compute_pat, compute_categories)
        and output_pat in ("*", output)
    )
    via_compute = frozenset(
        target
        for data_pat, compute_pat, output_pat, target in rel.result_compute
        if _matches(data_pat, input_categories)
        and _matches(compute_pat, compute_collections)
        and output_pat in ("*", output)
    )
    return via_data, via_compute


def propagate_permissions(rel: Relations, inputs: Iterable[PermissionsObject],
                          compute: Identifier, output: str) -> PermissionsObject:
    """Permissions object of a step output.

    Each inner set of each input maps to one set of targets via the
    ResultOfDataIn rules and one via the ResultOfComputeIn rules; empty
    images are kept, making the result inaccessible.
    """
    family: set[frozenset[Identifier]] = set()
    for perms in inputs:
        for inner in perms:
            via_data: set[Identifier] = set()
            via_compute: set[Identifier] = set()
            for member in inner:
                d, c = match_result_rules(rel, member, compute, output)
                via_data |= d
                via_compute |= c
            family.add(frozenset(via_data))
            family.add(frozenset(via_compute))
    return frozenset(family)


def has_access_result(rel: Relations, site: Identifier,
                      perms: PermissionsObject) -> bool:
    """True iff the site has access to at least one member of every inner set."""
    return all(
        any(has_access(rel, site, member) for member in inner)
        for inner in perms
    )


def may_use_result(rel: Relations, party: Identifier,
                   perms: PermissionsObject) -> Optional[frozenset[str]]:
    """Union of conditions over each inner set's satisfied MayUse rules.

    None when some inner set has no member the party may use.
    """
    conditions: set[str] = set()
    for inner in perms:
        satisfied = False
        for member in inner:
            found = may_use(rel, party, member)
            if found is not None:
                satisfied = True
                conditions |= found
        if not satisfied:
            return None
    return frozenset(conditions)


class RuleSet:
    """Verified rules drawn from the local store and all replicas."""

    def __init__(self, rules: Iterable[Rule]):
        self.rules = tuple(rules)

    @classmethod
    def from_signed(cls, signed_rules: Iterable[SignedRule],
                    registry: RegistryView) -> "RuleSet":
        """Keep only rules that verify against the registry view."""
        return cls(s.rule for s in signed_rules if is_valid_rule(s, registry))

    def relations(self) -> Relations:
        return Relations(self.rules)
