"""Federated data exchange: policy-governed asset sharing and
distributed workflow execution across independently run sites.
"""

from .assets import Asset, BehaviorRegistry, compute_asset
from .exchange import Exchange, PartyHandle, SiteHandle
from .identifiers import ANY, Identifier, Kind, parse_identifier
from .policy import RuleSet, has_access, may_use, propagate_permissions
from .rules import (
    InAssetCategory,
    InAssetCollection,
    InPartyCategory,
    InSiteCategory,
    MayAccess,
    MayUse,
    ResultOfComputeIn,
    ResultOfDataIn,
    SignedRule,
    parse_rule,
    render_rule,
    sign_rule,
)
from .workflow import Plan, Step, Workflow, validate_workflow

__all__ = [
    "ANY",
    "Asset",
    "BehaviorRegistry",
    "Exchange",
    "Identifier",
    "InAssetCategory",
    "InAssetCollection",
    "InPartyCategory",
    "InSiteCategory",
    "Kind",
    "MayAccess",
    "MayUse",
    "PartyHandle",
    "Plan",
    "ResultOfComputeIn",
    "ResultOfDataIn",
    "RuleSet",
    "SignedRule",
    "SiteHandle",
    "Step",
    "Workflow",
    "compute_asset",
    "has_access",
    "may_use",
    "parse_identifier",
    "parse_rule",
    "propagate_permissions",
    "render_rule",
    "sign_rule",
    "validate_workflow",
]

__version__ = "0.1.0"
