"""Per-step permitted-site computation and plan enumeration.

A site may run a step iff it has access to every step input, the compute
asset, and every step output; inputs and outputs carry permissions
objects, with primary assets reduced to the single-set case. Plans are
enumerated exhaustively over the permitted sites per step and ordered by
transfer cost: the number of step-input edges whose producer site differs
from the consumer site.
"""

from __future__ import annotations

from itertools import product
from typing import Iterable, Mapping

from .identifiers import Identifier
from .policy import (
    PermissionsObject,
    Relations,
    has_access,
    has_access_result,
    primary_permissions,
    propagate_permissions,
)
from .workflow import Plan, Step, Workflow, _ref_step, topological_steps


class NoValidPlan(ValueError):
    """No assignment exists; carries per-step permitted sites for diagnosis."""

    def __init__(self, workflow_id: str, permitted: Mapping[str, frozenset[Identifier]]):
        self.workflow_id = workflow_id
        self.permitted = dict(permitted)
        blocked = sorted(step for step, sites in self.permitted.items() if not sites)
        super().__init__(
            f"no valid plan for workflow {workflow_id!r}; "
            f"steps with no permitted site: {', '.join(blocked) or '(none)'}"
        )


def result_permissions(workflow: Workflow, rel: Relations
                       ) -> dict[str, PermissionsObject]:
    """Permissions object per reference: workflow inputs and step outputs.

    Workflow inputs are primary assets with P = {{asset}}; step outputs are
    propagated in topological order.
    """
    perms: dict[str, PermissionsObject] = {
        name: primary_permissions(asset) for name, asset in workflow.inputs.items()
    }
    for step in topological_steps(workflow):
        input_perms = [perms[ref] for ref in step.inputs.values()]
        for output in step.outputs:
            perms[f"{step.name}.{output}"] = propagate_permissions(
                rel, input_perms, step.compute_asset, output
            )
    return perms


def site_may_run_step(rel: Relations, site: Identifier, step: Step,
                      perms: Mapping[str, PermissionsObject]) -> bool:
    """Re-derivable legality check used by both planner and step runner."""
    if not has_access(rel, site, step.compute_asset):
        return False
    for ref in step.inputs.values():
        if not has_access_result(rel, site, perms[ref]):
            return False
    for output in step.outputs:
        if not has_access_result(rel, site, perms[f"{step.name}.{output}"]):
            return False
    return True


def permitted_sites(workflow: Workflow, step: Step, rel: Relations,
                    sites: Iterable[Identifier],
                    perms: Mapping[str, PermissionsObject] | None = None
                    ) -> frozenset[Identifier]:
    if perms is None:
        perms = result_permissions(workflow, rel)
    return frozenset(
        site for site in sites if site_may_run_step(rel, site, step, perms)
    )


def plan_cost(workflow: Workflow, assignment: Mapping[str, Identifier],
              input_sites: Mapping[str, Identifier]) -> int:
    """Number of step-input edges crossing between sites.

    ``input_sites`` maps workflow input names to the site holding the
    asset; unhinted inputs do not count.
    """
    cost = 0
    for step in workflow.steps:
        consumer = assignment[step.name]
        for ref in step.inputs.values():
            producer_step = _ref_step(ref)
            if producer_step is not None:
                producer = assignment[producer_step]
            else:
                producer = input_sites.get(ref)
            if producer is not None and producer != consumer:
                cost += 1
    return cost


def plan_workflow(workflow: Workflow, rel: Relations,
                  sites: Iterable[Identifier],
                  input_sites: Mapping[str, Identifier] | None = None
                  ) -> list[Plan]:
    """All valid plans, ordered by ascending transfer cost.

    Ties break lexicographically by (step name, site) pairs so output is
    deterministic. Raises NoValidPlan when any step has no permitted site.
    A workflow without steps yields the single empty plan.
    """
    input_sites = input_sites or {}
    candidates = sorted(set(sites), key=str)
    perms = result_permissions(workflow, rel)
    per_step = {
        step.name: sorted(
            permitted_sites(workflow, step, rel, candidates, perms), key=str
        )
        for step in workflow.steps
    }
    if any(not allowed for allowed in per_step.values()):
        raise NoValidPlan(
            workflow.id, {name: frozenset(v) for name, v in per_step.items()}
        )
    step_names = [step.name for step in workflow.steps]
    plans = []
    for combination in product(*(per_step[name] for name in step_names)):
        assignment = dict(zip(step_names, combination))
        plans.append(Plan(workflow.id, assignment))
    plans.sort(key=lambda p: (
        plan_cost(workflow, p.assignment, input_sites),
        sorted((step, str(site)) for step, site in p.assignment.items()),
    ))
    return plans
