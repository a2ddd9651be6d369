import random

import pytest

from fedexchange.identifiers import Identifier, Kind
from fedexchange.identifiers import parse_identifier as pid
from fedexchange.planner import (
    NoValidPlan,
    permitted_sites,
    plan_cost,
    plan_workflow,
    result_permissions,
)
from fedexchange.policy import build_relations
from fedexchange.rules import parse_rule
from fedexchange.workflow import Step, Workflow
from oracles import oracle_plan_cost, oracle_plans, random_instance


def relations(*texts):
    return build_relations([parse_rule(t) for t in texts])


def proc_workflow():
    return Workflow(
        id="wf-proc",
        inputs={"data": pid("asset:ns_a:D")},
        steps=(Step("proc", pid("asset:ns_b:Bproc"), {"in": "data"}, ("y",)),),
        outputs={"result": "proc.y"},
    )


SITES = [pid("site:ns_a:Asite"), pid("site:ns_b:Bsite"), pid("site:ns_c:Csite")]

FULL_GRANTS = [
    "ResultOfDataIn(asset:ns_a:D, asset:ns_b:Bproc, y, asset_collection:ns_a:Dres)",
    "ResultOfComputeIn(asset:ns_a:D, asset:ns_b:Bproc, y, asset_collection:ns_b:Dres)",
    "MayAccess(asset_collection:ns_a:Dres, *)",
    "MayAccess(asset_collection:ns_b:Dres, *)",
]


def test_permitted_sites_require_data_compute_and_outputs():
    rel = relations(
        "MayAccess(asset:ns_a:D, site:ns_a:Asite)",
        "MayAccess(asset:ns_a:D, site:ns_c:Csite)",
        "MayAccess(asset:ns_b:Bproc, site:ns_b:Bsite)",
        "MayAccess(asset:ns_b:Bproc, site:ns_c:Csite)",
        *FULL_GRANTS,
    )
    wf = proc_workflow()
    allowed = permitted_sites(wf, wf.steps[0], rel, SITES)
    # Asite lacks the software, Bsite lacks the data.
    assert allowed == frozenset({pid("site:ns_c:Csite")})


def test_missing_output_access_blocks_a_site():
    rel = relations(
        "MayAccess(asset:ns_a:D, *)",
        "MayAccess(asset:ns_b:Bproc, *)",
        "ResultOfDataIn(asset:ns_a:D, asset:ns_b:Bproc, y, asset_collection:ns_a:Dres)",
        "ResultOfComputeIn(asset:ns_a:D, asset:ns_b:Bproc, y, asset_collection:ns_b:Dres)",
        "MayAccess(asset_collection:ns_a:Dres, site:ns_b:Bsite)",
        "MayAccess(asset_collection:ns_b:Dres, site:ns_b:Bsite)",
    )
    wf = proc_workflow()
    assert permitted_sites(wf, wf.steps[0], rel, SITES) == \
        frozenset({pid("site:ns_b:Bsite")})


def test_no_valid_plan_names_blocked_step():
    rel = relations("MayAccess(asset:ns_a:D, *)")
    with pytest.raises(NoValidPlan) as excinfo:
        plan_workflow(proc_workflow(), rel, SITES)
    assert "proc" in str(excinfo.value)
    assert excinfo.value.permitted["proc"] == frozenset()


def test_empty_workflow_yields_single_empty_plan():
    wf = Workflow("wf-dl", {"data": pid("asset:ns_a:D")}, (), {"result": "data"})
    plans = plan_workflow(wf, relations(), SITES)
    assert len(plans) == 1
    assert plans[0].assignment == {}


def test_plan_count_is_product_of_permitted_sites():
    rel = relations(
        "MayAccess(asset:ns_a:D, *)",
        "MayAccess(asset:ns_b:K1, *)",
        "MayAccess(asset:ns_b:K2, *)",
        "ResultOfDataIn(asset:ns_a:D, *, *, asset_collection:ns_a:R)",
        "ResultOfDataIn(asset_collection:ns_a:R, *, *, asset_collection:ns_a:R)",
        "ResultOfComputeIn(*, asset:ns_b:K1, *, asset_collection:ns_a:R)",
        "ResultOfComputeIn(*, asset:ns_b:K2, *, asset_collection:ns_a:R)",
        "MayAccess(asset_collection:ns_a:R, *)",
    )
    wf = Workflow(
        "wf-2", {"data": pid("asset:ns_a:D")},
        (Step("s1", pid("asset:ns_b:K1"), {"in": "data"}, ("out",)),
         Step("s2", pid("asset:ns_b:K2"), {"in": "s1.out"}, ("out",))),
        {"result": "s2.out"},
    )
    plans = plan_workflow(wf, rel, SITES)
    assert len(plans) == len(SITES) ** 2


def test_plans_ordered_by_transfer_cost():
    rel = relations(
        "MayAccess(asset:ns_a:D, *)",
        "MayAccess(asset:ns_b:Bproc, *)",
        *FULL_GRANTS,
    )
    wf = proc_workflow()
    input_sites = {"data": pid("site:ns_a:Asite")}
    plans = plan_workflow(wf, rel, SITES, input_sites)
    costs = [plan_cost(wf, p.assignment, input_sites) for p in plans]
    assert costs == sorted(costs)
    # Running next to the data is free and must come first.
    assert plans[0].assignment["proc"] == pid("site:ns_a:Asite")
    assert costs[0] == 0 and costs[1] == 1


def test_deterministic_tie_break():
    rel = relations(
        "MayAccess(asset:ns_a:D, *)",
        "MayAccess(asset:ns_b:Bproc, *)",
        *FULL_GRANTS,
    )
    wf = proc_workflow()
    first = plan_workflow(wf, rel, SITES)
    second = plan_workflow(wf, rel, list(reversed(SITES)))
    assert [p.assignment for p in first] == [p.assignment for p in second]


# --- exhaustive comparison against the brute-force oracle ----------------------


def random_workflow(rng, inst, max_steps=4):
    n_steps = rng.randint(1, max_steps)
    inputs = {f"in{i}": rng.choice(inst.assets)
              for i in range(rng.randint(1, 2))}
    refs = list(inputs)
    steps = []
    for i in range(n_steps):
        n_in = rng.randint(1, min(2, len(refs)))
        step_inputs = {f"arg{j}": rng.choice(refs) for j in range(n_in)}
        outputs = tuple(rng.sample(inst.outputs, rng.randint(1, 2)))
        name = f"step{i}"
        steps.append(Step(name, rng.choice(inst.assets), step_inputs, outputs))
        refs.extend(f"{name}.{o}" for o in outputs)
    return Workflow("wf-rnd", inputs, tuple(steps), {"result": refs[-1]})


@pytest.mark.parametrize("seed", range(6))
def test_plan_enumeration_matches_oracle(seed):
    rng = random.Random(seed)
    for _ in range(20):
        inst = random_instance(rng, max_sites=4, max_assets=8, max_rules=25,
                               wildcard_p=0.25)
        wf = random_workflow(rng, inst)
        try:
            plans = plan_workflow(wf, build_relations(inst.rules), inst.sites)
            got = {frozenset(p.assignment.items()) for p in plans}
        except NoValidPlan:
            got = set()
        want = oracle_plans(wf, inst.rules, inst.sites)
        assert got == want


@pytest.mark.parametrize("seed", range(3))
def test_cost_function_matches_oracle(seed):
    rng = random.Random(500 + seed)
    for _ in range(20):
        inst = random_instance(rng, max_sites=4, max_assets=8, max_rules=25,
                               wildcard_p=0.3)
        wf = random_workflow(rng, inst)
        input_sites = {name: rng.choice(inst.sites) for name in wf.inputs}
        assignment = {s.name: rng.choice(inst.sites) for s in wf.steps}
        assert plan_cost(wf, assignment, input_sites) == \
            oracle_plan_cost(wf, assignment, input_sites)


def test_result_permissions_reports_every_reference():
    rel = relations(*FULL_GRANTS)
    wf = proc_workflow()
    perms = result_permissions(wf, rel)
    assert perms["data"] == frozenset({frozenset({pid("asset:ns_a:D")})})
    assert "proc.y" in perms
