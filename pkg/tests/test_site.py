import base64

import pytest

from fedexchange.assets import Asset, compute_asset
from fedexchange.exchange import Exchange
from fedexchange.identifiers import parse_identifier as pid
from fedexchange.replication import StaleReplica
from fedexchange.rules import SubjectNotOwned, parse_rule, sign_rule
from fedexchange.site import (
    BadRequestSignature,
    PermissionDenied,
    RemoteError,
    sign_request,
)
from fedexchange.workflow import (
    SignedSubmission,
    Step,
    Workflow,
    sign_submission,
)

TABLE = b"x,y\n1.0,2.0\n3.0,4.0\n"

PROCESSING_RULES = [
    "MayAccess(asset:ns_a:D, site:ns_a:Asite)",
    "MayAccess(asset:ns_a:D, site:ns_b:Bsite)",
    "MayAccess(asset:ns_b:Bproc, site:ns_b:Bsite)",
    "ResultOfDataIn(asset:ns_a:D, asset:ns_b:Bproc, y, asset_collection:ns_a:Dres)",
    "ResultOfComputeIn(asset:ns_a:D, asset:ns_b:Bproc, y, asset_collection:ns_b:Dres)",
    "MayAccess(asset_collection:ns_a:Dres, site:ns_b:Bsite)",
    "MayAccess(asset_collection:ns_b:Dres, site:ns_b:Bsite)",
    'MayUse(asset_collection:ns_a:Dres, party:ns_b:B, "")',
    'MayUse(asset_collection:ns_b:Dres, party:ns_b:B, "")',
]


def proc_workflow():
    return Workflow(
        id="wf-proc", inputs={"data": pid("asset:ns_a:D")},
        steps=(Step("proc", pid("asset:ns_b:Bproc"), {"table": "data"}, ("y",)),),
        outputs={"result": "proc.y"},
    )


@pytest.fixture
def world():
    with Exchange("in-process") as ex:
        a = ex.add_party("A", "ns_a")
        b = ex.add_party("B", "ns_b")
        asite = ex.add_site("Asite", a)
        bsite = ex.add_site("Bsite", b)
        ex.store_asset(Asset(pid("asset:ns_a:D"), "data", TABLE))
        ex.store_asset(compute_asset(pid("asset:ns_b:Bproc"), "aggregate-mean"))
        yield ex, a, b, asite, bsite


def add_rules(ex, texts):
    return [ex.add_rule(t) for t in texts]


# --- end to end ----------------------------------------------------------------


def test_processing_job_end_to_end(world):
    ex, a, b, asite, bsite = world
    add_rules(ex, PROCESSING_RULES)
    status = ex.submit(b, proc_workflow())
    assert status["state"] == "done", status["error"]
    assert status["plan"]["assignment"] == {"proc": "site:ns_b:Bsite"}
    assert base64.b64decode(status["outputs"]["result"]) == b"x,y\n2.0,3.0\n"


def test_download_job(world):
    ex, a, b, asite, bsite = world
    add_rules(ex, [
        "MayAccess(asset:ns_a:D, site:ns_a:Asite)",
        "MayAccess(asset:ns_a:D, site:ns_b:Bsite)",
        'MayUse(asset:ns_a:D, party:ns_b:B, "research-only")',
    ])
    wf = Workflow("wf-dl", {"data": pid("asset:ns_a:D")}, (), {"result": "data"})
    status = ex.submit(b, wf)
    assert status["state"] == "done"
    assert base64.b64decode(status["outputs"]["result"]) == TABLE
    assert status["conditions"]["result"] == ["research-only"]


def test_no_valid_plan_diagnosis_names_blocked_step(world):
    ex, a, b, asite, bsite = world
    # No access to the software anywhere: planning must fail, not execution.
    add_rules(ex, [
        "MayAccess(asset:ns_a:D, site:ns_a:Asite)",
        "MayAccess(asset:ns_a:D, site:ns_b:Bsite)",
    ])
    status = ex.submit(b, proc_workflow())
    assert status["state"] == "failed"
    assert status["error"].startswith("NoValidPlan")
    assert "proc" in status["error"]


def test_usage_gate_blocks_delivery(world):
    ex, a, b, asite, bsite = world
    add_rules(ex, PROCESSING_RULES[:7])  # access rules but no MayUse
    status = ex.submit(b, proc_workflow())
    assert status["state"] == "failed"
    assert status["error"].startswith("UsageDenied")


def test_serving_site_needs_its_own_access(world):
    ex, a, b, asite, bsite = world
    # A never granted its own site access to D, so Asite may not serve it.
    add_rules(ex, [r for r in PROCESSING_RULES
                   if r != "MayAccess(asset:ns_a:D, site:ns_a:Asite)"])
    status = ex.submit(b, proc_workflow())
    assert status["state"] == "failed"
    assert "UpstreamDenied" in status["error"]


# --- security gates --------------------------------------------------------------


def test_rule_by_non_owner_rejected_at_ingress(world):
    ex, a, b, asite, bsite = world
    # B signs a grant over A's asset with B's own main key.
    rule = parse_rule("MayAccess(asset:ns_a:D, site:ns_b:Bsite)")
    forged = sign_rule(rule, b.id, b.main)
    with pytest.raises(SubjectNotOwned):
        bsite.server.add_rule(forged)


def test_tampered_rule_dropped_from_snapshot(world):
    ex, a, b, asite, bsite = world
    from fedexchange.rules import SignedRule

    good = ex.sign_rule_text("MayAccess(asset:ns_a:D, *)")
    tampered = SignedRule(parse_rule("MayAccess(asset:ns_a:E, *)"),
                          good.signer, good.signature)
    # Force it into the store bypassing ingress verification; the snapshot
    # must still refuse to honour it.
    asite.server._policy_store.insert(tampered)
    rel = bsite.server.snapshot()
    from fedexchange.policy import has_access
    assert not has_access(rel, bsite.id, pid("asset:ns_a:E"))


def test_tampered_workflow_submission_rejected(world):
    ex, a, b, asite, bsite = world
    add_rules(ex, PROCESSING_RULES)
    good = sign_submission(proc_workflow(), b.id, b.user_public, b.user)
    other = Workflow("wf-evil", {"data": pid("asset:ns_a:D")}, (),
                     {"result": "data"})
    tampered = SignedSubmission(other, good.party, good.user_key, good.signature)
    with pytest.raises(RemoteError) as excinfo:
        ex.submit_raw(tampered, bsite)
    assert excinfo.value.code == "BadSubmissionSignature"


def test_plan_assigning_illegal_step_rejected_by_executor(world):
    ex, a, b, asite, bsite = world
    add_rules(ex, PROCESSING_RULES)
    # Asite has no access to Bproc, so a plan putting the step there is
    # illegal; the executing site must refuse regardless of the plan.
    submission = sign_submission(proc_workflow(), b.id, b.user_public, b.user)
    request = sign_request({
        "submission": submission.to_json(),
        "plan": {"workflow_id": "wf-proc",
                 "assignment": {"proc": "site:ns_a:Asite"}},
        "requester": str(bsite.id),
    }, bsite.endpoint_key)
    states = asite.server.execute_steps(request)
    assert states == {"proc": "failed:IllegalStep"}


def test_unauthorized_retrieval_denied(world):
    ex, a, b, asite, bsite = world
    add_rules(ex, ["MayAccess(asset:ns_a:D, site:ns_a:Asite)"])
    request = sign_request({"asset": "asset:ns_a:D",
                            "requester": str(bsite.id)}, bsite.endpoint_key)
    with pytest.raises(PermissionDenied):
        asite.server.retrieve_asset(request)


def test_forged_request_signature_rejected(world):
    ex, a, b, asite, bsite = world
    add_rules(ex, ["MayAccess(asset:ns_a:D, *)"])
    # Signed with the wrong site's key.
    request = sign_request({"asset": "asset:ns_a:D",
                            "requester": str(bsite.id)}, asite.endpoint_key)
    with pytest.raises(BadRequestSignature):
        asite.server.retrieve_asset(request)


def test_unknown_requester_rejected(world):
    ex, a, b, asite, bsite = world
    from fedexchange.crypto import PrivateKey

    request = sign_request({"asset": "asset:ns_a:D",
                            "requester": "site:ns_x:Ghost"},
                           PrivateKey.generate())
    with pytest.raises(BadRequestSignature):
        asite.server.retrieve_asset(request)


def test_stale_replica_refuses_decisions():
    now = [0.0]
    with Exchange("in-process", lifetime=10.0, clock=lambda: now[0]) as ex:
        a = ex.add_party("A", "ns_a")
        b = ex.add_party("B", "ns_b")
        asite = ex.add_site("Asite", a)
        bsite = ex.add_site("Bsite", b, auto_refresh=False)
        ex.store_asset(Asset(pid("asset:ns_a:D"), "data", TABLE))
        # Prime Bsite's replicas, then let them expire.
        bsite.server._refresh_replicas()
        assert bsite.server.snapshot() is not None
        now[0] = 11.0
        with pytest.raises(StaleReplica):
            bsite.server.snapshot()
        # With automatic refresh the same site recovers.
        bsite.server.config.auto_refresh = True
        assert bsite.server.snapshot() is not None


def test_stale_replica_fails_job_not_wrong_answer():
    now = [0.0]
    with Exchange("in-process", lifetime=10.0, clock=lambda: now[0]) as ex:
        a = ex.add_party("A", "ns_a")
        b = ex.add_party("B", "ns_b")
        ex.add_site("Asite", a)
        bsite = ex.add_site("Bsite", b)
        ex.store_asset(Asset(pid("asset:ns_a:D"), "data", TABLE))
        for rule in ["MayAccess(asset:ns_a:D, *)",
                     'MayUse(asset:ns_a:D, party:ns_b:B, "")']:
            ex.add_rule(rule)
        bsite.server._refresh_replicas()
        bsite.server.config.auto_refresh = False
        now[0] = 11.0
        wf = Workflow("wf-dl", {"data": pid("asset:ns_a:D")}, (),
                      {"result": "data"})
        with pytest.raises(RemoteError) as excinfo:
            ex.submit(b, wf)
        assert excinfo.value.code == "StaleReplica"


# --- idempotence ---------------------------------------------------------------


def test_execution_requests_are_idempotent(world):
    ex, a, b, asite, bsite = world
    add_rules(ex, PROCESSING_RULES)
    submission = sign_submission(proc_workflow(), b.id, b.user_public, b.user)
    request = sign_request({
        "submission": submission.to_json(),
        "plan": {"workflow_id": "wf-proc",
                 "assignment": {"proc": "site:ns_b:Bsite"}},
        "requester": str(bsite.id),
    }, bsite.endpoint_key)
    first = bsite.server.execute_steps(request)
    result_id = "result:ns_b:wf-proc.proc.y"
    payload = bsite.server._assets[result_id].asset.payload
    second = bsite.server.execute_steps(request)
    assert first == second == {"proc": "done"}
    assert bsite.server._assets[result_id].asset.payload == payload


def test_resubmitting_workflow_gives_fresh_job(world):
    ex, a, b, asite, bsite = world
    add_rules(ex, PROCESSING_RULES)
    first = ex.submit(b, proc_workflow())
    second = ex.submit(b, proc_workflow())
    assert first["id"] != second["id"]
    assert first["outputs"] == second["outputs"]


# --- rule lifecycle --------------------------------------------------------------


def test_deleted_rule_disappears_from_peer_snapshot(world):
    ex, a, b, asite, bsite = world
    signed = ex.add_rule("MayAccess(asset:ns_a:D, site:ns_b:Bsite)")
    from fedexchange.policy import has_access

    assert has_access(bsite.server.snapshot(), bsite.id, pid("asset:ns_a:D"))
    ex.delete_rule(signed)
    # Force the replicas to expire so the deletion is pulled.
    for replica in bsite.server._policy_replicas.values():
        replica.valid_until = float("-inf")
    assert not has_access(bsite.server.snapshot(), bsite.id, pid("asset:ns_a:D"))
