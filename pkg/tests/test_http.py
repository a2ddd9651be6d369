"""Networked mode: the same behaviour over real HTTP on localhost."""

import base64

import httpx
import pytest

from fedexchange.assets import Asset, compute_asset
from fedexchange.exchange import Exchange
from fedexchange.identifiers import parse_identifier as pid
from fedexchange.site import RemoteError, sign_request
from fedexchange.workflow import Step, Workflow

TABLE = b"x,y\n1.0,2.0\n3.0,4.0\n"

RULES = [
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


@pytest.fixture(scope="module")
def network():
    with Exchange("network") as ex:
        a = ex.add_party("A", "ns_a")
        b = ex.add_party("B", "ns_b")
        asite = ex.add_site("Asite", a)
        bsite = ex.add_site("Bsite", b)
        ex.store_asset(Asset(pid("asset:ns_a:D"), "data", TABLE))
        ex.store_asset(compute_asset(pid("asset:ns_b:Bproc"), "aggregate-mean"))
        for rule in RULES:
            ex.add_rule(rule)
        yield ex, a, b, asite, bsite


def proc_workflow(wfid="wf-proc"):
    return Workflow(
        id=wfid, inputs={"data": pid("asset:ns_a:D")},
        steps=(Step("proc", pid("asset:ns_b:Bproc"), {"table": "data"}, ("y",)),),
        outputs={"result": "proc.y"},
    )


def test_job_over_http(network):
    ex, a, b, asite, bsite = network
    status = ex.submit(b, proc_workflow())
    assert status["state"] == "done", status["error"]
    assert status["plan"]["assignment"] == {"proc": "site:ns_b:Bsite"}
    assert base64.b64decode(status["outputs"]["result"]) == b"x,y\n2.0,3.0\n"


def test_policy_replication_over_http(network):
    ex, a, b, asite, bsite = network
    from fedexchange.policy import has_access

    rel = bsite.server.snapshot()
    assert has_access(rel, bsite.id, pid("asset:ns_a:D"))


def test_signed_retrieval_over_http(network):
    ex, a, b, asite, bsite = network
    client = ex.connector.site_client(asite.record.endpoint)
    request = sign_request({"asset": "asset:ns_a:D",
                            "requester": str(bsite.id)}, bsite.endpoint_key)
    response = client.retrieve_asset(request)
    assert base64.b64decode(response["asset"]["payload"]) == TABLE


def test_denied_retrieval_maps_to_403(network):
    ex, a, b, asite, bsite = network
    request = sign_request({"asset": "asset:ns_b:Bproc",
                            "requester": str(asite.id)}, asite.endpoint_key)
    # Asite has no grant for B's software.
    response = httpx.post(bsite.record.endpoint + "/assets/retrieve",
                          json=request)
    assert response.status_code == 403
    assert response.json()["error"] == "PermissionDenied"


def test_bad_signature_maps_to_401(network):
    ex, a, b, asite, bsite = network
    request = sign_request({"asset": "asset:ns_a:D",
                            "requester": str(bsite.id)}, asite.endpoint_key)
    response = httpx.post(asite.record.endpoint + "/assets/retrieve",
                          json=request)
    assert response.status_code == 401
    assert response.json()["error"] == "BadRequestSignature"


def test_unknown_job_maps_to_404(network):
    ex, a, b, asite, bsite = network
    response = httpx.get(bsite.record.endpoint + "/internal/jobs/job-999")
    assert response.status_code == 404


def test_typed_error_surfaces_through_client(network):
    ex, a, b, asite, bsite = network
    client = ex._internal_client(bsite)
    with pytest.raises(RemoteError) as excinfo:
        client.get_job("job-999")
    assert excinfo.value.code == "NotFound"


def test_http_matches_in_process_results(network):
    ex, a, b, asite, bsite = network
    over_http = ex.submit(b, proc_workflow("wf-compare"))
    with Exchange("in-process") as local:
        la = local.add_party("A", "ns_a")
        lb = local.add_party("B", "ns_b")
        local.add_site("Asite", la)
        local.add_site("Bsite", lb)
        local.store_asset(Asset(pid("asset:ns_a:D"), "data", TABLE))
        local.store_asset(compute_asset(pid("asset:ns_b:Bproc"), "aggregate-mean"))
        for rule in RULES:
            local.add_rule(rule)
        in_process = local.submit(lb, proc_workflow("wf-compare"))
    assert over_http["plan"] == in_process["plan"]
    assert over_http["outputs"] == in_process["outputs"]
