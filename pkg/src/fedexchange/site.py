"""A party's site: asset store, policy store, step runner and orchestrator.

All external traffic carries site-endpoint-key signatures verified against
the registry replica, and no asset bytes cross the external surface
without a passing policy decision against a fresh replica snapshot.
Executing sites re-derive step legality locally; the orchestrator's plan
is never trusted.
"""

from __future__ import annotations

import itertools
import json
import time
import threading
from dataclasses import dataclass, field
from typing import Mapping, Optional, Protocol

from . import crypto
from .assets import Asset, BehaviorRegistry, MissingComputeBehavior, asset_from_json, \
    asset_to_json, compute_spec
from .behaviors import builtin_behaviors
from .identifiers import Identifier, Kind, parse_identifier
from .planner import NoValidPlan, plan_workflow, result_permissions, site_may_run_step
from .policy import (
    PermissionsObject,
    Relations,
    RuleSet,
    has_access,
    has_access_result,
    may_use,
    may_use_result,
)
from .registry import RegistryRecord, RegistryReplica, SiteRecord
from .replication import CanonicalStore, Clock, Replica, ReplicaUpdate, StaleReplica
from .rules import SignedRule, signed_rule_from_json, signed_rule_to_json, verify_rule
from .workflow import (
    BadSubmissionSignature,
    Plan,
    SignedSubmission,
    Workflow,
    _ref_step,
    result_identifier,
    topological_steps,
    validate_workflow,
    verify_submission,
)


class PermissionDenied(PermissionError):
    pass


class NotFound(KeyError):
    pass


class IllegalStep(ValueError):
    pass


class UpstreamDenied(PermissionError):
    pass


class UsageDenied(PermissionError):
    pass


class ExecutionFailed(RuntimeError):
    pass


class BadRequestSignature(ValueError):
    pass


class RemoteError(RuntimeError):
    """Typed failure reported by a peer site over the wire."""

    def __init__(self, code: str, message: str = ""):
        self.code = code
        super().__init__(f"{code}: {message}" if message else code)


class SiteClient(Protocol):
    """Client view of another site's external API."""

    def policy_updates(self, from_version: int) -> ReplicaUpdate[SignedRule]: ...

    def retrieve_asset(self, request: dict) -> dict: ...

    def submit_job(self, request: dict) -> dict: ...


class RegistryClient(Protocol):
    def get_updates(self, from_version: int) -> ReplicaUpdate[RegistryRecord]: ...


class Connector(Protocol):
    """Resolves a registered endpoint URL to a site client."""

    def site_client(self, endpoint: str) -> SiteClient: ...


@dataclass
class SiteConfig:
    site_id: Identifier
    owner: Identifier
    admin: Identifier
    namespace: str
    endpoint: str
    registry_endpoint: str = ""
    policy_lifetime: float = 3600.0
    trusted_peers: Optional[list[Identifier]] = None  # None: all registered sites
    auto_refresh: bool = True
    synchronous_jobs: bool = True


def permissions_to_json(perms: Optional[PermissionsObject]) -> Optional[list[list[str]]]:
    if perms is None:
        return None
    return sorted(sorted(str(i) for i in inner) for inner in perms)


def permissions_from_json(data: Optional[list[list[str]]]) -> Optional[PermissionsObject]:
    if data is None:
        return None
    return frozenset(frozenset(parse_identifier(i) for i in inner) for inner in data)


def _signed_payload(request: Mapping[str, object]) -> bytes:
    body = {k: v for k, v in request.items() if k != "signature"}
    return json.dumps(body, sort_keys=True, separators=(",", ":")).encode()


def sign_request(request: dict, key: crypto.PrivateKey) -> dict:
    signed = dict(request)
    signed["signature"] = key.sign(_signed_payload(request)).hex()
    return signed


@dataclass
class StoredAsset:
    asset: Asset
    permissions: Optional[PermissionsObject]  # None for primary assets


@dataclass
class Job:
    id: str
    submission: SignedSubmission
    state: str = "running"  # running | done | failed
    error: Optional[str] = None
    plan: Optional[Plan] = None
    outputs: dict[str, bytes] = field(default_factory=dict)
    conditions: dict[str, list[str]] = field(default_factory=dict)

    def status_json(self) -> dict:
        import base64

        return {
            "id": self.id,
            "state": self.state,
            "error": self.error,
            "plan": self.plan.to_json() if self.plan else None,
            "outputs": {k: base64.b64encode(v).decode() for k, v in self.outputs.items()},
            "conditions": {k: list(v) for k, v in self.conditions.items()},
        }


@dataclass
class ExecJob:
    """Steps of one execution request assigned to this site."""

    submission: SignedSubmission
    plan: Plan
    steps: dict[str, str]  # step name -> pending | done | failed:<reason>


class SiteServer:
    """One party's site service."""

    def __init__(self, config: SiteConfig, endpoint_key: crypto.PrivateKey,
                 registry_client: RegistryClient, connector: Connector,
                 behaviors: Optional[BehaviorRegistry] = None,
                 clock: Clock = time.time):
        self.config = config
        self.id = config.site_id
        self._endpoint_key = endpoint_key
        self._connector = connector
        self._clock = clock
        self.behaviors = behaviors or builtin_behaviors()
        self.registry_replica = RegistryReplica(registry_client.get_updates, clock)
        self._policy_store: CanonicalStore[SignedRule] = CanonicalStore(
            lambda r: r.hash, config.policy_lifetime, clock
        )
        self._policy_replicas: dict[str, Replica[SignedRule]] = {}
        self._assets: dict[str, StoredAsset] = {}
        self._jobs: dict[str, Job] = {}
        self._exec_jobs: dict[str, ExecJob] = {}
        self._job_counter = itertools.count(1)
        self._lock = threading.RLock()

    # --- policy snapshot ---------------------------------------------------

    def _refresh_replicas(self) -> None:
        self.registry_replica.ensure_fresh()
        for record in self.registry_replica.sites():
            if record.id == self.id:
                continue
            if (self.config.trusted_peers is not None
                    and record.id not in self.config.trusted_peers):
                continue
            replica = self._policy_replicas.get(str(record.id))
            if replica is None:
                client = self._connector.site_client(record.endpoint)
                replica = Replica(lambda r: r.hash, client.policy_updates, self._clock)
                self._policy_replicas[str(record.id)] = replica
            replica.ensure_fresh()

    def snapshot(self) -> Relations:
        """Verified-rule relations over fresh local and replicated stores.

        Raises StaleReplica if any replica is expired and auto refresh is
        disabled: no decision is made on stale policies.
        """
        if self.config.auto_refresh:
            self._refresh_replicas()
        signed: list[SignedRule] = list(self._policy_store.visible().values())
        for replica in self._policy_replicas.values():
            signed.extend(replica.objects().values())
        rules = RuleSet.from_signed(signed, self.registry_replica)
        return rules.relations()

    # --- internal API ------------------------------------------------------

    def store_asset(self, asset: Asset,
                    permissions: Optional[PermissionsObject] = None) -> None:
        with self._lock:
            self._assets[str(asset.id)] = StoredAsset(asset, permissions)

    def add_rule(self, signed: SignedRule) -> int:
        """Admit a locally set rule; rejects rules failing verification."""
        if self.config.auto_refresh:
            self.registry_replica.ensure_fresh()
        verify_rule(signed, self.registry_replica)  # raises on bad rules
        return self._policy_store.insert(signed)

    def delete_rule(self, rule_hash: str) -> int:
        return self._policy_store.delete(rule_hash)

    def local_rules(self) -> list[SignedRule]:
        return list(self._policy_store.visible().values())

    def submit_workflow(self, submission: SignedSubmission) -> str:
        if self.config.auto_refresh:
            self.registry_replica.ensure_fresh()
        party = self.registry_replica.party(submission.party)
        if party is None:
            raise BadSubmissionSignature(f"unknown party {submission.party}")
        verify_submission(submission, party)  # raises before planning
        with self._lock:
            job = Job(f"job-{next(self._job_counter)}", submission)
            self._jobs[job.id] = job
        if self.config.synchronous_jobs:
            self._run_job(job)
        else:
            threading.Thread(target=self._run_job, args=(job,), daemon=True).start()
        return job.id

    def get_job(self, job_id: str) -> Job:
        job = self._jobs.get(job_id)
        if job is None:
            raise NotFound(job_id)
        return job

    # --- external API ------------------------------------------------------

    def policy_updates(self, from_version: int) -> ReplicaUpdate[SignedRule]:
        return self._policy_store.get_updates(from_version)

    def _verify_peer_request(self, request: Mapping[str, object]) -> SiteRecord:
        if self.config.auto_refresh:
            self.registry_replica.ensure_fresh()
        requester = parse_identifier(str(request["requester"]))
        record = self.registry_replica.site(requester)
        if record is None:
            raise BadRequestSignature(f"unknown site {requester}")
        signature = bytes.fromhex(str(request.get("signature", "")))
        if not crypto.verify(record.endpoint_key.public, signature,
                             _signed_payload(request)):
            raise BadRequestSignature(f"bad request signature from {requester}")
        return record

    def retrieve_asset(self, request: Mapping[str, object]) -> tuple[Asset, Optional[PermissionsObject]]:
        """Serve an asset to a peer site after a full policy decision."""
        record = self._verify_peer_request(request)
        asset_id = parse_identifier(str(request["asset"]))
        rel = self.snapshot()
        stored = self._assets.get(str(asset_id))
        if stored is None:
            raise NotFound(str(asset_id))
        if stored.permissions is not None:
            allowed = (has_access_result(rel, record.id, stored.permissions)
                       and has_access_result(rel, self.id, stored.permissions))
        else:
            allowed = (has_access(rel, record.id, asset_id)
                       and has_access(rel, self.id, asset_id))
        if not allowed:
            raise PermissionDenied(f"{record.id} may not retrieve {asset_id}")
        return stored.asset, stored.permissions

    def execute_steps(self, request: Mapping[str, object]) -> dict[str, str]:
        """Accept an execution request; returns the per-step states.

        Idempotent: re-delivery of the same request progresses the same
        job and never duplicates stored results.
        """
        self._verify_peer_request(request)
        submission = SignedSubmission.from_json(request["submission"])  # type: ignore[arg-type]
        plan = Plan.from_json(request["plan"])  # type: ignore[arg-type]
        party = self.registry_replica.party(submission.party)
        if party is None:
            raise BadSubmissionSignature(f"unknown party {submission.party}")
        verify_submission(submission, party)
        workflow = submission.workflow
        if validate_workflow(workflow):
            raise ExecutionFailed("invalid workflow")
        key = submission.signature.hex() + json.dumps(plan.to_json(), sort_keys=True)
        with self._lock:
            job = self._exec_jobs.get(key)
            if job is None:
                mine = {
                    name: "pending" for name, site in plan.assignment.items()
                    if site == self.id
                }
                job = ExecJob(submission, plan, mine)
                self._exec_jobs[key] = job
        self._progress_exec_job(job, party.namespace)
        return dict(job.steps)

    # --- step execution ----------------------------------------------------

    def _home_site(self, asset_id: Identifier) -> SiteRecord:
        """Site storing a primary asset: the owning party's first site."""
        party = self.registry_replica.party_by_namespace(asset_id.namespace)
        if party is None:
            raise NotFound(f"no party owns namespace {asset_id.namespace}")
        for record in self.registry_replica.sites():
            if record.owner == party.id:
                return record
        raise NotFound(f"no site registered for {party.id}")

    def _fetch_asset(self, asset_id: Identifier, source: SiteRecord
                     ) -> tuple[Asset, Optional[PermissionsObject]]:
        """Pull an asset from a peer site (or the local store for self)."""
        if source.id == self.id:
            stored = self._assets.get(str(asset_id))
            if stored is None:
                raise NotFound(str(asset_id))
            return stored.asset, stored.permissions
        cached = self._assets.get(str(asset_id))
        if cached is not None:
            return cached.asset, cached.permissions
        client = self._connector.site_client(source.endpoint)
        request = sign_request(
            {"asset": str(asset_id), "requester": str(self.id)}, self._endpoint_key
        )
        response = client.retrieve_asset(request)
        asset = asset_from_json(response["asset"])
        perms = permissions_from_json(response.get("permissions"))
        self.store_asset(asset, perms)
        return asset, perms

    def _resolve_source(self, ref: str, workflow: Workflow, plan: Plan,
                        submitter_ns: str) -> tuple[Identifier, SiteRecord]:
        """Asset id and holding site for a step-input/output reference."""
        producer_step = _ref_step(ref)
        if producer_step is None:
            asset_id = workflow.inputs[ref]
            return asset_id, self._home_site(asset_id)
        output = ref.split(".", 1)[1]
        asset_id = result_identifier(submitter_ns, workflow.id, producer_step, output)
        site_id = plan.assignment[producer_step]
        record = self.registry_replica.site(site_id)
        if record is None:
            raise NotFound(str(site_id))
        return asset_id, record

    def _progress_exec_job(self, job: ExecJob, submitter_ns: str) -> None:
        workflow = job.submission.workflow
        rel = self.snapshot()
        perms = result_permissions(workflow, rel)
        # Local re-verification: never trust the plan's legality claims.
        for step in workflow.steps:
            if step.name in job.steps and job.steps[step.name] == "pending":
                if not site_may_run_step(rel, self.id, step, perms):
                    job.steps[step.name] = "failed:IllegalStep"
        progressed = True
        while progressed:
            progressed = False
            for step in topological_steps(workflow):
                if job.steps.get(step.name) != "pending":
                    continue
                inputs: dict[str, bytes] = {}
                ready = True
                failure = None
                for input_name, ref in step.inputs.items():
                    asset_id, source = self._resolve_source(
                        ref, workflow, job.plan, submitter_ns)
                    try:
                        asset, _ = self._fetch_asset(asset_id, source)
                    except (NotFound, RemoteError) as exc:
                        if isinstance(exc, RemoteError) and exc.code != "NotFound":
                            failure = f"failed:UpstreamDenied:{input_name}"
                        ready = False  # producer not done yet, try next round
                        break
                    except PermissionDenied:
                        failure = f"failed:UpstreamDenied:{input_name}"
                        ready = False
                        break
                    inputs[input_name] = asset.payload
                if failure is not None:
                    job.steps[step.name] = failure
                    continue
                if not ready:
                    continue
                try:
                    compute, _ = self._fetch_asset(
                        step.compute_asset, self._home_site(step.compute_asset))
                except (NotFound, RemoteError, PermissionDenied):
                    job.steps[step.name] = "failed:UpstreamDenied:compute"
                    continue
                try:
                    behavior, parameters = compute_spec(compute)
                    outputs = self.behaviors.run(
                        behavior, inputs, parameters, step.outputs)
                except MissingComputeBehavior as exc:
                    job.steps[step.name] = f"failed:MissingComputeBehavior:{exc}"
                    continue
                for output in step.outputs:
                    rid = result_identifier(
                        submitter_ns, workflow.id, step.name, output)
                    if str(rid) not in self._assets:  # idempotent by result id
                        self.store_asset(
                            Asset(rid, "data", outputs[output]),
                            perms[f"{step.name}.{output}"],
                        )
                job.steps[step.name] = "done"
                progressed = True

    # --- orchestration -----------------------------------------------------

    def _run_job(self, job: Job) -> None:
        try:
            self._orchestrate(job)
        except NoValidPlan as exc:
            diagnosis = {
                step: sorted(str(s) for s in sites)
                for step, sites in exc.permitted.items()
            }
            job.state = "failed"
            job.error = f"NoValidPlan: {exc} permitted={json.dumps(diagnosis)}"
        except UsageDenied as exc:
            job.state = "failed"
            job.error = f"UsageDenied: {exc}"
        except ExecutionFailed as exc:
            job.state = "failed"
            job.error = f"ExecutionFailed: {exc}"
        except StaleReplica as exc:
            job.state = "failed"
            job.error = f"StaleReplica: {exc}"
        except (PermissionDenied, RemoteError, NotFound) as exc:
            job.state = "failed"
            job.error = f"ExecutionFailed: {exc}"

    def _orchestrate(self, job: Job) -> None:
        workflow = job.submission.workflow
        errors = validate_workflow(workflow)
        if errors:
            raise ExecutionFailed(
                "invalid workflow: " + "; ".join(e.message for e in errors))
        rel = self.snapshot()
        party = self.registry_replica.party(job.submission.party)
        assert party is not None  # checked at submission
        sites = [record.id for record in self.registry_replica.sites()]
        input_sites = {}
        for name, asset_id in workflow.inputs.items():
            try:
                input_sites[name] = self._home_site(asset_id).id
            except NotFound:
                pass  # unknown home only affects the cost ordering
        plans = plan_workflow(workflow, rel, sites, input_sites)
        plan = plans[0]
        job.plan = plan
        if workflow.steps:
            self._dispatch(job, plan)
        self._collect_outputs(job, rel, party.namespace)
        job.state = "done"

    def _dispatch(self, job: Job, plan: Plan) -> None:
        request = sign_request(
            {
                "submission": job.submission.to_json(),
                "plan": plan.to_json(),
                "requester": str(self.id),
            },
            self._endpoint_key,
        )
        involved = sorted({str(site) for site in plan.assignment.values()})
        clients = {}
        for site_text in involved:
            site_id = parse_identifier(site_text)
            if site_id == self.id:
                clients[site_text] = None  # handled locally
            else:
                record = self.registry_replica.site(site_id)
                if record is None:
                    raise ExecutionFailed(f"unknown executing site {site_text}")
                clients[site_text] = self._connector.site_client(record.endpoint)
        states: dict[str, str] = {}
        for _ in range(len(job.submission.workflow.steps) + 2):
            before = dict(states)
            for site_text in involved:
                client = clients[site_text]
                if client is None:
                    result = self.execute_steps(request)
                else:
                    result = client.submit_job(request)["steps"]
                states.update(result)
            failures = {s: v for s, v in states.items() if v.startswith("failed")}
            if failures:
                detail = "; ".join(f"{s}: {v}" for s, v in sorted(failures.items()))
                raise ExecutionFailed(detail)
            if all(v == "done" for v in states.values()) and len(states) == len(
                    job.submission.workflow.steps):
                return
            if states == before:
                raise ExecutionFailed(f"no progress; step states: {states}")
        raise ExecutionFailed(f"did not converge; step states: {states}")

    def _collect_outputs(self, job: Job, rel: Relations, submitter_ns: str) -> None:
        workflow = job.submission.workflow
        party = job.submission.party
        for name, ref in workflow.outputs.items():
            asset_id, source = self._resolve_source(
                ref, workflow, job.plan or Plan(workflow.id, {}), submitter_ns)
            try:
                asset, perms = self._fetch_asset(asset_id, source)
            except RemoteError as exc:
                if exc.code == "PermissionDenied":
                    raise PermissionDenied(f"cannot obtain output {name!r}: {exc}")
                raise
            # Delivery gate: usage permission for the submitting party.
            if perms is not None:
                conditions = may_use_result(rel, party, perms)
            else:
                conditions = may_use(rel, party, asset_id)
            if conditions is None:
                raise UsageDenied(f"{party} may not use output {name!r} ({asset_id})")
            job.outputs[name] = asset.payload
            job.conditions[name] = sorted(conditions)
