"""Builder for a whole exchange: registry, parties, sites, keys.

Supports two modes with identical behaviour: ``in-process`` wires sites
together through JSON-round-tripping local clients, ``network`` serves
every site and the registry over HTTP on localhost and talks to them with
real HTTP clients.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

from . import crypto, transport
from .assets import Asset, asset_to_json
from .crypto import PrivateKey, certify
from .identifiers import Identifier, Kind, parse_identifier
from .registry import (
    PartyRecord,
    RegistryServer,
    SiteRecord,
    make_party_record,
    make_site_record,
)
from .replication import Clock
from .rules import Rule, SignedRule, parse_rule, sign_rule, signed_rule_to_json, subject
from .site import SiteConfig, SiteServer
from .workflow import SignedSubmission, Workflow, sign_submission


@dataclass
class PartyHandle:
    id: Identifier
    namespace: str
    main: PrivateKey
    user_ca: PrivateKey
    user: PrivateKey
    record: PartyRecord

    @property
    def user_public(self) -> bytes:
        return self.user.public_bytes()


@dataclass
class SiteHandle:
    id: Identifier
    server: SiteServer
    record: SiteRecord
    endpoint_key: PrivateKey
    served: object = None  # ServedApp in network mode


class Exchange:
    def __init__(self, mode: str = "in-process", lifetime: float = 3600.0,
                 clock: Clock = time.time):
        if mode not in ("in-process", "network"):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.lifetime = lifetime
        self.clock = clock
        self.root = PrivateKey.generate()
        self.root_id = Identifier(Kind.PARTY, "exchange.root", "root")
        self.registry = RegistryServer(self.root.public_bytes(), lifetime, clock)
        self.parties: dict[str, PartyHandle] = {}
        self.sites: dict[str, SiteHandle] = {}
        self._served: list = []
        if mode == "network":
            from .http_api import HttpConnector, HttpRegistryClient, ServedApp, registry_app

            self._registry_served = ServedApp(registry_app(self.registry)).start()
            self._served.append(self._registry_served)
            self.registry_endpoint = self._registry_served.base_url
            self._registry_client = HttpRegistryClient(self.registry_endpoint)
            self.connector = HttpConnector()
        else:
            self.registry_endpoint = "local://registry"
            self._registry_client = transport.LocalRegistryClient(self.registry)
            self.connector = transport.LocalConnector()

    def close(self) -> None:
        for served in self._served:
            served.stop()

    def __enter__(self) -> "Exchange":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # --- setup --------------------------------------------------------------

    def add_party(self, name: str, namespace: str) -> PartyHandle:
        party_id = Identifier(Kind.PARTY, namespace, name)
        main = PrivateKey.generate()
        user_ca = PrivateKey.generate()
        user = PrivateKey.generate()
        main_record = certify(party_id, crypto.ROLE_PARTY_MAIN, main.public_bytes(),
                              self.root_id, self.root)
        ca_record = certify(party_id, crypto.ROLE_PARTY_USER_CA,
                            user_ca.public_bytes(), self.root_id, self.root)
        user_record = certify(party_id, crypto.ROLE_USER_PSEUDONYM,
                              user.public_bytes(), party_id, user_ca)
        record = make_party_record(party_id, namespace, main_record, ca_record,
                                   (user_record,), main)
        self._registry_client.register(record)
        handle = PartyHandle(party_id, namespace, main, user_ca, user, record)
        self.parties[str(party_id)] = handle
        return handle

    def add_site(self, name: str, owner: PartyHandle,
                 admin: Optional[PartyHandle] = None,
                 trusted_peers: Optional[list[Identifier]] = None,
                 auto_refresh: bool = True) -> SiteHandle:
        site_id = Identifier(Kind.SITE, owner.namespace, name)
        endpoint_key = PrivateKey.generate()
        if self.mode == "network":
            from .http_api import ServedApp, free_port, site_app

            port = free_port()
            endpoint = f"http://127.0.0.1:{port}"
        else:
            endpoint = f"local://{site_id}"
        admin = admin or owner
        key_record = certify(site_id, crypto.ROLE_SITE_ENDPOINT,
                             endpoint_key.public_bytes(), owner.id, owner.main)
        record = make_site_record(site_id, owner.id, admin.id, endpoint,
                                  key_record, owner.main)
        self._registry_client.register(record)
        config = SiteConfig(
            site_id=site_id, owner=owner.id, admin=admin.id,
            namespace=owner.namespace, endpoint=endpoint,
            registry_endpoint=self.registry_endpoint,
            policy_lifetime=self.lifetime, trusted_peers=trusted_peers,
            auto_refresh=auto_refresh,
        )
        if self.mode == "network":
            from .http_api import HttpRegistryClient

            server = SiteServer(config, endpoint_key,
                                HttpRegistryClient(self.registry_endpoint),
                                self.connector, clock=self.clock)
            served = ServedApp(site_app(server), port=port).start()
            self._served.append(served)
        else:
            server = SiteServer(config, endpoint_key,
                                transport.LocalRegistryClient(self.registry),
                                self.connector, clock=self.clock)
            self.connector.register(server)
            served = None
        handle = SiteHandle(site_id, server, record, endpoint_key, served)
        self.sites[str(site_id)] = handle
        return handle

    # --- lookups ------------------------------------------------------------

    def party_by_namespace(self, namespace: str) -> PartyHandle:
        for party in self.parties.values():
            if party.namespace == namespace:
                return party
        raise KeyError(namespace)

    def site_of_party(self, party: PartyHandle) -> SiteHandle:
        for site in sorted(self.sites.values(), key=lambda s: str(s.id)):
            if site.record.owner == party.id:
                return site
        raise KeyError(str(party.id))

    def _internal_client(self, site: SiteHandle):
        if self.mode == "network":
            from .http_api import HttpSiteClient

            return HttpSiteClient(site.record.endpoint)
        return _LocalInternalClient(site.server)

    # --- operations ---------------------------------------------------------

    def sign_rule_text(self, text: str) -> SignedRule:
        """Parse and sign a rule with its subject's namespace owner key."""
        rule = parse_rule(text) if isinstance(text, str) else text
        owner = self.party_by_namespace(subject(rule).namespace)
        return sign_rule(rule, owner.id, owner.main)

    def add_rule(self, text: str | Rule) -> SignedRule:
        """Sign a rule and store it at its owner's site policy store."""
        signed = self.sign_rule_text(text)  # type: ignore[arg-type]
        owner = self.party_by_namespace(subject(signed.rule).namespace)
        site = self.site_of_party(owner)
        self._internal_client(site).add_rule(signed_rule_to_json(signed))
        return signed

    def delete_rule(self, signed: SignedRule) -> None:
        owner = self.party_by_namespace(subject(signed.rule).namespace)
        site = self.site_of_party(owner)
        self._internal_client(site).delete_rule(signed.hash)

    def store_asset(self, asset: Asset, site: Optional[SiteHandle] = None) -> None:
        """Store an asset at its owning party's site (or an explicit one)."""
        if site is None:
            owner = self.party_by_namespace(asset.id.namespace)
            site = self.site_of_party(owner)
        self._internal_client(site).store_asset(asset_to_json(asset))

    def submit(self, party: PartyHandle, workflow: Workflow,
               site: Optional[SiteHandle] = None) -> dict:
        """Sign, submit and wait; returns the job status document."""
        site = site or self.site_of_party(party)
        submission = sign_submission(workflow, party.id, party.user_public, party.user)
        client = self._internal_client(site)
        job_id = client.submit_workflow(submission.to_json())["job_id"]
        deadline = time.time() + 60.0
        while True:
            status = client.get_job(job_id)
            if status["state"] != "running":
                return status
            if time.time() > deadline:
                raise TimeoutError(f"job {job_id} still running")
            time.sleep(0.05)

    def submit_raw(self, submission: SignedSubmission,
                   site: SiteHandle) -> dict:
        client = self._internal_client(site)
        job_id = client.submit_workflow(submission.to_json())["job_id"]
        return client.get_job(job_id)


class _LocalInternalClient:
    """In-process counterpart of the internal HTTP API."""

    def __init__(self, server: SiteServer):
        self._server = server

    def store_asset(self, asset_json: dict) -> dict:
        return transport._call(transport.handle_store_asset, self._server, asset_json)

    def add_rule(self, rule_json: dict) -> dict:
        return transport._call(transport.handle_add_rule, self._server, rule_json)

    def delete_rule(self, rule_hash: str) -> dict:
        return transport._call(transport.handle_delete_rule, self._server, rule_hash)

    def submit_workflow(self, submission_json: dict) -> dict:
        return transport._call(transport.handle_submit_workflow, self._server,
                               submission_json)

    def get_job(self, job_id: str) -> dict:
        return transport._call(transport.handle_get_job, self._server, job_id)
