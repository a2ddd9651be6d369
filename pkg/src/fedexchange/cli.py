"""Command-line entry points.

``registry serve`` and ``site serve`` run the long-lived services from
config files; the ``client`` group wraps a site's internal REST API for
asset and rule management and workflow submission; ``scenario`` runs the
bundled multi-party scripts and reports pass or fail.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .crypto import PrivateKey
from .exchange import Exchange  # noqa: F401  (re-exported convenience)
from .http_api import HttpConnector, HttpRegistryClient, HttpSiteClient
from .identifiers import parse_identifier
from .registry import RegistryServer
from .rules import parse_rule, sign_rule, signed_rule_to_json
from .scenarios import (
    SCENARIO_NAMES,
    check_minimality,
    load_scenario,
    run_scenario,
)
from .site import RemoteError, SiteConfig, SiteServer
from .workflow import sign_submission, workflow_from_json


def _load_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text("utf-8"))
    except (OSError, ValueError) as exc:
        raise click.ClickException(f"cannot read {path}: {exc}")


def _load_key(path: str) -> PrivateKey:
    try:
        return PrivateKey.from_bytes(bytes.fromhex(Path(path).read_text().strip()))
    except (OSError, ValueError) as exc:
        raise click.ClickException(f"cannot read key {path}: {exc}")


def _emit(data: dict, output_format: str) -> None:
    if output_format == "json-style":
        click.echo(json.dumps(data, indent=2, sort_keys=True))
        return
    for key, value in data.items():
        click.echo(f"{key}: {value}")


def _client(endpoint: str) -> HttpSiteClient:
    return HttpSiteClient(endpoint)


def _run(endpoint: str, action):
    try:
        return action()
    except RemoteError as exc:
        raise click.ClickException(f"{endpoint}: {exc.code}: {exc}")
    except Exception as exc:
        raise click.ClickException(f"{endpoint}: {exc}")


format_option = click.option(
    "--output-format", type=click.Choice(["text", "json-style"]),
    default="text", show_default=True,
)


@click.group()
def main() -> None:
    """Federated data exchange services and clients."""


# --- services ----------------------------------------------------------------


@main.group()
def registry() -> None:
    """Central registry service."""


@registry.command("serve")
@click.option("--config", required=True, type=click.Path(exists=True))
def registry_serve(config: str) -> None:
    """Serve the registry described by a config file.

    Config keys: host, port, root_public_key (hex), lifetime (seconds).
    """
    import uvicorn

    from .http_api import registry_app

    cfg = _load_json(config)
    server = RegistryServer(
        bytes.fromhex(cfg["root_public_key"]),
        float(cfg.get("lifetime", 3600.0)),
    )
    uvicorn.run(registry_app(server),
                host=cfg.get("host", "127.0.0.1"), port=int(cfg["port"]))


@main.group()
def site() -> None:
    """Site service."""


@site.command("serve")
@click.option("--config", required=True, type=click.Path(exists=True))
def site_serve(config: str) -> None:
    """Serve the site described by a config file.

    Config keys: site_id, owner, admin, namespace, endpoint,
    registry_endpoint, endpoint_key (hex private key), host, port and
    optionally policy_lifetime and trusted_peers. The owning party and the
    site itself must already be registered.
    """
    import uvicorn

    from .http_api import site_app

    cfg = _load_json(config)
    site_config = SiteConfig(
        site_id=parse_identifier(cfg["site_id"]),
        owner=parse_identifier(cfg["owner"]),
        admin=parse_identifier(cfg.get("admin", cfg["owner"])),
        namespace=cfg["namespace"],
        endpoint=cfg["endpoint"],
        registry_endpoint=cfg["registry_endpoint"],
        policy_lifetime=float(cfg.get("policy_lifetime", 3600.0)),
        trusted_peers=(
            [parse_identifier(p) for p in cfg["trusted_peers"]]
            if cfg.get("trusted_peers") else None
        ),
    )
    server = SiteServer(
        site_config,
        PrivateKey.from_bytes(bytes.fromhex(cfg["endpoint_key"])),
        HttpRegistryClient(cfg["registry_endpoint"]),
        HttpConnector(),
    )
    uvicorn.run(site_app(server),
                host=cfg.get("host", "127.0.0.1"), port=int(cfg["port"]))


# --- client ------------------------------------------------------------------


@main.group()
def client() -> None:
    """Talk to a site's internal API."""


@client.command("add-asset")
@click.argument("asset_file", type=click.Path(exists=True))
@click.option("--endpoint", required=True)
@format_option
def add_asset(asset_file: str, endpoint: str, output_format: str) -> None:
    """Store the asset in ASSET_FILE (JSON) at the site."""
    payload = _load_json(asset_file)
    result = _run(endpoint, lambda: _client(endpoint).store_asset(payload))
    _emit(result, output_format)


@client.command("add-rule")
@click.argument("rule_text")
@click.option("--endpoint", required=True)
@click.option("--signer", required=True, help="Party identifier signing the rule.")
@click.option("--key", "key_file", required=True, type=click.Path(exists=True),
              help="Hex-encoded private main key of the signer.")
@format_option
def add_rule(rule_text: str, endpoint: str, signer: str, key_file: str,
             output_format: str) -> None:
    """Sign RULE_TEXT with the signer's main key and store it at the site."""
    rule = parse_rule(rule_text)
    signed = sign_rule(rule, parse_identifier(signer), _load_key(key_file))
    result = _run(endpoint,
                  lambda: _client(endpoint).add_rule(signed_rule_to_json(signed)))
    _emit(result, output_format)


@client.command("submit")
@click.argument("workflow_file", type=click.Path(exists=True))
@click.option("--endpoint", required=True)
@click.option("--party", required=True, help="Submitting party identifier.")
@click.option("--user-key", "user_key_file", required=True,
              type=click.Path(exists=True),
              help="Hex-encoded private pseudonym key of the submitting user.")
@format_option
def submit(workflow_file: str, endpoint: str, party: str, user_key_file: str,
           output_format: str) -> None:
    """Sign and submit the workflow in WORKFLOW_FILE; prints the job id."""
    workflow = workflow_from_json(_load_json(workflow_file))
    user_key = _load_key(user_key_file)
    submission = sign_submission(workflow, parse_identifier(party),
                                 user_key.public_bytes(), user_key)
    result = _run(endpoint,
                  lambda: _client(endpoint).submit_workflow(submission.to_json()))
    _emit(result, output_format)


@client.command("job-status")
@click.argument("job_id")
@click.option("--endpoint", required=True)
@format_option
def job_status(job_id: str, endpoint: str, output_format: str) -> None:
    """Print the status document of a job."""
    result = _run(endpoint, lambda: _client(endpoint).get_job(job_id))
    if output_format == "json-style":
        _emit(result, output_format)
        return
    for key in ("id", "state", "error"):
        click.echo(f"{key}: {result.get(key)}")
    if result.get("plan"):
        click.echo(f"plan: {result['plan']['assignment']}")
    for name in result.get("outputs") or {}:
        click.echo(f"output {name}: {result['outputs'][name]} (base64)")


# --- scenarios ---------------------------------------------------------------


@main.group()
def scenario() -> None:
    """Bundled multi-party scenario scripts."""


@scenario.command("list")
def scenario_list() -> None:
    for name in SCENARIO_NAMES:
        click.echo(name)


@scenario.command("run")
@click.argument("name", type=click.Choice(SCENARIO_NAMES))
@click.option("--mode", type=click.Choice(["in-process", "network"]),
              default="in-process", show_default=True)
@click.option("--check-minimality", "check_minimality_flag", is_flag=True,
              help="Also re-run once per rule with that rule withheld.")
@format_option
def scenario_run(name: str, mode: str, check_minimality_flag: bool,
                 output_format: str) -> None:
    """Run one scenario and report pass or fail."""
    script = load_scenario(name)
    outcome = run_scenario(script, mode=mode)
    results = [outcome]
    if check_minimality_flag:
        for rule, degraded in check_minimality(script, mode=mode):
            degraded.name = f"{name} without {rule}"
            results.append(degraded)
    if output_format == "json-style":
        click.echo(json.dumps([
            {"name": r.name, "passed": r.passed, "messages": r.messages}
            for r in results
        ], indent=2))
    else:
        for result in results:
            click.echo(result.report())
    if not all(r.passed for r in results):
        sys.exit(1)


if __name__ == "__main__":
    main()
