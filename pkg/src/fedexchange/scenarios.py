"""Scripted multi-party scenarios and a runner that checks their outcomes.

A scenario script is a JSON document describing parties, sites, assets,
policy rules, a workflow (or a workflow template expanded by the runner)
and the expected outcome. The bundled scripts cover the archetypal
collaboration styles: plain download, processing at the user's site,
compute-to-data, software-as-a-service, a trusted third party, and
federated learning.

The runner builds a fresh exchange, replays the script, and compares the
distributed result bit for bit against a centralised execution of the same
workflow on the same payloads. ``check_minimality`` additionally re-runs a
scenario once per permission rule with that rule withheld and demands that
every such run fails, which shows that no rule in the script is redundant.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterator, Optional

from .assets import Asset, compute_asset
from .behaviors import builtin_behaviors, params_blob
from .exchange import Exchange
from .identifiers import parse_identifier
from .site import RemoteError
from .workflow import Step, Workflow, topological_steps, workflow_from_json

SCENARIO_NAMES = (
    "download",
    "local-processing",
    "compute-to-data",
    "saas",
    "trusted-third-party",
    "federated-learning",
)


def load_scenario(name: str) -> dict:
    text = resources.files(__package__).joinpath(
        "scripts", f"{name}.json").read_text("utf-8")
    return json.loads(text)


def load_all() -> list[dict]:
    return [load_scenario(name) for name in SCENARIO_NAMES]


# --- workflow construction ---------------------------------------------------


def federated_averaging_workflow(template: dict) -> Workflow:
    """Expand a federated-averaging template into an explicit workflow.

    Each iteration trains one step per dataset on the current shared
    parameters, then averages the per-dataset models. The iteration count
    comes from the template, so scripts can scale the same scenario up.
    """
    iterations = int(template.get("iterations", 2))
    if iterations < 1:
        raise ValueError("iterations must be at least 1")
    datasets = {key: str(ref) for key, ref in template["datasets"].items()}
    inputs = {"params_0": parse_identifier(template["initial_params"])}
    for key, ref in datasets.items():
        inputs[f"data_{key}"] = parse_identifier(ref)
    train = parse_identifier(template["train"])
    merge = parse_identifier(template["merge"])
    steps: list[Step] = []
    params_ref = "params_0"
    for i in range(1, iterations + 1):
        merge_inputs = {}
        for key in sorted(datasets):
            steps.append(Step(
                name=f"train_{key}_{i}",
                compute_asset=train,
                inputs={"params": params_ref, "data": f"data_{key}"},
                outputs=("out",),
            ))
            merge_inputs[f"model_{key}"] = f"train_{key}_{i}.out"
        steps.append(Step(
            name=f"merge_{i}", compute_asset=merge,
            inputs=merge_inputs, outputs=("out",),
        ))
        params_ref = f"merge_{i}.out"
    return Workflow(
        id=str(template.get("id", "wf-fedavg")),
        inputs=inputs, steps=tuple(steps),
        outputs={"model": params_ref},
    )


def build_workflow(script: dict) -> Workflow:
    if "workflow" in script:
        return workflow_from_json(script["workflow"])
    template = script["workflow_template"]
    if template["type"] == "federated-averaging":
        return federated_averaging_workflow(template)
    raise ValueError(f"unknown workflow template type {template['type']!r}")


def build_asset(entry: dict) -> Asset:
    asset_id = parse_identifier(entry["id"])
    if entry["kind"] == "compute":
        return compute_asset(asset_id, entry["behavior"],
                             dict(entry.get("parameters", {})))
    if "table" in entry:
        payload = entry["table"].encode("utf-8")
    elif "params" in entry:
        payload = params_blob([float(w) for w in entry["params"]])
    else:
        payload = base64.b64decode(entry["payload"])
    return Asset(asset_id, "data", payload)


# --- centralised oracle ------------------------------------------------------


def central_execute(script: dict, workflow: Workflow) -> dict[str, bytes]:
    """Run the workflow in one process, ignoring sites and policies.

    The distributed execution must produce byte-identical outputs.
    """
    assets = {entry["id"]: entry for entry in script["assets"]}
    behaviors = builtin_behaviors()
    values: dict[str, bytes] = {}
    for name, asset_id in workflow.inputs.items():
        values[name] = build_asset(assets[str(asset_id)]).payload
    for step in topological_steps(workflow):
        spec = assets[str(step.compute_asset)]
        produced = behaviors.run(
            spec["behavior"],
            {name: values[ref] for name, ref in step.inputs.items()},
            dict(spec.get("parameters", {})),
            tuple(step.outputs),
        )
        for output, payload in produced.items():
            values[f"{step.name}.{output}"] = payload
    return {name: values[ref] for name, ref in workflow.outputs.items()}


# --- runner ------------------------------------------------------------------


@dataclass
class ScenarioOutcome:
    name: str
    passed: bool
    messages: list[str] = field(default_factory=list)
    job: Optional[dict] = None

    def report(self) -> str:
        verdict = "ok" if self.passed else "FAILED"
        lines = [f"{self.name}: {verdict}"]
        lines += [f"  {message}" for message in self.messages]
        return "\n".join(lines)


def run_scenario(script: dict, mode: str = "in-process",
                 skip_rule: Optional[str] = None) -> ScenarioOutcome:
    """Replay one scenario script and check it against its expectations.

    With ``skip_rule`` set, that one rule is withheld and the expected
    outcome is inverted: the run must fail somewhere.
    """
    workflow = build_workflow(script)
    outcome = ScenarioOutcome(script["name"], True)
    with Exchange(mode) as exchange:
        parties = {}
        for spec in script["parties"]:
            parties[spec["namespace"]] = exchange.add_party(
                spec["name"], spec["namespace"])
        for spec in script["sites"]:
            exchange.add_site(spec["name"], parties[spec["owner"]])
        for entry in script["assets"]:
            exchange.store_asset(build_asset(entry))
        for text in script["rules"]:
            if text == skip_rule:
                continue
            exchange.add_rule(text)
        submitter = parties[script["submitter"]]
        try:
            job = exchange.submit(submitter, workflow)
        except RemoteError as exc:
            job = {"state": "failed", "error": f"{exc.code}: {exc}"}
        outcome.job = job

    expect_success = script["expect"]["outcome"] == "success" and skip_rule is None
    if not expect_success:
        if job["state"] == "done":
            outcome.passed = False
            outcome.messages.append(
                f"expected failure (without rule {skip_rule!r}) but job succeeded")
        else:
            outcome.messages.append(f"failed as expected: {job.get('error')}")
        return outcome

    if job["state"] != "done":
        outcome.passed = False
        outcome.messages.append(f"job failed: {job.get('error')}")
        return outcome

    assignment = job["plan"]["assignment"]
    for step_name, allowed in script["expect"].get("placement", {}).items():
        site = assignment.get(step_name)
        if site not in allowed:
            outcome.passed = False
            outcome.messages.append(
                f"step {step_name!r} ran at {site}, expected one of {allowed}")
    expected = central_execute(script, workflow)
    for name, payload in expected.items():
        got = base64.b64decode(job["outputs"][name])
        if got != payload:
            outcome.passed = False
            outcome.messages.append(
                f"output {name!r} differs from the centralised run: "
                f"{got!r} != {payload!r}")
    if outcome.passed:
        outcome.messages.append(
            f"plan {assignment}; {len(expected)} output(s) match the "
            "centralised run")
    return outcome


_PERMISSION_RULES = ("MayAccess", "MayUse", "ResultOfDataIn",
                     "ResultOfComputeIn", "InAssetCollection")


def check_minimality(script: dict, mode: str = "in-process") -> Iterator[tuple[str, ScenarioOutcome]]:
    """Re-run a scenario once per rule with that rule withheld.

    Every permission-bearing rule in the bundled scripts is load-bearing,
    so each run must fail. Yields (rule, outcome) pairs; an outcome passes
    when the degraded run failed as required.
    """
    for rule in script["rules"]:
        if not rule.startswith(_PERMISSION_RULES):
            continue
        yield rule, run_scenario(script, mode=mode, skip_rule=rule)
