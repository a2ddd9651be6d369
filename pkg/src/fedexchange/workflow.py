"""DAG workflow model, validation, signed submissions and plans.

Step inputs reference either a workflow input by name or a previous step's
output as ``<step>.<output>``; workflow outputs use the same references.
The empty workflow (no steps, one output bound to one input) is valid and
models a plain download.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from graphlib import CycleError, TopologicalSorter
from typing import Mapping

from . import crypto
from .crypto import PrivateKey
from .identifiers import Identifier, Kind, parse_identifier
from .registry import PartyRecord


@dataclass(frozen=True)
class Step:
    name: str
    compute_asset: Identifier
    inputs: Mapping[str, str]
    outputs: tuple[str, ...]


@dataclass(frozen=True)
class Workflow:
    id: str
    inputs: Mapping[str, Identifier]
    steps: tuple[Step, ...]
    outputs: Mapping[str, str]

    def step(self, name: str) -> Step:
        for step in self.steps:
            if step.name == name:
                return step
        raise KeyError(name)


@dataclass(frozen=True)
class WorkflowError:
    kind: str  # CyclicWorkflow | DanglingReference | DuplicateStepName | NoOutputs
    message: str


def _ref_step(ref: str) -> str | None:
    """Step name a reference points at, or None for a workflow input."""
    if "." in ref:
        return ref.split(".", 1)[0]
    return None


def validate_workflow(workflow: Workflow) -> list[WorkflowError]:
    """Structural checks; an empty list means the workflow is valid."""
    errors: list[WorkflowError] = []
    names = [s.name for s in workflow.steps]
    for name in {n for n in names if names.count(n) > 1}:
        errors.append(WorkflowError("DuplicateStepName", f"step {name!r} defined twice"))
    by_name = {s.name: s for s in workflow.steps}

    def check_ref(ref: str, where: str) -> None:
        step_name = _ref_step(ref)
        if step_name is None:
            if ref not in workflow.inputs:
                errors.append(WorkflowError(
                    "DanglingReference", f"{where} references unknown input {ref!r}"))
            return
        step = by_name.get(step_name)
        if step is None:
            errors.append(WorkflowError(
                "DanglingReference", f"{where} references unknown step {step_name!r}"))
            return
        output = ref.split(".", 1)[1]
        if output not in step.outputs:
            errors.append(WorkflowError(
                "DanglingReference",
                f"{where} references unknown output {output!r} of step {step_name!r}"))

    for step in workflow.steps:
        for input_name, ref in step.inputs.items():
            check_ref(ref, f"step {step.name!r} input {input_name!r}")
    if not workflow.outputs:
        errors.append(WorkflowError("NoOutputs", "workflow has no outputs"))
    for output_name, ref in workflow.outputs.items():
        check_ref(ref, f"workflow output {output_name!r}")

    graph = {
        step.name: {
            producer for producer in map(_ref_step, step.inputs.values())
            if producer is not None and producer in by_name
        }
        for step in workflow.steps
    }
    try:
        tuple(TopologicalSorter(graph).static_order())
    except CycleError as exc:
        errors.append(WorkflowError("CyclicWorkflow", f"cycle through {exc.args[1]}"))
    return errors


def topological_steps(workflow: Workflow) -> list[Step]:
    by_name = {s.name: s for s in workflow.steps}
    graph = {
        step.name: {
            producer for producer in map(_ref_step, step.inputs.values())
            if producer is not None
        }
        for step in workflow.steps
    }
    return [by_name[name] for name in TopologicalSorter(graph).static_order()]


def result_identifier(submitter_ns: str, workflow_id: str, step: str,
                      output: str) -> Identifier:
    """Identifier of the asset produced for one step output."""
    return Identifier(Kind.RESULT, submitter_ns, f"{workflow_id}.{step}.{output}")


# --- wire form -------------------------------------------------------------


def workflow_to_json(workflow: Workflow) -> dict:
    return {
        "id": workflow.id,
        "inputs": {name: str(asset) for name, asset in workflow.inputs.items()},
        "steps": [
            {
                "name": step.name,
                "compute_asset": str(step.compute_asset),
                "inputs": dict(step.inputs),
                "outputs": list(step.outputs),
            }
            for step in workflow.steps
        ],
        "outputs": dict(workflow.outputs),
    }


def workflow_from_json(data: dict) -> Workflow:
    return Workflow(
        data["id"],
        {name: parse_identifier(text) for name, text in data["inputs"].items()},
        tuple(
            Step(
                s["name"],
                parse_identifier(s["compute_asset"]),
                dict(s["inputs"]),
                tuple(s["outputs"]),
            )
            for s in data["steps"]
        ),
        dict(data["outputs"]),
    )


def canonical_workflow_bytes(workflow: Workflow) -> bytes:
    return json.dumps(workflow_to_json(workflow), sort_keys=True,
                      separators=(",", ":")).encode()


# --- plans -----------------------------------------------------------------


@dataclass(frozen=True)
class Plan:
    workflow_id: str
    assignment: Mapping[str, Identifier]  # step name -> site

    def to_json(self) -> dict:
        return {
            "workflow_id": self.workflow_id,
            "assignment": {step: str(site) for step, site in self.assignment.items()},
        }

    @classmethod
    def from_json(cls, data: dict) -> "Plan":
        return cls(
            data["workflow_id"],
            {step: parse_identifier(site) for step, site in data["assignment"].items()},
        )


# --- signed submissions ----------------------------------------------------


class BadSubmissionSignature(ValueError):
    pass


@dataclass(frozen=True)
class SignedSubmission:
    workflow: Workflow
    party: Identifier
    user_key: bytes  # public part of the pseudonymous user key used to sign
    signature: bytes

    def signed_payload(self) -> bytes:
        header = json.dumps(
            {"party": str(self.party), "user_key": self.user_key.hex()},
            sort_keys=True, separators=(",", ":"),
        ).encode()
        return header + b"\n" + canonical_workflow_bytes(self.workflow)

    def to_json(self) -> dict:
        return {
            "workflow": workflow_to_json(self.workflow),
            "party": str(self.party),
            "user_key": self.user_key.hex(),
            "signature": self.signature.hex(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "SignedSubmission":
        return cls(
            workflow_from_json(data["workflow"]),
            parse_identifier(data["party"]),
            bytes.fromhex(data["user_key"]),
            bytes.fromhex(data["signature"]),
        )


def sign_submission(workflow: Workflow, party: Identifier, user_public: bytes,
                    user_private: PrivateKey) -> SignedSubmission:
    unsigned = SignedSubmission(workflow, party, user_public, b"")
    return SignedSubmission(workflow, party, user_public,
                            user_private.sign(unsigned.signed_payload()))


def verify_submission(submission: SignedSubmission, party_record: PartyRecord) -> bool:
    """Verify the pseudonymous signature chain of a submission.

    The signing key must be registered in the party's record, certified by
    the party's user CA, and the signature must cover the workflow bytes.
    Raises BadSubmissionSignature on any failure.
    """
    key_record = next(
        (k for k in party_record.user_keys if k.public == submission.user_key), None
    )
    if key_record is None:
        raise BadSubmissionSignature(
            f"user key not registered for {submission.party}")
    if key_record.role != crypto.ROLE_USER_PSEUDONYM:
        raise BadSubmissionSignature("signing key is not a user pseudonym key")
    if not key_record.verify_certification(party_record.user_ca_key.public):
        raise BadSubmissionSignature("user key not certified by the party's user CA")
    if not crypto.verify(submission.user_key, submission.signature,
                         submission.signed_payload()):
        raise BadSubmissionSignature("workflow signature invalid")
    return True
