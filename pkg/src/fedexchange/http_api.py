"""HTTP surface: FastAPI apps for registry and sites, plus HTTP clients.

External site endpoints: POST /updates (policy replication),
GET /assets/{id} (asset sharing, request fields as query/body) and
POST /jobs (execution requests). Internal endpoints live under
/internal/. The registry serves POST /register/party, POST /register/site
and POST /updates.
"""

from __future__ import annotations

import socket
import threading
from typing import Optional
from urllib.parse import quote

import httpx
import uvicorn
from fastapi import Body, FastAPI
from fastapi.responses import JSONResponse

from . import transport
from .registry import RegistryServer, record_from_json, record_to_json
from .replication import ReplicaUpdate, update_from_json
from .rules import SignedRule, signed_rule_from_json
from .site import RemoteError, SiteServer
from .transport import HTTP_STATUS, error_code


def _error_response(exc: Exception) -> JSONResponse:
    code = error_code(exc)
    return JSONResponse(
        {"error": code, "message": str(exc)},
        status_code=HTTP_STATUS.get(code, 500),
    )


def _wrap(handler, *args):
    try:
        return handler(*args)
    except RemoteError as exc:
        return JSONResponse(
            {"error": exc.code, "message": str(exc)},
            status_code=HTTP_STATUS.get(exc.code, 500),
        )
    except Exception as exc:  # typed errors become wire codes
        return _error_response(exc)


def site_app(server: SiteServer) -> FastAPI:
    """One app serving both the external and internal REST APIs.

    Routes are sync so FastAPI runs them in its threadpool; site-to-site
    calls made while handling a request then cannot starve the event loop.
    """
    app = FastAPI(title=f"site {server.id}")

    @app.post("/updates")
    def policy_updates(payload: dict = Body(...)):
        return _wrap(transport.handle_policy_updates, server, payload)

    @app.post("/assets/retrieve")
    def retrieve_asset(payload: dict = Body(...)):
        return _wrap(transport.handle_retrieve_asset, server, payload)

    @app.post("/jobs")
    def execute_steps(payload: dict = Body(...)):
        return _wrap(transport.handle_execute_steps, server, payload)

    @app.post("/internal/assets")
    def store_asset(payload: dict = Body(...)):
        return _wrap(transport.handle_store_asset, server, payload)

    @app.post("/internal/rules")
    def add_rule(payload: dict = Body(...)):
        return _wrap(transport.handle_add_rule, server, payload)

    @app.delete("/internal/rules/{rule_hash}")
    def delete_rule(rule_hash: str):
        return _wrap(transport.handle_delete_rule, server, rule_hash)

    @app.post("/internal/workflows")
    def submit_workflow(payload: dict = Body(...)):
        return _wrap(transport.handle_submit_workflow, server, payload)

    @app.get("/internal/jobs/{job_id}")
    def get_job(job_id: str):
        return _wrap(transport.handle_get_job, server, job_id)

    return app


def registry_app(server: RegistryServer) -> FastAPI:
    app = FastAPI(title="registry")

    @app.post("/register/party")
    def register_party(payload: dict = Body(...)):
        payload["type"] = "party"
        return _wrap(transport.handle_register, server, payload)

    @app.post("/register/site")
    def register_site(payload: dict = Body(...)):
        payload["type"] = "site"
        return _wrap(transport.handle_register, server, payload)

    @app.post("/updates")
    def updates(payload: dict = Body(...)):
        return _wrap(transport.handle_registry_updates, server, payload)

    return app


def _raise_for_error(response: httpx.Response) -> dict:
    data = response.json()
    if response.status_code >= 400:
        code = data.get("error") if isinstance(data, dict) else None
        message = data.get("message", "") if isinstance(data, dict) else str(data)
        raise RemoteError(code or "InternalError", message)
    return data


class HttpSiteClient:
    def __init__(self, endpoint: str, http: Optional[httpx.Client] = None):
        self._base = endpoint.rstrip("/")
        self._http = http or httpx.Client(timeout=30.0)

    def _post(self, path: str, payload: dict) -> dict:
        return _raise_for_error(self._http.post(self._base + path, json=payload))

    def policy_updates(self, from_version: int) -> ReplicaUpdate[SignedRule]:
        data = self._post("/updates", {"from_version": from_version})
        return update_from_json(data, signed_rule_from_json, str)

    def retrieve_asset(self, request: dict) -> dict:
        return self._post("/assets/retrieve", request)

    def submit_job(self, request: dict) -> dict:
        return self._post("/jobs", request)

    # Internal API, used by command-line clients.
    def store_asset(self, asset_json: dict) -> dict:
        return self._post("/internal/assets", asset_json)

    def add_rule(self, rule_json: dict) -> dict:
        return self._post("/internal/rules", rule_json)

    def delete_rule(self, rule_hash: str) -> dict:
        return _raise_for_error(
            self._http.delete(self._base + "/internal/rules/" + quote(rule_hash)))

    def submit_workflow(self, submission_json: dict) -> dict:
        return self._post("/internal/workflows", submission_json)

    def get_job(self, job_id: str) -> dict:
        return _raise_for_error(
            self._http.get(self._base + "/internal/jobs/" + quote(job_id)))


class HttpRegistryClient:
    def __init__(self, endpoint: str, http: Optional[httpx.Client] = None):
        self._base = endpoint.rstrip("/")
        self._http = http or httpx.Client(timeout=30.0)

    def get_updates(self, from_version: int):
        data = _raise_for_error(
            self._http.post(self._base + "/updates", json={"from_version": from_version}))
        return update_from_json(data, record_from_json, str)

    def register(self, record) -> int:
        data = record_to_json(record)
        path = "/register/party" if data["type"] == "party" else "/register/site"
        return _raise_for_error(
            self._http.post(self._base + path, json=data))["transaction"]


class HttpConnector:
    def site_client(self, endpoint: str) -> HttpSiteClient:
        return HttpSiteClient(endpoint)


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


class ServedApp:
    """A uvicorn server running in a daemon thread; for tests and scenarios."""

    def __init__(self, app: FastAPI, port: Optional[int] = None):
        self.port = port or free_port()
        self.base_url = f"http://127.0.0.1:{self.port}"
        config = uvicorn.Config(app, host="127.0.0.1", port=self.port,
                                log_level="error")
        self._server = uvicorn.Server(config)
        self._thread = threading.Thread(target=self._server.run, daemon=True)

    def start(self) -> "ServedApp":
        self._thread.start()
        import time

        deadline = time.time() + 10.0
        while not self._server.started:
            if time.time() > deadline:
                raise RuntimeError("server did not start in time")
            time.sleep(0.01)
        return self

    def stop(self) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=10.0)
