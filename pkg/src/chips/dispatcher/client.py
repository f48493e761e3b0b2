"""HTTP client for the dispatcher (used by core)."""

from __future__ import annotations

import requests

from ..errors import ChipsError, error_from_payload


class DispatcherUnreachable(ChipsError):
    http_status = 502


class DispatcherClient:
    def __init__(self, base_url: str, timeout: float = 15.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def _request(self, method: str, path: str, **kwargs) -> dict:
        try:
            response = requests.request(
                method, f"{self.base_url}{path}", timeout=self.timeout, **kwargs
            )
        except (requests.Timeout, requests.ConnectionError) as exc:
            raise DispatcherUnreachable(f"{self.base_url}: {exc}") from exc
        if response.status_code >= 400:
            try:
                payload = response.json()
            except ValueError:
                payload = {"error": "RemoteServiceError", "message": response.text[:200]}
            raise error_from_payload(payload)
        return response.json()

    def create_step(self, payload: dict) -> dict:
        return self._request("POST", "/api/v1/steps", json=payload)

    def get_step(self, step_id: str) -> dict:
        return self._request("GET", f"/api/v1/steps/{step_id}")

    def cancel_step(self, step_id: str) -> dict:
        return self._request("DELETE", f"/api/v1/steps/{step_id}")

    def list_nodes(self) -> list[dict]:
        return self._request("GET", "/api/v1/nodes")["nodes"]

    def register_node(self, node: dict) -> dict:
        return self._request("PUT", "/api/v1/nodes", json=node)
