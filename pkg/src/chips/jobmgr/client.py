"""HTTP client for a remote job manager (used by the dispatcher)."""

from __future__ import annotations

import requests

from ..errors import ChipsError, error_from_payload
from .manager import JobRecord, JobSpec


class JobmgrUnreachable(ChipsError):
    """Transport-level failure talking to a job manager."""

    http_status = 502


class JobmgrClient:
    def __init__(self, base_url: str, timeout: float = 15.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def _request(self, method: str, path: str, **kwargs) -> dict:
        try:
            response = requests.request(
                method, f"{self.base_url}{path}", timeout=self.timeout, **kwargs
            )
        except (requests.Timeout, requests.ConnectionError) as exc:
            raise JobmgrUnreachable(f"{self.base_url}: {exc}") from exc
        if response.status_code >= 400:
            try:
                payload = response.json()
            except ValueError:
                payload = {"error": "RemoteServiceError", "message": response.text[:200]}
            raise error_from_payload(payload)
        return response.json()

    def submit(self, spec: JobSpec) -> JobRecord:
        return JobRecord.from_json(self._request("POST", "/api/v1/jobs", json=spec.to_json()))

    def get(self, job_key: str) -> JobRecord:
        return JobRecord.from_json(self._request("GET", f"/api/v1/jobs/{job_key}"))

    def cancel(self, job_key: str) -> JobRecord:
        return JobRecord.from_json(self._request("DELETE", f"/api/v1/jobs/{job_key}"))

    def list(self, states: str | None = None) -> list[dict]:
        params = {"state": states} if states else None
        return self._request("GET", "/api/v1/jobs", params=params)["jobs"]

    def purge(self) -> int:
        return self._request("POST", "/api/v1/purge")["purged"]
