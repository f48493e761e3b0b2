"""REST face of the job manager."""

from __future__ import annotations

import argparse
import logging
import threading

from ..httpd import ApiServer, Request, Response, json_response
from .backend import backend_by_name
from .errors import InvalidJobSpec
from .manager import JobManager, JobSpec, JobState

logger = logging.getLogger(__name__)


class JobmgrServer:
    def __init__(self, manager: JobManager, host: str = "127.0.0.1", port: int = 0):
        self.manager = manager
        self.api = ApiServer(host=host, port=port, name="jobmgr")
        self.api.add_route("POST", "/api/v1/jobs", self._submit)
        self.api.add_route("GET", "/api/v1/jobs", self._list)
        self.api.add_route("GET", "/api/v1/jobs/{key}", self._get)
        self.api.add_route("DELETE", "/api/v1/jobs/{key}", self._cancel)
        self.api.add_route("POST", "/api/v1/purge", self._purge)

    def _submit(self, request: Request) -> Response:
        try:
            spec = JobSpec.from_json(request.json())
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidJobSpec(f"malformed job spec: {exc}") from exc
        record = self.manager.submit_job(spec)
        return json_response(record.to_json(), status=201)

    def _get(self, request: Request) -> Response:
        record = self.manager.get_job(request.path_params["key"])
        return json_response(record.to_json())

    def _cancel(self, request: Request) -> Response:
        record = self.manager.cancel_job(request.path_params["key"])
        return json_response(record.to_json())

    def _list(self, request: Request) -> Response:
        states = None
        if request.query.get("state"):
            try:
                states = {JobState(s) for s in request.query["state"].split(",")}
            except ValueError as exc:
                raise InvalidJobSpec(f"bad state filter: {exc}") from exc
        records = self.manager.list_jobs(states)
        summaries = [
            {"job_key": r.spec.job_key, "state": r.state.value, "submitted_at": r.submitted_at}
            for r in records
        ]
        return json_response({"jobs": summaries})

    def _purge(self, request: Request) -> Response:
        return json_response({"purged": self.manager.purge()})

    def start(self) -> int:
        return self.api.start()

    def stop(self, kill_running: bool = True) -> None:
        self.api.stop()
        self.manager.shutdown(kill_running=kill_running)

    @property
    def url(self) -> str:
        return self.api.url


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="jobmgr", description="compute-node job manager")
    parser.add_argument("--job-root", required=True)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8056)
    parser.add_argument("--max-parallel", type=int, default=2)
    parser.add_argument("--backend", choices=["local", "container"], default="local")
    parser.add_argument("--grace-period", type=float, default=5.0)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    manager = JobManager(
        args.job_root,
        max_parallel=args.max_parallel,
        backend=backend_by_name(args.backend),
        grace_period_s=args.grace_period,
    )
    server = JobmgrServer(manager, host=args.host, port=args.port)
    port = server.start()
    logger.info("jobmgr on port %d, job root %s, %d workers", port, args.job_root, args.max_parallel)
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
