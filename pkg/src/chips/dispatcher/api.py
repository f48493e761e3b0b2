"""REST face of the dispatcher."""

from __future__ import annotations

import argparse
import logging
import threading
from pathlib import Path

from ..httpd import ApiServer, Request, Response, json_response
from .errors import DispatcherError
from .nodes import ComputeNode, NodeRegistry, load_node_file
from .steps import Dispatcher, StepPlan

logger = logging.getLogger(__name__)


class DispatcherServer:
    def __init__(self, dispatcher: Dispatcher, host: str = "127.0.0.1", port: int = 0):
        self.dispatcher = dispatcher
        self.api = ApiServer(host=host, port=port, name="dispatcher")
        self.api.add_route("POST", "/api/v1/steps", self._create_step)
        self.api.add_route("GET", "/api/v1/steps/{step_id}", self._get_step)
        self.api.add_route("DELETE", "/api/v1/steps/{step_id}", self._cancel_step)
        self.api.add_route("GET", "/api/v1/nodes", self._list_nodes)
        self.api.add_route("PUT", "/api/v1/nodes", self._register_node)

    def _create_step(self, request: Request) -> Response:
        body = request.json()
        try:
            plan = StepPlan(
                step_id=body["step_id"],
                instance_id=int(body["instance_id"]),
                input_dir=body["input_dir"],
                output_dir=body["output_dir"],
                command=list(body["command"]),
                environment=dict(body.get("environment", {})),
                timeout_s=float(body.get("timeout_s", 300.0)),
                image=body.get("image"),
                labels=set(body.get("labels", [])),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DispatcherError(f"malformed step request: {exc}") from exc
        return json_response(self.dispatcher.execute_step(plan).to_json(), status=201)

    def _get_step(self, request: Request) -> Response:
        return json_response(self.dispatcher.poll_step(request.path_params["step_id"]).to_json())

    def _cancel_step(self, request: Request) -> Response:
        return json_response(self.dispatcher.cancel_step(request.path_params["step_id"]).to_json())

    def _list_nodes(self, request: Request) -> Response:
        return json_response({"nodes": [n.to_json() for n in self.dispatcher.registry.list()]})

    def _register_node(self, request: Request) -> Response:
        body = request.json()
        entries = body if isinstance(body, list) else [body]
        try:
            nodes = [ComputeNode.from_json(obj) for obj in entries]
        except (KeyError, TypeError, ValueError) as exc:
            raise DispatcherError(f"malformed node: {exc}") from exc
        for node in nodes:
            self.dispatcher.registry.register(node)
        self.dispatcher.registry.probe_all()
        return json_response({"registered": [n.id for n in nodes]})

    def start(self) -> int:
        return self.api.start()

    def stop(self) -> None:
        self.api.stop()
        self.dispatcher.registry.stop_probing()

    @property
    def url(self) -> str:
        return self.api.url


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="chips-dispatcher", description="step orchestrator")
    parser.add_argument("--nodes", help="JSON file with compute-node seeds")
    parser.add_argument("--store-path", required=True)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8057)
    parser.add_argument("--probe-interval", type=float, default=10.0)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    seeds = load_node_file(args.nodes) if args.nodes else []
    registry = NodeRegistry(seeds, probe_interval_s=args.probe_interval)
    registry.probe_all()
    registry.start_probing()
    dispatcher = Dispatcher(registry, Path(args.store_path))
    recovered = dispatcher.recover()
    server = DispatcherServer(dispatcher, host=args.host, port=args.port)
    port = server.start()
    logger.info("dispatcher on port %d, %d nodes, %d steps recovered", port, len(seeds), recovered)
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
