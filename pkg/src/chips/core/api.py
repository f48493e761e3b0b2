"""REST face of the core backend; also serves the web UI bundle under /ui/."""

from __future__ import annotations

import argparse
import json
import logging
import mimetypes
import threading
from pathlib import Path

from ..httpd import ApiServer, Request, Response, bytes_response, json_response
from ..pacs import QuerySpec
from ..pacs.client import PullReceipt
from .errors import AuthRequired, BadComparator, CoreError
from .metadata_index import Predicate
from .models import User
from .service import CoreConfig, CoreService

logger = logging.getLogger(__name__)


class CoreServer:
    def __init__(self, service: CoreService, host: str = "127.0.0.1", port: int = 0):
        self.service = service
        self.api = ApiServer(host=host, port=port, name="core")
        add = self.api.add_route
        add("POST", "/login", self._login)
        add("GET", "/feeds", self._list_feeds)
        add("POST", "/feeds", self._create_feed)
        add("GET", "/feeds/{feed_id}/tree", self._feed_tree)
        add("POST", "/feeds/{feed_id}/share", self._share)
        add("POST", "/feeds/{feed_id}/annotate", self._annotate)
        add("GET", "/plugins", self._list_plugins)
        add("POST", "/plugins", self._register_plugin)
        add("POST", "/feeds/{feed_id}/instances", self._create_instance)
        add("GET", "/instances/{instance_id}", self._get_instance)
        add("POST", "/instances/{instance_id}/cancel", self._cancel_instance)
        add("GET", "/metadata/query", self._query_metadata)
        add("POST", "/pacs/query", self._pacs_query)
        add("POST", "/pacs/pull", self._pacs_pull)
        add("GET", "/ui/{path...}", self._static)
        add("GET", "/ui/", self._static_index)
        add("GET", "/ui", self._static_index)
        add("GET", "/", self._static_index)

    # -- helpers ---------------------------------------------------------------

    def _user(self, request: Request) -> User:
        token = request.bearer_token()
        if not token:
            raise AuthRequired("missing bearer token")
        return self.service.verify_token(token)

    # -- handlers ----------------------------------------------------------------

    def _login(self, request: Request) -> Response:
        body = request.json()
        token, user = self.service.login(str(body.get("login", "")), str(body.get("secret", "")))
        return json_response({"token": token, "user": user.to_json()})

    def _list_feeds(self, request: Request) -> Response:
        user = self._user(request)
        return json_response({"feeds": self.service.list_feeds(user)})

    def _create_feed(self, request: Request) -> Response:
        user = self._user(request)
        body = request.json()
        receipt_json = body.get("receipt")
        if not receipt_json:
            raise CoreError("body must carry a pull receipt")
        receipt = PullReceipt.from_json(receipt_json)
        feed = self.service.create_feed_from_pull(user, str(body.get("title", "")), receipt)
        return json_response(feed.to_json(for_user=user.id), status=201)

    def _feed_tree(self, request: Request) -> Response:
        user = self._user(request)
        return json_response(self.service.get_feed_tree(user, int(request.path_params["feed_id"])))

    def _share(self, request: Request) -> Response:
        user = self._user(request)
        body = request.json()
        feed = self.service.share_feed(
            user, int(request.path_params["feed_id"]), str(body.get("to", ""))
        )
        return json_response(feed.to_json(for_user=user.id))

    def _annotate(self, request: Request) -> Response:
        user = self._user(request)
        body = request.json()
        feed = self.service.annotate_feed(
            user, int(request.path_params["feed_id"]),
            str(body.get("action", "")), str(body.get("text", "")),
        )
        return json_response(feed.to_json(for_user=user.id))

    def _list_plugins(self, request: Request) -> Response:
        self._user(request)
        return json_response({"plugins": [p.to_json() for p in self.service.list_plugins()]})

    def _register_plugin(self, request: Request) -> Response:
        user = self._user(request)
        descriptor = self.service.register_plugin(user, request.json())
        return json_response(descriptor.to_json(), status=201)

    def _create_instance(self, request: Request) -> Response:
        user = self._user(request)
        body = request.json()
        parent = body.get("parent_id")
        parent_id = None if parent in (None, "root") else int(parent)
        instance = self.service.create_plugin_instance(
            user,
            int(request.path_params["feed_id"]),
            parent_id,
            int(body.get("plugin_id", 0)),
            dict(body.get("params", {})),
        )
        return json_response(instance.to_json(), status=201)

    def _get_instance(self, request: Request) -> Response:
        user = self._user(request)
        instance = self.service.get_instance(user, int(request.path_params["instance_id"]))
        return json_response(instance.to_json())

    def _cancel_instance(self, request: Request) -> Response:
        user = self._user(request)
        instance = self.service.cancel_instance(user, int(request.path_params["instance_id"]))
        return json_response(instance.to_json())

    def _query_metadata(self, request: Request) -> Response:
        self._user(request)
        raw = request.query.get("q", "[]")
        try:
            clauses = json.loads(raw)
            predicates = [
                Predicate(str(c["key"]), str(c["op"]), c.get("value", "")) for c in clauses
            ]
        except (ValueError, TypeError, KeyError) as exc:
            raise BadComparator(f"malformed query: {exc}") from exc
        return json_response({"records": self.service.query_metadata(predicates)})

    def _pacs_query(self, request: Request) -> Response:
        self._user(request)
        spec = QuerySpec.from_json(request.json())
        spec.validate()
        return json_response({"studies": self.service.pacs_query(spec)})

    def _pacs_pull(self, request: Request) -> Response:
        user = self._user(request)
        body = request.json()
        study_uid = str(body.get("study_uid", ""))
        if not study_uid:
            raise CoreError("study_uid required")
        title = str(body.get("title", "")) or f"Study {study_uid[-12:]}"
        feed = self.service.pacs_pull(user, study_uid, title)
        return json_response(feed.to_json(for_user=user.id), status=201)

    # -- static UI ---------------------------------------------------------------------

    def _static_index(self, request: Request) -> Response:
        request.path_params["path"] = "index.html"
        return self._static(request)

    def _static(self, request: Request) -> Response:
        ui_dir = self.service.config.ui_dir
        if ui_dir is None:
            return json_response({"error": "NotFound", "message": "no UI bundle configured"}, 404)
        base = Path(ui_dir).resolve()
        target = (base / request.path_params["path"]).resolve()
        if not str(target).startswith(str(base)) or not target.is_file():
            return json_response({"error": "NotFound", "message": request.path}, 404)
        ctype = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
        return bytes_response(target.read_bytes(), content_type=ctype)

    # -- lifecycle ------------------------------------------------------------------------

    def start(self) -> int:
        return self.api.start()

    def stop(self) -> None:
        self.api.stop()
        self.service.close()

    @property
    def url(self) -> str:
        return self.api.url


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="chips-core", description="central backend")
    parser.add_argument("--store-path", required=True)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8050)
    parser.add_argument("--dispatcher-url")
    parser.add_argument("--pacs-url")
    parser.add_argument("--pacs-account", default="")
    parser.add_argument("--pacs-secret", default="")
    parser.add_argument("--anon-policy", help="policy file; defaults to the shipped policy")
    parser.add_argument("--ui-dir", help="static UI bundle directory served under /ui/")
    parser.add_argument("--adduser", action="append", default=[],
                        metavar="LOGIN:SECRET:ROLE", help="seed a user at startup")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")

    policy = None
    if args.anon_policy:
        import os

        from ..dicom import load_policy_file

        salt = os.environ.get("CHIPS_SECRET", "chips").encode() + b"/anon-salt"
        policy = load_policy_file(args.anon_policy, salt, policy_id=args.anon_policy)
    config = CoreConfig(
        store_path=Path(args.store_path),
        dispatcher_url=args.dispatcher_url,
        pacs_url=args.pacs_url,
        pacs_account=args.pacs_account,
        pacs_secret=args.pacs_secret,
        anon_policy=policy,
        ui_dir=Path(args.ui_dir) if args.ui_dir else None,
    )
    service = CoreService(config)
    for seed in args.adduser:
        login, _, rest = seed.partition(":")
        secret, _, role = rest.partition(":")
        try:
            service.create_user(login, secret, role or "CLINICIAN")
            logger.info("seeded user %s (%s)", login, role or "CLINICIAN")
        except CoreError as exc:
            logger.info("user %s: %s", login, exc)
    server = CoreServer(service, host=args.host, port=args.port)
    port = server.start()
    logger.info("core on port %d, store %s", port, args.store_path)
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
