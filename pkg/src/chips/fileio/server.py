"""Tree-transfer service: stores pushed trees under <job_root>/<key>/input
and serves input/output trees back as self-verifying archives."""

from __future__ import annotations

import argparse
import logging
import threading
from pathlib import Path

from ..common import valid_job_key
from ..httpd import ApiServer, CutStream, Request, Response, chunked_response, json_response
from .archive import TreeManifest, archive_tree, peek_manifest, restore_tree
from .errors import RemoteRejected, UnknownJobKey

logger = logging.getLogger(__name__)

_SUBDIRS = ("input", "output")
_CHUNK = 64 * 1024


class FileioServer:
    """HTTP face over a job-keyed tree store.

    ``fault_cut_after_bytes``, when set, aborts every archive download after
    that many bytes (fault-injection hook for atomicity tests).
    """

    def __init__(self, job_root: Path | str, host: str = "127.0.0.1", port: int = 0,
                 fault_cut_after_bytes: int | None = None):
        self.job_root = Path(job_root)
        self.job_root.mkdir(parents=True, exist_ok=True)
        self.fault_cut_after_bytes = fault_cut_after_bytes
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()
        self.api = ApiServer(host=host, port=port, name="fileio")
        self.api.add_route("POST", "/api/v1/trees/{jobkey}/input", self._push)
        self.api.add_route("GET", "/api/v1/trees/{jobkey}/manifest", self._manifest)
        self.api.add_route("GET", "/api/v1/trees/{jobkey}/{subdir}", self._pull)

    # -- helpers -------------------------------------------------------------

    def _lock_for(self, key: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(key, threading.Lock())

    def _tree_dir(self, key: str, subdir: str) -> Path:
        if not valid_job_key(key):
            raise RemoteRejected(f"invalid job key {key!r}")
        if subdir not in _SUBDIRS:
            raise UnknownJobKey(f"no such subdir {subdir!r}")
        return self.job_root / key / subdir

    # -- handlers ------------------------------------------------------------

    def _push(self, request: Request) -> Response:
        key = request.path_params["jobkey"]
        dest = self._tree_dir(key, "input")
        with self._lock_for(key):
            if dest.exists():
                raise RemoteRejected(f"job key {key!r} already holds an input tree")
            manifest = peek_manifest(request.body)
            receipt = restore_tree(request.body, manifest, dest)
        return json_response({
            "job_key": key,
            "manifest": manifest.to_json(),
            "bytes": receipt.bytes_transferred,
        })

    def _manifest(self, request: Request) -> Response:
        key = request.path_params["jobkey"]
        subdir = request.query.get("subdir", "input")
        tree = self._tree_dir(key, subdir)
        if not tree.is_dir():
            raise UnknownJobKey(f"no {subdir} tree for job key {key!r}")
        return json_response(TreeManifest.for_dir(tree).to_json())

    def _pull(self, request: Request) -> Response:
        key = request.path_params["jobkey"]
        subdir = request.path_params["subdir"]
        tree = self._tree_dir(key, subdir)
        if not tree.is_dir():
            raise UnknownJobKey(f"no {subdir} tree for job key {key!r}")
        with self._lock_for(key):
            archive, _manifest = archive_tree(tree)
        cut_at = self.fault_cut_after_bytes

        def stream():
            sent = 0
            for offset in range(0, len(archive), _CHUNK):
                chunk = archive[offset:offset + _CHUNK]
                if cut_at is not None and sent + len(chunk) >= cut_at:
                    yield chunk[: max(0, cut_at - sent)]
                    raise CutStream()
                sent += len(chunk)
                yield chunk
            if not archive:
                yield b""

        return chunked_response(stream())

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> int:
        return self.api.start()

    def stop(self) -> None:
        self.api.stop()

    @property
    def url(self) -> str:
        return self.api.url


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fileio", description="tree-transfer service")
    parser.add_argument("--job-root", required=True)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8055)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    server = FileioServer(args.job_root, host=args.host, port=args.port)
    port = server.start()
    logger.info("fileio serving %s on port %d", args.job_root, port)
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
