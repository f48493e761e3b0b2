"""Minimal threaded HTTP service plumbing shared by all chips services.

Wraps ``http.server.ThreadingHTTPServer`` with path-pattern routing, JSON
helpers, and chunked streaming responses. Servers run in a daemon thread and
bind an ephemeral port when ``port=0``, which keeps them cheap to embed in
tests and in the all-on-localhost deployment this project targets.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Iterator
from urllib.parse import parse_qsl, urlsplit

from .errors import ChipsError

logger = logging.getLogger(__name__)


class CutStream(Exception):
    """Raised by a streaming body generator to abort the connection mid-stream.

    Used by fault-injection hooks: the handler closes the socket without
    terminating the chunked encoding, so the client observes truncation.
    """


@dataclass
class Request:
    method: str
    path: str
    path_params: dict[str, str]
    query: dict[str, str]
    headers: dict[str, str]
    body: bytes

    def json(self) -> dict:
        if not self.body:
            return {}
        return json.loads(self.body.decode("utf-8"))

    def bearer_token(self) -> str:
        auth = self.headers.get("authorization", "")
        if auth.lower().startswith("bearer "):
            return auth[7:].strip()
        return ""


@dataclass
class Response:
    status: int = 200
    body: bytes = b""
    content_type: str = "application/json"
    stream: Iterator[bytes] | None = None  # chunked when set
    headers: dict[str, str] = field(default_factory=dict)


def json_response(obj, status: int = 200) -> Response:
    return Response(status=status, body=json.dumps(obj).encode("utf-8"))


def bytes_response(data: bytes, content_type: str = "application/octet-stream") -> Response:
    return Response(status=200, body=data, content_type=content_type)


def chunked_response(gen: Iterator[bytes], content_type: str = "application/octet-stream") -> Response:
    return Response(status=200, stream=gen, content_type=content_type)


Handler = Callable[[Request], Response]


def _compile(pattern: str) -> re.Pattern:
    # "/retrieve/{uid}" -> named group per placeholder, full-path match;
    # "{name...}" greedily matches across slashes (static file subtrees)
    regex = re.sub(r"\{(\w+)\.\.\.\}", lambda m: f"(?P<{m.group(1)}>.+)", pattern)
    regex = re.sub(r"\{(\w+)\}", lambda m: f"(?P<{m.group(1)}>[^/]+)", regex)
    return re.compile("^" + regex + "$")


class ApiServer:
    """A route table plus a ThreadingHTTPServer running it."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0, name: str = "api"):
        self.host = host
        self.port = port
        self.name = name
        self._routes: list[tuple[str, re.Pattern, Handler]] = []
        self._httpd: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    def add_route(self, method: str, pattern: str, handler: Handler) -> None:
        self._routes.append((method.upper(), _compile(pattern), handler))

    def dispatch(self, request: Request) -> Response:
        matched_path = False
        for method, regex, handler in self._routes:
            m = regex.match(request.path)
            if not m:
                continue
            matched_path = True
            if method != request.method:
                continue
            request.path_params = {k: str(v) for k, v in m.groupdict().items()}
            try:
                return handler(request)
            except ChipsError as err:
                return json_response(err.payload(), status=err.http_status)
            except CutStream:
                raise
            except Exception:
                logger.exception("%s: unhandled error on %s %s", self.name, request.method, request.path)
                return json_response({"error": "InternalError", "message": "unhandled server error"}, status=500)
        if matched_path:
            return json_response({"error": "MethodNotAllowed", "message": request.method}, status=405)
        return json_response({"error": "NotFound", "message": request.path}, status=404)

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> int:
        server = self

        class _Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt, *args):  # route through logging, not stderr
                logger.debug("%s: %s", server.name, fmt % args)

            def _handle(self):
                split = urlsplit(self.path)
                length = int(self.headers.get("Content-Length", 0) or 0)
                body = self.rfile.read(length) if length else b""
                request = Request(
                    method=self.command,
                    path=split.path,
                    path_params={},
                    query=dict(parse_qsl(split.query)),
                    headers={k.lower(): v for k, v in self.headers.items()},
                    body=body,
                )
                try:
                    response = server.dispatch(request)
                except CutStream:
                    # Abort without finishing the HTTP exchange.
                    self.close_connection = True
                    try:
                        self.wfile.flush()
                    except OSError:
                        pass
                    return
                self._write(response)

            def _write(self, response: Response):
                try:
                    self.send_response(response.status)
                    self.send_header("Content-Type", response.content_type)
                    for key, value in response.headers.items():
                        self.send_header(key, value)
                    if response.stream is not None:
                        self.send_header("Transfer-Encoding", "chunked")
                        self.end_headers()
                        for chunk in response.stream:
                            if not chunk:
                                continue
                            self.wfile.write(f"{len(chunk):x}\r\n".encode("ascii"))
                            self.wfile.write(chunk)
                            self.wfile.write(b"\r\n")
                        self.wfile.write(b"0\r\n\r\n")
                    else:
                        self.send_header("Content-Length", str(len(response.body)))
                        self.end_headers()
                        if self.command != "HEAD":
                            self.wfile.write(response.body)
                except CutStream:
                    self.close_connection = True
                except (BrokenPipeError, ConnectionResetError):
                    self.close_connection = True

            do_GET = do_POST = do_PUT = do_DELETE = do_HEAD = _handle

        self._httpd = ThreadingHTTPServer((self.host, self.port), _Handler)
        self._httpd.daemon_threads = True
        self.port = self._httpd.server_address[1]
        self._thread = threading.Thread(target=self._httpd.serve_forever, name=f"{self.name}-httpd", daemon=True)
        self._thread.start()
        return self.port

    def stop(self) -> None:
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()
            self._httpd = None
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"
