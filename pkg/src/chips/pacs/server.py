"""The PACS simulator: authenticated query and framed retrieve streaming.

Retrieve wire format (documented in docs/wire-formats.md): a chunked HTTP
body carrying one frame per instance -- 4-byte big-endian payload length,
the payload, a 32-byte SHA-256 of the payload -- closed by a zero-length
terminator frame so clients can tell a clean end from truncation.
"""

from __future__ import annotations

import argparse
import hashlib
import hmac
import json
import logging
import secrets
import struct
import threading
import time
from pathlib import Path

from ..httpd import ApiServer, CutStream, Request, Response, chunked_response, json_response
from .corpus import StudyInfo, load_manifest
from .errors import InvalidCredentials, NotAuthorizedScope, TokenExpired, UnknownStudy
from .query import QuerySpec, filter_series, study_matches

logger = logging.getLogger(__name__)

SCOPE_QUERY = "QUERY"
SCOPE_RETRIEVE = "RETRIEVE"
TERMINATOR = struct.pack(">I", 0) + hashlib.sha256(b"").digest()


class _FaultHooks:
    """Transit fault injection for tests: flip a payload byte or cut the stream."""

    def __init__(self, flip_byte_in_instance: int | None = None,
                 cut_after_instances: int | None = None):
        self.flip_byte_in_instance = flip_byte_in_instance
        self.cut_after_instances = cut_after_instances


class PacsServer:
    def __init__(
        self,
        corpus_dir: Path | str,
        credentials: dict[str, str],
        host: str = "127.0.0.1",
        port: int = 0,
        token_ttl_s: float = 3600.0,
        clock=time.time,
        fault_flip_byte_in_instance: int | None = None,
        fault_cut_after_instances: int | None = None,
    ):
        self.corpus_dir = Path(corpus_dir)
        self.credentials = dict(credentials)
        self.token_ttl_s = token_ttl_s
        self.clock = clock
        self.faults = _FaultHooks(fault_flip_byte_in_instance, fault_cut_after_instances)
        self.studies: dict[str, StudyInfo] = {
            s.study_uid: s for s in load_manifest(self.corpus_dir)
        }
        self._tokens: dict[str, tuple[float, frozenset[str]]] = {}
        self._token_lock = threading.Lock()
        self.api = ApiServer(host=host, port=port, name="pacs")
        self.api.add_route("POST", "/auth", self._auth)
        self.api.add_route("POST", "/query", self._query)
        self.api.add_route("GET", "/retrieve/{study_uid}", self._retrieve)

    # -- auth ------------------------------------------------------------------

    def _auth(self, request: Request) -> Response:
        body = request.json()
        account = str(body.get("id", ""))
        secret = str(body.get("secret", ""))
        stored = self.credentials.get(account)
        # constant-time compare; unknown accounts burn the same comparison
        reference = stored if stored is not None else secrets.token_hex(16)
        ok = hmac.compare_digest(reference.encode(), secret.encode())
        if stored is None or not ok:
            raise InvalidCredentials("authentication failed")
        token = secrets.token_hex(16)
        expiry = self.clock() + self.token_ttl_s
        with self._token_lock:
            self._tokens[token] = (expiry, frozenset({SCOPE_QUERY, SCOPE_RETRIEVE}))
        return json_response({"token": token, "expires_at": expiry,
                              "scopes": [SCOPE_QUERY, SCOPE_RETRIEVE]})

    def _check_token(self, request: Request, scope: str) -> None:
        token = request.bearer_token()
        with self._token_lock:
            entry = self._tokens.get(token)
        if entry is None:
            raise TokenExpired("missing or unknown token")
        expiry, scopes = entry
        if self.clock() >= expiry:
            raise TokenExpired("token expired")
        if scope not in scopes:
            raise NotAuthorizedScope(f"token lacks {scope}")

    # -- query -------------------------------------------------------------------

    def _query(self, request: Request) -> Response:
        self._check_token(request, SCOPE_QUERY)
        spec = QuerySpec.from_json(request.json())
        spec.validate()
        results = []
        for study_uid in sorted(self.studies):
            study = self.studies[study_uid]
            if not study_matches(study, spec.filters):
                continue
            series = filter_series(study, spec)
            if spec.level == "SERIES" and not series:
                continue
            results.append({
                "study_uid": study.study_uid,
                "patient_sex": study.patient_sex,
                "patient_age": study.patient_age,
                "study_date": study.study_date,
                "description": study.description,
                "series": [
                    {
                        "series_uid": s.series_uid,
                        "modality": s.modality,
                        "instance_count": s.instance_count,
                    }
                    for s in series
                ],
            })
        return json_response({"studies": results})

    # -- retrieve ------------------------------------------------------------------

    def _retrieve(self, request: Request) -> Response:
        self._check_token(request, SCOPE_RETRIEVE)
        study = self.studies.get(request.path_params["study_uid"])
        if study is None:
            raise UnknownStudy(f"no study {request.path_params['study_uid']!r}")
        faults = self.faults

        def stream():
            sent = 0
            for series in sorted(study.series, key=lambda s: s.series_uid):
                for rel in series.files:
                    payload = (self.corpus_dir / rel).read_bytes()
                    digest = hashlib.sha256(payload).digest()
                    if faults.flip_byte_in_instance is not None and sent == faults.flip_byte_in_instance:
                        corrupted = bytearray(payload)
                        corrupted[len(corrupted) // 2] ^= 0x01
                        payload = bytes(corrupted)  # digest still covers the original
                    yield struct.pack(">I", len(payload)) + payload + digest
                    sent += 1
                    if faults.cut_after_instances is not None and sent >= faults.cut_after_instances:
                        raise CutStream()
            yield TERMINATOR

        return chunked_response(stream())

    # -- lifecycle -------------------------------------------------------------------

    def start(self) -> int:
        return self.api.start()

    def stop(self) -> None:
        self.api.stop()

    @property
    def url(self) -> str:
        return self.api.url


def load_cred_file(path: Path | str) -> dict[str, str]:
    """JSON object mapping account id -> secret."""
    with open(path, "r", encoding="utf-8") as fh:
        creds = json.load(fh)
    if not isinstance(creds, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in creds.items()
    ):
        raise ValueError("cred file must be a JSON object of id -> secret")
    return creds


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pacs-sim", description="simulated hospital PACS")
    parser.add_argument("--corpus", required=True, help="corpus directory with manifest.jsonl")
    parser.add_argument("--cred-file", required=True, help="JSON id->secret table")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8054)
    parser.add_argument("--token-ttl", type=float, default=3600.0)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    server = PacsServer(
        args.corpus, load_cred_file(args.cred_file),
        host=args.host, port=args.port, token_ttl_s=args.token_ttl,
    )
    port = server.start()
    logger.info("pacs-sim serving %d studies on port %d", len(server.studies), port)
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
