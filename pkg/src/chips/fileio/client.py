"""Client verbs for the tree-transfer service."""

from __future__ import annotations

import time
from pathlib import Path
from typing import Callable

import requests

from ..errors import error_from_payload
from .archive import TreeManifest, TransferReceipt, archive_tree, restore_tree
from .errors import IntegrityMismatch, Timeout

DEFAULT_TIMEOUT = 60.0


def _raise_for(response: requests.Response) -> None:
    if response.status_code >= 400:
        try:
            payload = response.json()
        except ValueError:
            payload = {"error": "RemoteServiceError", "message": response.text[:200]}
        raise error_from_payload(payload)


def push_tree(
    local_dir: Path | str,
    remote_url: str,
    job_key: str,
    timeout: float = DEFAULT_TIMEOUT,
    mutate: Callable[[bytes], bytes] | None = None,
) -> TransferReceipt:
    """Archive local_dir and push it under the remote's job key.

    ``mutate`` is a fault-injection hook applied to the archive bytes before
    sending (tests corrupt transfers with it).
    """
    started = time.monotonic()
    archive, manifest = archive_tree(local_dir)
    if mutate is not None:
        archive = mutate(archive)
    try:
        response = requests.post(
            f"{remote_url}/api/v1/trees/{job_key}/input", data=archive, timeout=timeout,
        )
    except (requests.Timeout, requests.ConnectionError) as exc:
        raise Timeout(f"push to {remote_url} failed: {exc}") from exc
    _raise_for(response)
    remote_manifest = TreeManifest.from_json(response.json()["manifest"])
    if remote_manifest.tree_hash != manifest.tree_hash:
        raise IntegrityMismatch("remote recomputed a different manifest after push")
    return TransferReceipt(
        job_key=job_key,
        direction="PUSH",
        manifest=manifest,
        bytes_transferred=len(archive),
        duration_s=time.monotonic() - started,
    )


def fetch_manifest(remote_url: str, job_key: str, subdir: str,
                   timeout: float = DEFAULT_TIMEOUT) -> TreeManifest:
    try:
        response = requests.get(
            f"{remote_url}/api/v1/trees/{job_key}/manifest",
            params={"subdir": subdir}, timeout=timeout,
        )
    except (requests.Timeout, requests.ConnectionError) as exc:
        raise Timeout(f"manifest fetch from {remote_url} failed: {exc}") from exc
    _raise_for(response)
    return TreeManifest.from_json(response.json())


def pull_tree(
    remote_url: str,
    job_key: str,
    subdir: str,
    local_dir: Path | str,
    timeout: float = DEFAULT_TIMEOUT,
) -> TransferReceipt:
    """Pull a stored tree and restore it locally, verified against the
    remote's manifest; all-or-nothing on any mismatch or truncation."""
    started = time.monotonic()
    manifest = fetch_manifest(remote_url, job_key, subdir, timeout=timeout)
    try:
        response = requests.get(
            f"{remote_url}/api/v1/trees/{job_key}/{subdir}", stream=True, timeout=timeout,
        )
        _raise_for(response)
        chunks = []
        try:
            for chunk in response.iter_content(chunk_size=64 * 1024):
                chunks.append(chunk)
        except requests.exceptions.ChunkedEncodingError:
            pass  # truncated stream: the archive check below rejects it
        archive = b"".join(chunks)
    except (requests.Timeout, requests.ConnectionError) as exc:
        raise Timeout(f"pull from {remote_url} failed: {exc}") from exc
    receipt = restore_tree(archive, manifest, local_dir)
    receipt.job_key = job_key
    receipt.duration_s = time.monotonic() - started
    return receipt
