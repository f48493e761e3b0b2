"""Data-cloud pull client: authenticate, retrieve, anonymize before disk.

Instances are anonymized in memory and only then written, so no PHI byte
ever reaches the destination tree. The per-study directory is created
exclusively, which both enforces the empty-destination precondition and
serializes duplicate pulls of the same study.
"""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import requests

from ..dicom import (
    AnonymizationPolicy,
    AnonymizationRecord,
    DicomError,
    MetadataRecord,
    anonymize_dataset,
    extract_metadata,
    parse_dataset,
    serialize_dataset,
)
from ..dicom.anonymize import Action, pseudonym_uid
from ..dicom.tags import tag_for_keyword
from ..errors import error_from_payload
from .errors import DuplicatePull, PacsError, PartialPull
from .query import QuerySpec

logger = logging.getLogger(__name__)

_HASH_LEN = 32
_STUDY_UID_TAG = tag_for_keyword("StudyInstanceUID")


@dataclass
class PullReceipt:
    anon_study_uid: str
    study_dir: str
    instance_count: int = 0
    series_instance_counts: dict[str, int] = field(default_factory=dict)
    metadata_records: list[MetadataRecord] = field(default_factory=list)
    anonymization_records: list[AnonymizationRecord] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "anon_study_uid": self.anon_study_uid,
            "study_dir": self.study_dir,
            "instance_count": self.instance_count,
            "series_instance_counts": dict(self.series_instance_counts),
            "metadata_records": [r.to_json() for r in self.metadata_records],
            "anonymization_records": [r.to_json() for r in self.anonymization_records],
            "failures": list(self.failures),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PullReceipt":
        return cls(
            anon_study_uid=obj["anon_study_uid"],
            study_dir=obj["study_dir"],
            instance_count=obj.get("instance_count", 0),
            series_instance_counts=dict(obj.get("series_instance_counts", {})),
            metadata_records=[MetadataRecord.from_json(r) for r in obj.get("metadata_records", [])],
            anonymization_records=[
                AnonymizationRecord.from_json(r) for r in obj.get("anonymization_records", [])
            ],
            failures=list(obj.get("failures", [])),
        )


def _raise_for(response: requests.Response) -> None:
    if response.status_code >= 400:
        try:
            payload = response.json()
        except ValueError:
            payload = {"error": "RemoteServiceError", "message": response.text[:200]}
        raise error_from_payload(payload)


def authenticate(base_url: str, account: str, secret: str, timeout: float = 15.0) -> str:
    response = requests.post(
        f"{base_url}/auth", json={"id": account, "secret": secret}, timeout=timeout
    )
    _raise_for(response)
    return response.json()["token"]


def query_studies(base_url: str, token: str, spec: QuerySpec, timeout: float = 15.0) -> list[dict]:
    response = requests.post(
        f"{base_url}/query",
        json=spec.to_json(),
        headers={"Authorization": f"Bearer {token}"},
        timeout=timeout,
    )
    _raise_for(response)
    return response.json()["studies"]


class _Truncated(Exception):
    pass


class _StreamReader:
    def __init__(self, response: requests.Response):
        self._chunks = response.iter_content(chunk_size=64 * 1024)
        self._buf = bytearray()
        self._eof = False

    def read_exact(self, n: int) -> bytes:
        while len(self._buf) < n and not self._eof:
            try:
                chunk = next(self._chunks)
            except StopIteration:
                self._eof = True
                break
            except (requests.exceptions.ChunkedEncodingError, requests.ConnectionError):
                self._eof = True
                break
            self._buf += chunk
        if len(self._buf) < n:
            raise _Truncated(f"stream ended; wanted {n} bytes, had {len(self._buf)}")
        out = bytes(self._buf[:n])
        del self._buf[:n]
        return out


def expected_anon_study_uid(policy: AnonymizationPolicy, study_uid: str) -> str:
    """The study UID the policy will produce; pulls key their layout on it."""
    rule = policy.rule_for(_STUDY_UID_TAG)
    if rule.action is Action.HASH_UID:
        return pseudonym_uid(policy.salt, study_uid)
    if rule.action is Action.KEEP:
        return study_uid
    if rule.action is Action.REPLACE:
        return rule.arg
    raise PacsError("policy must keep or remap StudyInstanceUID, not remove it")


def receipt_from_study_dir(study_dir: Path | str) -> PullReceipt:
    """Rebuild a receipt for an already-pulled study (no audit records).

    Used when a later caller wants a feed over a study another pull already
    landed on the data node.
    """
    study_dir = Path(study_dir)
    if not study_dir.is_dir():
        raise PacsError(f"no pulled study at {study_dir}")
    receipt = PullReceipt(anon_study_uid=study_dir.name, study_dir=str(study_dir))
    for series_dir in sorted(p for p in study_dir.iterdir() if p.is_dir()):
        files = sorted(series_dir.glob("*.dcm"))
        if not files:
            continue
        receipt.series_instance_counts[series_dir.name] = len(files)
        receipt.instance_count += len(files)
        dataset = parse_dataset(files[0].read_bytes())
        receipt.metadata_records.append(
            extract_metadata(dataset, image_id=study_dir.name, provenance=series_dir.name)
        )
    return receipt


def pull_study(
    base_url: str,
    account: str,
    secret: str,
    study_uid: str,
    policy: AnonymizationPolicy,
    dest_root: Path | str,
    timeout: float = 60.0,
) -> PullReceipt:
    """Pull a study: anonymize every instance in memory, then persist.

    Layout: <dest_root>/<anon study UID>/<anon series UID>/<ordinal>.dcm.
    Raises DuplicatePull when the study directory already exists (including
    leftovers of a previous partial pull, which must be removed explicitly).
    On per-instance failures raises PartialPull carrying the receipt for
    everything that did land.
    """
    token = authenticate(base_url, account, secret, timeout=timeout)
    anon_study_uid = expected_anon_study_uid(policy, study_uid)
    dest_root = Path(dest_root)
    dest_root.mkdir(parents=True, exist_ok=True)
    study_dir = dest_root / anon_study_uid
    try:
        study_dir.mkdir()  # exclusive create doubles as the duplicate lock
    except FileExistsError:
        raise DuplicatePull(f"study already pulled: {anon_study_uid}") from None

    receipt = PullReceipt(anon_study_uid=anon_study_uid, study_dir=str(study_dir))
    series_ordinals: dict[str, int] = {}
    first_per_series: dict[str, object] = {}

    response = requests.get(
        f"{base_url}/retrieve/{study_uid}",
        headers={"Authorization": f"Bearer {token}"},
        stream=True,
        timeout=timeout,
    )
    _raise_for(response)
    reader = _StreamReader(response)

    truncated = False
    index = 0
    while True:
        try:
            (length,) = struct.unpack(">I", reader.read_exact(4))
            if length == 0:
                reader.read_exact(_HASH_LEN)  # terminator digest
                break
            payload = reader.read_exact(length)
            declared = reader.read_exact(_HASH_LEN)
        except _Truncated:
            truncated = True
            break
        index += 1
        if hashlib.sha256(payload).digest() != declared:
            receipt.failures.append(f"instance {index}: integrity hash mismatch in transit")
            continue
        try:
            dataset = parse_dataset(payload)
            anon, anon_record = anonymize_dataset(dataset, policy)
        except DicomError as exc:
            receipt.failures.append(f"instance {index}: {exc}")
            continue
        series_uid = anon.text("SeriesInstanceUID") or "unknown-series"
        ordinal = series_ordinals.get(series_uid, 0) + 1
        series_ordinals[series_uid] = ordinal
        series_dir = study_dir / series_uid
        series_dir.mkdir(exist_ok=True)
        (series_dir / f"{ordinal:04d}.dcm").write_bytes(serialize_dataset(anon))
        receipt.instance_count += 1
        receipt.series_instance_counts[series_uid] = ordinal
        receipt.anonymization_records.append(anon_record)
        if series_uid not in first_per_series:
            first_per_series[series_uid] = anon

    for series_uid, anon in sorted(first_per_series.items()):
        receipt.metadata_records.append(
            extract_metadata(anon, image_id=anon_study_uid, provenance=series_uid)
        )

    if truncated:
        raise PartialPull(
            f"stream truncated after {receipt.instance_count} instances", receipt=receipt
        )
    if receipt.failures:
        raise PartialPull(
            f"{len(receipt.failures)} instance(s) failed; {receipt.instance_count} kept",
            receipt=receipt,
        )
    return receipt
