"""Deterministic framed tree archive with a per-file hash manifest.

Layout (all integers big-endian, documented in docs/wire-formats.md):

    magic "CHIPTREE" + version byte 0x01
    one 'D' frame per directory, sorted:  'D' u16 pathlen path
    one 'F' frame per file, sorted:       'F' u16 pathlen path u64 size bytes sha256
    manifest trailer:                     'M' u32 jsonlen {"manifest": ..., "dirs": [...]}

The trailer repeats the per-file manifest and the full directory list, so a
restore can verify every frame (including directory frames) against it.
Archive bytes are a pure function of tree content: fixed order, no
timestamps, no ownership. The hash is SHA-256 throughout; manifests store
lowercase hex.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import struct
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DestNotEmpty, IntegrityMismatch, SymlinkRefused, UnreadableEntry

MAGIC = b"CHIPTREE"
VERSION = 1


def _hash_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class ManifestEntry:
    path: str  # relative, '/'-separated, no '..'
    size: int
    digest: str  # sha256 hex of file content


@dataclass
class TreeManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        self.entries = sorted(self.entries, key=lambda e: e.path)
        for entry in self.entries:
            parts = entry.path.split("/")
            if entry.path.startswith("/") or ".." in parts or "" in parts:
                raise ValueError(f"bad manifest path: {entry.path!r}")

    @property
    def tree_hash(self) -> str:
        lines = "".join(f"{e.path}\t{e.size}\t{e.digest}\n" for e in self.entries)
        return _hash_bytes(lines.encode("utf-8"))

    @property
    def total_size(self) -> int:
        return sum(e.size for e in self.entries)

    def to_json(self) -> dict:
        return {
            "entries": [[e.path, e.size, e.digest] for e in self.entries],
            "tree_hash": self.tree_hash,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TreeManifest":
        manifest = cls([ManifestEntry(p, s, d) for p, s, d in obj.get("entries", [])])
        declared = obj.get("tree_hash")
        if declared is not None and declared != manifest.tree_hash:
            raise IntegrityMismatch("manifest tree hash does not match its entries")
        return manifest

    @classmethod
    def for_dir(cls, root: Path) -> "TreeManifest":
        files, _dirs = _scan_tree(Path(root))
        entries = []
        for rel, full in files:
            data = _read_file(full)
            entries.append(ManifestEntry(rel, len(data), _hash_bytes(data)))
        return cls(entries)


@dataclass
class TransferReceipt:
    job_key: str
    direction: str  # "PUSH" or "PULL"
    manifest: TreeManifest
    bytes_transferred: int
    duration_s: float


def _scan_tree(root: Path) -> tuple[list[tuple[str, Path]], list[str]]:
    """Sorted (relpath, fullpath) files and sorted relpath dirs under root."""
    if not root.is_dir():
        raise UnreadableEntry(f"not a directory: {root}")
    files: list[tuple[str, Path]] = []
    dirs: list[str] = []
    for current, dirnames, filenames in os.walk(root, followlinks=False):
        current_path = Path(current)
        for name in dirnames:
            full = current_path / name
            if full.is_symlink():
                raise SymlinkRefused(f"symlink in tree: {full}")
            dirs.append((full.relative_to(root)).as_posix())
        for name in filenames:
            full = current_path / name
            if full.is_symlink():
                raise SymlinkRefused(f"symlink in tree: {full}")
            if not full.is_file():
                raise UnreadableEntry(f"not a regular file: {full}")
            files.append(((full.relative_to(root)).as_posix(), full))
    files.sort(key=lambda pair: pair[0])
    dirs.sort()
    return files, dirs


def _read_file(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as exc:
        raise UnreadableEntry(f"cannot read {path}: {exc}") from exc


def archive_tree(root: Path | str) -> tuple[bytes, TreeManifest]:
    """Archive a directory tree; identical trees yield identical bytes."""
    root = Path(root)
    files, dirs = _scan_tree(root)
    parts: list[bytes] = [MAGIC, bytes([VERSION])]
    entries: list[ManifestEntry] = []
    for rel in dirs:
        encoded = rel.encode("utf-8")
        parts.append(b"D" + struct.pack(">H", len(encoded)) + encoded)
    for rel, full in files:
        data = _read_file(full)
        digest = hashlib.sha256(data).digest()
        encoded = rel.encode("utf-8")
        parts.append(
            b"F" + struct.pack(">H", len(encoded)) + encoded
            + struct.pack(">Q", len(data)) + data + digest
        )
        entries.append(ManifestEntry(rel, len(data), digest.hex()))
    manifest = TreeManifest(entries)
    trailer = json.dumps(
        {"manifest": manifest.to_json(), "dirs": dirs}, sort_keys=True
    ).encode("utf-8")
    parts.append(b"M" + struct.pack(">I", len(trailer)) + trailer)
    return b"".join(parts), manifest


class _ArchiveReader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise IntegrityMismatch("archive truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk


def peek_manifest(archive: bytes) -> TreeManifest:
    """Read the per-file manifest out of an archive's trailer without restoring."""
    reader = _ArchiveReader(archive)
    try:
        if reader.take(len(MAGIC)) != MAGIC:
            raise IntegrityMismatch("bad archive magic")
        if reader.take(1)[0] != VERSION:
            raise IntegrityMismatch("unsupported archive version")
        while reader.pos < len(archive):
            kind = reader.take(1)
            if kind == b"D":
                (path_len,) = struct.unpack(">H", reader.take(2))
                reader.take(path_len)
            elif kind == b"F":
                (path_len,) = struct.unpack(">H", reader.take(2))
                reader.take(path_len)
                (size,) = struct.unpack(">Q", reader.take(8))
                reader.take(size + 32)
            elif kind == b"M":
                (json_len,) = struct.unpack(">I", reader.take(4))
                trailer = json.loads(reader.take(json_len).decode("utf-8"))
                return TreeManifest.from_json(trailer["manifest"])
            else:
                raise IntegrityMismatch(f"unknown frame kind {kind!r}")
    except IntegrityMismatch:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise IntegrityMismatch(f"malformed archive: {exc}") from exc
    raise IntegrityMismatch("archive lacks a manifest trailer")


def _safe_join(dest: Path, rel: str) -> Path:
    parts = rel.split("/")
    if rel.startswith("/") or ".." in parts or "" in parts:
        raise IntegrityMismatch(f"unsafe path in archive: {rel!r}")
    return dest.joinpath(*parts)


def restore_tree(archive: bytes, manifest: TreeManifest, dest: Path | str) -> TransferReceipt:
    """Verify every hash, then commit all-or-nothing via staging + rename."""
    dest = Path(dest)
    if dest.exists() and (not dest.is_dir() or any(dest.iterdir())):
        raise DestNotEmpty(f"destination not empty: {dest}")

    started = time.monotonic()
    dest.parent.mkdir(parents=True, exist_ok=True)
    staging = dest.parent / f".{dest.name}.staging-{uuid.uuid4().hex[:8]}"
    staging.mkdir()
    try:
        try:
            restored = _unpack(archive, staging)
        except IntegrityMismatch:
            raise
        except (ValueError, TypeError, KeyError, OSError) as exc:
            # desynced frames, bad paths, undecodable or malformed trailer json
            raise IntegrityMismatch(f"malformed archive: {exc}") from exc
        if restored.to_json() != manifest.to_json():
            raise IntegrityMismatch("restored tree does not match the expected manifest")
        if dest.exists():
            dest.rmdir()  # verified empty above
        os.rename(staging, dest)
    except Exception:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    return TransferReceipt(
        job_key="",
        direction="PULL",
        manifest=manifest,
        bytes_transferred=len(archive),
        duration_s=time.monotonic() - started,
    )


def _unpack(archive: bytes, staging: Path) -> TreeManifest:
    reader = _ArchiveReader(archive)
    if reader.take(len(MAGIC)) != MAGIC:
        raise IntegrityMismatch("bad archive magic")
    if reader.take(1)[0] != VERSION:
        raise IntegrityMismatch("unsupported archive version")
    entries: list[ManifestEntry] = []
    dirs: list[str] = []
    trailer: dict | None = None
    while reader.pos < len(archive):
        kind = reader.take(1)
        if kind == b"D":
            (path_len,) = struct.unpack(">H", reader.take(2))
            rel = reader.take(path_len).decode("utf-8")
            dirs.append(rel)
            _safe_join(staging, rel).mkdir(parents=True, exist_ok=True)
        elif kind == b"F":
            (path_len,) = struct.unpack(">H", reader.take(2))
            rel = reader.take(path_len).decode("utf-8")
            (size,) = struct.unpack(">Q", reader.take(8))
            data = reader.take(size)
            declared = reader.take(32)
            if hashlib.sha256(data).digest() != declared:
                raise IntegrityMismatch(f"content hash mismatch for {rel}")
            target = _safe_join(staging, rel)
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(data)
            entries.append(ManifestEntry(rel, size, declared.hex()))
        elif kind == b"M":
            (json_len,) = struct.unpack(">I", reader.take(4))
            trailer = json.loads(reader.take(json_len).decode("utf-8"))
            if reader.pos != len(archive):
                raise IntegrityMismatch("trailing bytes after manifest trailer")
        else:
            raise IntegrityMismatch(f"unknown frame kind {kind!r}")
    if trailer is None:
        raise IntegrityMismatch("archive lacks a manifest trailer")
    declared_manifest = TreeManifest.from_json(trailer["manifest"])
    unpacked = TreeManifest(entries)
    if unpacked.to_json() != declared_manifest.to_json():
        raise IntegrityMismatch("file frames do not match the manifest trailer")
    if sorted(dirs) != sorted(trailer.get("dirs", [])):
        raise IntegrityMismatch("directory frames do not match the manifest trailer")
    return unpacked

