"""Integrity-checked directory-tree transfer between nodes."""

from .archive import TreeManifest, TransferReceipt, archive_tree, restore_tree
from .errors import (
    FileioError,
    SymlinkRefused,
    UnreadableEntry,
    IntegrityMismatch,
    DestNotEmpty,
    RemoteRejected,
    UnknownJobKey,
    Timeout,
)
from .client import push_tree, pull_tree, fetch_manifest

__all__ = [
    "TreeManifest",
    "TransferReceipt",
    "archive_tree",
    "restore_tree",
    "push_tree",
    "pull_tree",
    "fetch_manifest",
    "FileioError",
    "SymlinkRefused",
    "UnreadableEntry",
    "IntegrityMismatch",
    "DestNotEmpty",
    "RemoteRejected",
    "UnknownJobKey",
    "Timeout",
]
