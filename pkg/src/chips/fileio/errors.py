"""Errors raised by the tree-transfer layer."""

from ..errors import ChipsError


class FileioError(ChipsError):
    """Base class for transfer failures."""


class SymlinkRefused(FileioError):
    """Trees may contain regular files and directories only."""


class UnreadableEntry(FileioError):
    """A tree entry could not be read (permissions, special file)."""


class IntegrityMismatch(FileioError):
    """A hash differed during restore; nothing was committed."""


class DestNotEmpty(FileioError):
    """Restore destination already has content."""

    http_status = 409


class RemoteRejected(FileioError):
    """Remote refused the transfer (duplicate job key or invalid request)."""

    http_status = 409


class UnknownJobKey(FileioError):
    """No tree stored under this job key."""

    http_status = 404


class Timeout(FileioError):
    """Remote did not answer within the transfer deadline."""

    http_status = 504
