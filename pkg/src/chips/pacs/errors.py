"""Errors raised by the PACS simulator and pull client."""

from ..errors import ChipsError


class PacsError(ChipsError):
    """Base class for PACS failures."""


class InvalidCredentials(PacsError):
    """Bad secret or unknown account: reported identically on purpose."""

    http_status = 401


class TokenExpired(PacsError):
    http_status = 401


class NotAuthorizedScope(PacsError):
    """Token lacks the scope this endpoint requires."""

    http_status = 403


class BadFilterKeyword(PacsError):
    """Query filter uses a keyword outside the queryable set."""


class UnknownStudy(PacsError):
    http_status = 404


class DuplicatePull(PacsError):
    """This study (keyed by anonymized study UID) was already pulled."""

    http_status = 409


class PartialPull(PacsError):
    """Some instances failed; the successful ones were kept on disk."""

    def __init__(self, message: str, receipt=None):
        super().__init__(message)
        self.receipt = receipt
