"""Errors raised by the core backend."""

from ..errors import ChipsError


class CoreError(ChipsError):
    """Base class for core-backend failures."""


class AuthRequired(CoreError):
    http_status = 401


class InvalidLogin(CoreError):
    http_status = 401


class NotAuthorized(CoreError):
    http_status = 403


class UnknownUser(CoreError):
    http_status = 404


class UnknownFeed(CoreError):
    http_status = 404


class UnknownPlugin(CoreError):
    http_status = 404


class UnknownInstance(CoreError):
    http_status = 404


class DuplicateStudyFeed(CoreError):
    http_status = 409


class DuplicatePlugin(CoreError):
    http_status = 409


class SchemaInvalid(CoreError):
    """Plugin descriptor parameter schema is malformed."""


class ParamValidation(CoreError):
    """Supplied parameter values do not satisfy the descriptor schema."""


class ParentNotReady(CoreError):
    """Parent node has not reached SUCCESS."""

    http_status = 409


class BadComparator(CoreError):
    """Metadata query uses an unknown comparator."""


class MalformedResults(CoreError):
    """A results file row has the wrong arity (reported, row skipped)."""
