"""Errors raised by the dispatcher."""

from ..errors import ChipsError


class DispatcherError(ChipsError):
    """Base class for dispatcher failures."""


class UnknownStep(DispatcherError):
    http_status = 404


class DuplicateStep(DispatcherError):
    http_status = 409


class NoEligibleNode(DispatcherError):
    """No UP node satisfies the required labels."""

    http_status = 503
