"""Errors raised by the job manager."""

from ..errors import ChipsError


class JobmgrError(ChipsError):
    """Base class for job-manager failures."""


class InvalidJobSpec(JobmgrError):
    """Spec violates its invariants (key syntax, empty command, timeout)."""


class DuplicateJobKey(JobmgrError):
    http_status = 409


class MissingInput(JobmgrError):
    """Declared input subdir does not exist under the job root."""


class QueueFull(JobmgrError):
    http_status = 503


class UnknownJob(JobmgrError):
    http_status = 404
