"""Per-node job supervision: spawn sandboxed processes, track lifecycle."""

from .manager import JobManager, JobRecord, JobSpec, JobState
from .backend import ContainerBackend, ExecutionBackend, LocalBackend
from .errors import (
    JobmgrError,
    DuplicateJobKey,
    InvalidJobSpec,
    MissingInput,
    QueueFull,
    UnknownJob,
)

__all__ = [
    "JobManager",
    "JobRecord",
    "JobSpec",
    "JobState",
    "ExecutionBackend",
    "LocalBackend",
    "ContainerBackend",
    "JobmgrError",
    "DuplicateJobKey",
    "InvalidJobSpec",
    "MissingInput",
    "QueueFull",
    "UnknownJob",
]
