"""Central web-entry backend: users, feeds, plugins, workflow trees, metadata index."""

from .errors import (
    CoreError,
    AuthRequired,
    BadComparator,
    DuplicatePlugin,
    DuplicateStudyFeed,
    InvalidLogin,
    MalformedResults,
    NotAuthorized,
    ParamValidation,
    ParentNotReady,
    SchemaInvalid,
    UnknownFeed,
    UnknownInstance,
    UnknownPlugin,
    UnknownUser,
)
from .metadata_index import MetadataIndex, Predicate
from .service import CoreService, CoreConfig
from .api import CoreServer

__all__ = [
    "CoreError",
    "AuthRequired",
    "BadComparator",
    "DuplicatePlugin",
    "DuplicateStudyFeed",
    "InvalidLogin",
    "MalformedResults",
    "NotAuthorized",
    "ParamValidation",
    "ParentNotReady",
    "SchemaInvalid",
    "UnknownFeed",
    "UnknownInstance",
    "UnknownPlugin",
    "UnknownUser",
    "MetadataIndex",
    "Predicate",
    "CoreService",
    "CoreConfig",
    "CoreServer",
]
