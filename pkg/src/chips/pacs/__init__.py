"""Simulated hospital PACS node and the pull client with on-the-fly anonymization."""

from .corpus import SeriesInfo, StudyInfo, build_corpus, load_manifest
from .query import QuerySpec, study_matches, filter_series
from .server import PacsServer
from .client import PullReceipt, authenticate, query_studies, pull_study
from .errors import (
    PacsError,
    InvalidCredentials,
    TokenExpired,
    NotAuthorizedScope,
    BadFilterKeyword,
    UnknownStudy,
    DuplicatePull,
    PartialPull,
)

__all__ = [
    "SeriesInfo",
    "StudyInfo",
    "build_corpus",
    "load_manifest",
    "QuerySpec",
    "study_matches",
    "filter_series",
    "PacsServer",
    "PullReceipt",
    "authenticate",
    "query_studies",
    "pull_study",
    "PacsError",
    "InvalidCredentials",
    "TokenExpired",
    "NotAuthorizedScope",
    "BadFilterKeyword",
    "UnknownStudy",
    "DuplicatePull",
    "PartialPull",
]
