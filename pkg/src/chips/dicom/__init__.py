"""DICOM dataset handling: parse, serialize, anonymize, extract metadata.

The supported encoding is explicit VR little endian with defined lengths
only; anything else is rejected at parse time.
"""

from .tags import DicomTag, keyword_for_tag, tag_for_keyword, vr_for_tag
from .dataset import DicomDataset, DicomElement, make_element
from .parse import parse_dataset, parse_file
from .serialize import serialize_dataset
from .anonymize import (
    Action,
    AnonymizationPolicy,
    AnonymizationRecord,
    PolicyRule,
    anonymize_dataset,
    default_policy,
    load_policy_file,
)
from .metadata import MetadataRecord, extract_metadata
from .errors import (
    DicomError,
    TruncatedInput,
    UnsupportedVR,
    UnsupportedTransferSyntax,
    UndefinedLengthSequence,
    OutOfOrderTag,
    OddLengthValue,
    PolicyViolation,
)

__all__ = [
    "DicomTag",
    "DicomDataset",
    "DicomElement",
    "make_element",
    "keyword_for_tag",
    "tag_for_keyword",
    "vr_for_tag",
    "parse_dataset",
    "parse_file",
    "serialize_dataset",
    "Action",
    "PolicyRule",
    "AnonymizationPolicy",
    "AnonymizationRecord",
    "anonymize_dataset",
    "default_policy",
    "load_policy_file",
    "MetadataRecord",
    "extract_metadata",
    "DicomError",
    "TruncatedInput",
    "UnsupportedVR",
    "UnsupportedTransferSyntax",
    "UndefinedLengthSequence",
    "OutOfOrderTag",
    "OddLengthValue",
    "PolicyViolation",
]
