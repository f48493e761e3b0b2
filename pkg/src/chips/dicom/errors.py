"""Errors raised by the DICOM layer."""

from ..errors import ChipsError


class DicomError(ChipsError):
    """Base class for DICOM parse/serialize/anonymize failures."""


class TruncatedInput(DicomError):
    """The byte stream ended in the middle of an element."""


class UnsupportedVR(DicomError):
    """Element carries a value representation outside the supported set."""


class UnsupportedTransferSyntax(DicomError):
    """File meta group declares anything other than explicit VR little endian."""


class UndefinedLengthSequence(DicomError):
    """Undefined-length (0xFFFFFFFF) SQ/OB encodings are rejected."""


class OutOfOrderTag(DicomError):
    """Input elements are not strictly ascending by tag."""


class OddLengthValue(DicomError):
    """A value has odd byte length (violates the DICOM even-padding rule)."""


class PolicyViolation(DicomError):
    """An anonymization rule is incompatible with the element it targets."""
