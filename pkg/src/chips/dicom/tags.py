"""Tags, the supported VR set, and a dictionary of common tag keywords."""

from __future__ import annotations

import re
from dataclasses import dataclass

SUPPORTED_VRS = frozenset({
    "AE", "AS", "CS", "DA", "DS", "DT", "FL", "FD", "IS", "LO", "LT", "OB",
    "OW", "PN", "SH", "SL", "SQ", "SS", "ST", "TM", "UI", "UL", "UN", "US",
    "UT",
})

# VRs whose explicit encoding uses 2 reserved bytes + a 4-byte length field;
# all others use a 2-byte length field (DICOM PS3.5 explicit VR layout).
LONG_LENGTH_VRS = frozenset({"OB", "OW", "SQ", "UN", "UT"})

STRING_VRS = frozenset({
    "AE", "AS", "CS", "DA", "DS", "DT", "IS", "LO", "LT", "PN", "SH", "ST",
    "TM", "UI", "UT",
})

# struct format letter and unit byte size for fixed-width binary numeric VRs
BINARY_NUMERIC_VRS = {
    "US": ("H", 2),
    "UL": ("L", 4),
    "SS": ("h", 2),
    "SL": ("l", 4),
    "FL": ("f", 4),
    "FD": ("d", 8),
}

BYTES_VRS = frozenset({"OB", "OW", "UN"})

_TAG_TEXT_RE = re.compile(r"^\(([0-9A-Fa-f]{4}),([0-9A-Fa-f]{4})\)$")


@dataclass(frozen=True, order=True)
class DicomTag:
    """A (group, element) tag pair, ordered by group then element."""

    group: int
    element: int

    def __post_init__(self):
        for part in (self.group, self.element):
            if not 0 <= part <= 0xFFFF:
                raise ValueError(f"tag component out of 16-bit range: {part:#x}")

    def __str__(self) -> str:
        return f"({self.group:04X},{self.element:04X})"

    @classmethod
    def from_text(cls, text: str) -> "DicomTag":
        m = _TAG_TEXT_RE.match(text.strip())
        if not m:
            raise ValueError(f"not a tag rendering: {text!r}")
        return cls(int(m.group(1), 16), int(m.group(2), 16))


def T(group: int, element: int) -> DicomTag:
    return DicomTag(group, element)


# Common tags only; unknown tags render under their (GGGG,EEEE) text.
_DICTIONARY: dict[DicomTag, tuple[str, str]] = {
    T(0x0002, 0x0000): ("FileMetaInformationGroupLength", "UL"),
    T(0x0002, 0x0001): ("FileMetaInformationVersion", "OB"),
    T(0x0002, 0x0002): ("MediaStorageSOPClassUID", "UI"),
    T(0x0002, 0x0003): ("MediaStorageSOPInstanceUID", "UI"),
    T(0x0002, 0x0010): ("TransferSyntaxUID", "UI"),
    T(0x0008, 0x0005): ("SpecificCharacterSet", "CS"),
    T(0x0008, 0x0008): ("ImageType", "CS"),
    T(0x0008, 0x0016): ("SOPClassUID", "UI"),
    T(0x0008, 0x0018): ("SOPInstanceUID", "UI"),
    T(0x0008, 0x0020): ("StudyDate", "DA"),
    T(0x0008, 0x0021): ("SeriesDate", "DA"),
    T(0x0008, 0x0030): ("StudyTime", "TM"),
    T(0x0008, 0x0050): ("AccessionNumber", "SH"),
    T(0x0008, 0x0060): ("Modality", "CS"),
    T(0x0008, 0x0070): ("Manufacturer", "LO"),
    T(0x0008, 0x0080): ("InstitutionName", "LO"),
    T(0x0008, 0x0090): ("ReferringPhysicianName", "PN"),
    T(0x0008, 0x1030): ("StudyDescription", "LO"),
    T(0x0008, 0x103E): ("SeriesDescription", "LO"),
    T(0x0010, 0x0010): ("PatientName", "PN"),
    T(0x0010, 0x0020): ("PatientID", "LO"),
    T(0x0010, 0x0030): ("PatientBirthDate", "DA"),
    T(0x0010, 0x0040): ("PatientSex", "CS"),
    T(0x0010, 0x1000): ("OtherPatientIDs", "LO"),
    T(0x0010, 0x1010): ("PatientAge", "AS"),
    T(0x0010, 0x1030): ("PatientWeight", "DS"),
    T(0x0010, 0x1040): ("PatientAddress", "LO"),
    T(0x0018, 0x0020): ("ScanningSequence", "CS"),
    T(0x0018, 0x0050): ("SliceThickness", "DS"),
    T(0x0018, 0x0080): ("RepetitionTime", "DS"),
    T(0x0018, 0x0081): ("EchoTime", "DS"),
    T(0x0018, 0x0087): ("MagneticFieldStrength", "DS"),
    T(0x0018, 0x1030): ("ProtocolName", "LO"),
    T(0x0020, 0x000D): ("StudyInstanceUID", "UI"),
    T(0x0020, 0x000E): ("SeriesInstanceUID", "UI"),
    T(0x0020, 0x0010): ("StudyID", "SH"),
    T(0x0020, 0x0011): ("SeriesNumber", "IS"),
    T(0x0020, 0x0013): ("InstanceNumber", "IS"),
    T(0x0020, 0x1002): ("ImagesInAcquisition", "IS"),
    T(0x0028, 0x0002): ("SamplesPerPixel", "US"),
    T(0x0028, 0x0010): ("Rows", "US"),
    T(0x0028, 0x0011): ("Columns", "US"),
    T(0x0028, 0x0030): ("PixelSpacing", "DS"),
    T(0x0028, 0x0100): ("BitsAllocated", "US"),
    T(0x0040, 0x0275): ("RequestAttributesSequence", "SQ"),
    T(0x7FE0, 0x0010): ("PixelData", "OB"),
}

_KEYWORD_TO_TAG = {keyword: tag for tag, (keyword, _vr) in _DICTIONARY.items()}


def keyword_for_tag(tag: DicomTag) -> str:
    """Canonical keyword, falling back to the (GGGG,EEEE) rendering."""
    entry = _DICTIONARY.get(tag)
    return entry[0] if entry else str(tag)


def tag_for_keyword(keyword: str) -> DicomTag:
    tag = _KEYWORD_TO_TAG.get(keyword)
    if tag is None:
        raise KeyError(f"unknown tag keyword: {keyword!r}")
    return tag


def vr_for_tag(tag: DicomTag) -> str | None:
    entry = _DICTIONARY.get(tag)
    return entry[1] if entry else None
