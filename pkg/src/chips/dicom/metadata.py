"""Flatten dataset tags into typed key/value metadata records."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

from .dataset import DicomDataset
from .tags import BINARY_NUMERIC_VRS, BYTES_VRS, keyword_for_tag

Value = Union[str, int, float]

SOURCE_DICOM = "DICOM"
SOURCE_ANALYSIS = "ANALYSIS"

RAW_SKIPPED_SUFFIX = ".raw_skipped"


@dataclass
class MetadataRecord:
    """Typed key/value projection keyed to an image record.

    ``image_id`` joins records across sources (DICOM tags vs. analysis
    results); ``provenance`` is the series UID or plugin-instance id the
    entries came from.
    """

    image_id: str
    source: str  # SOURCE_DICOM or SOURCE_ANALYSIS
    provenance: str
    entries: dict[str, Value] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "source": self.source,
            "provenance": self.provenance,
            "entries": dict(self.entries),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MetadataRecord":
        return cls(
            image_id=obj["image_id"],
            source=obj["source"],
            provenance=obj["provenance"],
            entries=dict(obj.get("entries", {})),
        )


_INT_VRS = {"US", "UL", "SS", "SL", "IS"}
_REAL_VRS = {"DS", "FL", "FD"}


def _decode_value(element) -> Value:
    """Typed value for one element; raises on undecodable content."""
    if element.vr in BINARY_NUMERIC_VRS:
        numbers = element.numbers
        if len(numbers) == 1:
            value = numbers[0]
            return int(value) if element.vr in _INT_VRS else float(value)
        # multi-valued: keep the conventional backslash-joined text form
        return "\\".join(str(n) for n in numbers)
    text = element.text
    if element.vr in ("DS", "IS") and text:
        if "\\" in text:
            return text
        return int(text) if element.vr == "IS" else float(text)
    return text


def extract_metadata(
    dataset: DicomDataset, image_id: str = "", provenance: str = ""
) -> MetadataRecord:
    """One entry per non-binary, non-sequence element.

    OB/OW/UN and SQ elements are skipped. Numeric VRs decode to typed
    numbers; values that fail to decode are counted under
    ``<keyword>.raw_skipped`` instead of aborting the extraction.
    """
    record = MetadataRecord(image_id=image_id, source=SOURCE_DICOM, provenance=provenance)
    for element in dataset:
        if element.vr == "SQ" or element.vr in BYTES_VRS:
            continue
        key = keyword_for_tag(element.tag)
        try:
            record.entries[key] = _decode_value(element)
        except ValueError:
            skip_key = key + RAW_SKIPPED_SUFFIX
            count = record.entries.get(skip_key, 0)
            record.entries[skip_key] = int(count) + 1
    return record
