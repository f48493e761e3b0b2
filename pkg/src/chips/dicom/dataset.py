"""Dataset and element containers.

A dataset is an ordered map of tag -> element kept strictly ascending by
tag. Elements hold the raw encoded bytes; decoded views (text, numbers,
nested datasets for SQ) are derived on access.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterator, Union

from .errors import OddLengthValue, UnsupportedVR
from .tags import (
    BINARY_NUMERIC_VRS,
    DicomTag,
    STRING_VRS,
    SUPPORTED_VRS,
    tag_for_keyword,
    vr_for_tag,
)

TagLike = Union[DicomTag, str]


def _as_tag(key: TagLike) -> DicomTag:
    if isinstance(key, DicomTag):
        return key
    if key.startswith("("):
        return DicomTag.from_text(key)
    return tag_for_keyword(key)


@dataclass(frozen=True)
class DicomElement:
    """One tagged value. For SQ elements ``items`` holds nested datasets."""

    tag: DicomTag
    vr: str
    raw: bytes = b""
    items: tuple["DicomDataset", ...] = ()

    def __post_init__(self):
        if self.vr not in SUPPORTED_VRS:
            raise UnsupportedVR(f"{self.tag} has unsupported VR {self.vr!r}")
        if self.vr == "SQ":
            if self.raw:
                raise ValueError("SQ elements carry items, not raw bytes")
        elif self.items:
            raise ValueError(f"non-SQ element {self.tag} cannot carry items")

    @property
    def length(self) -> int:
        return len(self.raw)

    @property
    def text(self) -> str:
        """Decoded string value with trailing pad (space/NUL) stripped."""
        if self.vr not in STRING_VRS:
            raise ValueError(f"{self.tag} VR {self.vr} has no text view")
        return self.raw.decode("utf-8", errors="replace").rstrip("\x00 ")

    @property
    def numbers(self) -> list[float] | list[int]:
        """Decoded numeric values for fixed-width binary VRs."""
        fmt, unit = BINARY_NUMERIC_VRS[self.vr]
        if self.length % unit != 0:
            raise ValueError(f"{self.tag} length {self.length} not a multiple of {unit}")
        count = self.length // unit
        return list(struct.unpack(f"<{count}{fmt}", self.raw))


def _pad(value: bytes, vr: str) -> bytes:
    if len(value) % 2 == 0:
        return value
    # UI pads with NUL, other string VRs with space
    return value + (b"\x00" if vr == "UI" else b" ")


def make_element(tag: TagLike, value, vr: str | None = None) -> DicomElement:
    """Build an element from a Python value, padding strings to even length.

    The VR comes from the tag dictionary when not given explicitly.
    """
    tag = _as_tag(tag)
    if vr is None:
        vr = vr_for_tag(tag)
        if vr is None:
            raise UnsupportedVR(f"no dictionary VR for {tag}; pass vr= explicitly")
    if vr == "SQ":
        return DicomElement(tag, "SQ", b"", tuple(value))
    if vr in STRING_VRS:
        if isinstance(value, (int, float)):
            value = str(value)
        raw = value.encode("utf-8") if isinstance(value, str) else bytes(value)
        return DicomElement(tag, vr, _pad(raw, vr))
    if vr in BINARY_NUMERIC_VRS:
        fmt, _unit = BINARY_NUMERIC_VRS[vr]
        values = value if isinstance(value, (list, tuple)) else [value]
        return DicomElement(tag, vr, struct.pack(f"<{len(values)}{fmt}", *values))
    # OB/OW/UN: raw bytes, padded to even with NUL
    raw = bytes(value)
    if len(raw) % 2:
        raw += b"\x00"
    return DicomElement(tag, vr, raw)


@dataclass
class DicomDataset:
    """Ordered element map; iteration yields elements ascending by tag."""

    _elements: dict[DicomTag, DicomElement] = field(default_factory=dict)

    def put(self, element: DicomElement) -> None:
        if element.tag.group < 0x0008:
            raise ValueError(f"group {element.tag.group:04X} is transport-level, not dataset data")
        self._elements[element.tag] = element
        self._elements = dict(sorted(self._elements.items()))

    def set(self, tag: TagLike, value, vr: str | None = None) -> None:
        self.put(make_element(tag, value, vr))

    def remove(self, tag: TagLike) -> None:
        self._elements.pop(_as_tag(tag), None)

    def get(self, tag: TagLike) -> DicomElement | None:
        return self._elements.get(_as_tag(tag))

    def __getitem__(self, tag: TagLike) -> DicomElement:
        element = self.get(tag)
        if element is None:
            raise KeyError(str(_as_tag(tag)))
        return element

    def __contains__(self, tag: TagLike) -> bool:
        return _as_tag(tag) in self._elements

    def text(self, tag: TagLike, default: str = "") -> str:
        element = self.get(tag)
        return element.text if element is not None else default

    def __iter__(self) -> Iterator[DicomElement]:
        return iter(self._elements.values())

    def __len__(self) -> int:
        return len(self._elements)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DicomDataset):
            return NotImplemented
        return self._elements == other._elements

    def validate(self) -> None:
        """Check invariants: ascending tags (by construction) and even lengths."""
        for element in self:
            if element.vr == "SQ":
                for item in element.items:
                    item.validate()
            elif element.length % 2:
                raise OddLengthValue(f"{element.tag} has odd length {element.length}")

    def tags(self) -> list[DicomTag]:
        return list(self._elements.keys())
