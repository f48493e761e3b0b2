"""Explicit VR little endian parser.

Accepts either a full file (128-byte preamble + ``DICM`` + file meta group)
or a headerless stream starting directly at group 0008; the mode is
auto-detected from the magic. The file meta group is validated (transfer
syntax must be explicit VR LE) and consumed: the returned dataset holds only
body elements. Undefined lengths and out-of-order tags are rejected.
"""

from __future__ import annotations

import struct

from .dataset import DicomDataset, DicomElement
from .errors import (
    OddLengthValue,
    OutOfOrderTag,
    TruncatedInput,
    UndefinedLengthSequence,
    UnsupportedTransferSyntax,
    UnsupportedVR,
)
from .tags import DicomTag, LONG_LENGTH_VRS, SUPPORTED_VRS

EXPLICIT_VR_LE_UID = "1.2.840.10008.1.2.1"
UNDEFINED_LENGTH = 0xFFFFFFFF
_ITEM_TAG = (0xFFFE, 0xE000)


class _Reader:
    def __init__(self, data: bytes, offset: int = 0, end: int | None = None):
        self.data = data
        self.pos = offset
        self.end = len(data) if end is None else end

    @property
    def remaining(self) -> int:
        return self.end - self.pos

    def take(self, n: int) -> bytes:
        if n > self.remaining:
            raise TruncatedInput(f"need {n} bytes at offset {self.pos}, have {self.remaining}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def peek_u16(self) -> int:
        if self.remaining < 2:
            raise TruncatedInput(f"need 2 bytes at offset {self.pos}, have {self.remaining}")
        return struct.unpack_from("<H", self.data, self.pos)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<L", self.take(4))[0]


def _read_element(reader: _Reader) -> DicomElement:
    group = reader.u16()
    element = reader.u16()
    tag = DicomTag(group, element)
    vr = reader.take(2).decode("ascii", errors="replace")
    if vr not in SUPPORTED_VRS:
        raise UnsupportedVR(f"{tag} declares VR {vr!r}")
    if vr in LONG_LENGTH_VRS:
        reader.take(2)  # reserved
        length = reader.u32()
    else:
        length = reader.u16()
    if length == UNDEFINED_LENGTH:
        raise UndefinedLengthSequence(f"{tag} ({vr}) uses undefined length")
    if vr == "SQ":
        return DicomElement(tag, "SQ", b"", tuple(_read_sequence_items(reader, length)))
    if length % 2:
        raise OddLengthValue(f"{tag} has odd length {length}")
    return DicomElement(tag, vr, reader.take(length))


def _read_sequence_items(reader: _Reader, byte_length: int) -> list[DicomDataset]:
    items: list[DicomDataset] = []
    inner = _Reader(reader.data, reader.pos, reader.pos + min(byte_length, reader.remaining))
    if byte_length > reader.remaining:
        raise TruncatedInput(f"sequence of {byte_length} bytes exceeds remaining {reader.remaining}")
    while inner.remaining:
        group, element = inner.u16(), inner.u16()
        if (group, element) != _ITEM_TAG:
            raise UnsupportedTransferSyntax(
                f"expected sequence item tag, found ({group:04X},{element:04X})"
            )
        item_length = inner.u32()
        if item_length == UNDEFINED_LENGTH:
            raise UndefinedLengthSequence("sequence item uses undefined length")
        item_reader = _Reader(inner.data, inner.pos, inner.pos + item_length)
        if item_length > inner.remaining:
            raise TruncatedInput("sequence item exceeds its sequence boundary")
        items.append(_read_dataset(item_reader))
        inner.pos += item_length
    reader.pos = inner.pos
    return items


def _read_dataset(reader: _Reader) -> DicomDataset:
    dataset = DicomDataset()
    previous: DicomTag | None = None
    while reader.remaining:
        element = _read_element(reader)
        if element.tag.group < 0x0008:
            raise UnsupportedTransferSyntax(f"transport-level tag {element.tag} in dataset body")
        if previous is not None and element.tag <= previous:
            raise OutOfOrderTag(f"{element.tag} follows {previous}")
        previous = element.tag
        dataset.put(element)
    return dataset


def _read_meta_group(reader: _Reader) -> None:
    """Consume the group-0002 meta elements and validate the transfer syntax."""
    transfer_syntax: str | None = None
    while reader.remaining >= 2 and reader.peek_u16() == 0x0002:
        element = _read_element(reader)
        if element.tag == DicomTag(0x0002, 0x0010):
            transfer_syntax = element.text
    if transfer_syntax is None:
        raise UnsupportedTransferSyntax("file meta group lacks a transfer syntax UID")
    if transfer_syntax != EXPLICIT_VR_LE_UID:
        raise UnsupportedTransferSyntax(f"unsupported transfer syntax {transfer_syntax!r}")


def parse_dataset(data: bytes) -> DicomDataset:
    """Parse a byte string into a dataset (file or headerless mode)."""
    if len(data) == 0:
        raise TruncatedInput("empty byte stream")
    reader = _Reader(data)
    if len(data) >= 132 and data[128:132] == b"DICM":
        reader.pos = 132
        _read_meta_group(reader)
    elif len(data) >= 2 and struct.unpack_from("<H", data, 0)[0] == 0x0002:
        raise UnsupportedTransferSyntax("meta group without DICM file header")
    return _read_dataset(reader)


def parse_file(path) -> DicomDataset:
    with open(path, "rb") as fh:
        return parse_dataset(fh.read())
