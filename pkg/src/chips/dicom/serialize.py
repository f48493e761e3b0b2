"""Explicit VR little endian serializer (inverse of parse).

Always emits a full file: 128 zero bytes, ``DICM``, a minimal meta group
(group length + transfer syntax UID), then the body. Output depends only on
dataset content, so equal datasets serialize to identical bytes.
"""

from __future__ import annotations

import struct

from .dataset import DicomDataset, DicomElement
from .errors import OddLengthValue
from .parse import EXPLICIT_VR_LE_UID
from .tags import LONG_LENGTH_VRS

_ITEM_TAG = struct.pack("<HH", 0xFFFE, 0xE000)


def _encode_element(element: DicomElement) -> bytes:
    if element.vr == "SQ":
        body = b"".join(
            _ITEM_TAG + struct.pack("<L", len(item_bytes)) + item_bytes
            for item_bytes in (_encode_body(item) for item in element.items)
        )
        raw = body
    else:
        raw = element.raw
        if len(raw) % 2:
            raise OddLengthValue(f"{element.tag} has odd length {len(raw)}")
    head = struct.pack("<HH", element.tag.group, element.tag.element)
    vr = element.vr.encode("ascii")
    if element.vr in LONG_LENGTH_VRS:
        return head + vr + b"\x00\x00" + struct.pack("<L", len(raw)) + raw
    if len(raw) > 0xFFFF:
        raise ValueError(f"{element.tag} ({element.vr}) value too long for 16-bit length")
    return head + vr + struct.pack("<H", len(raw)) + raw


def _encode_body(dataset: DicomDataset) -> bytes:
    return b"".join(_encode_element(element) for element in dataset)


def _meta_group() -> bytes:
    uid = EXPLICIT_VR_LE_UID.encode("ascii")
    if len(uid) % 2:
        uid += b"\x00"
    transfer_syntax = struct.pack("<HH", 0x0002, 0x0010) + b"UI" + struct.pack("<H", len(uid)) + uid
    group_length = (
        struct.pack("<HH", 0x0002, 0x0000) + b"UL" + struct.pack("<H", 4)
        + struct.pack("<L", len(transfer_syntax))
    )
    return group_length + transfer_syntax


def serialize_dataset(dataset: DicomDataset) -> bytes:
    dataset.validate()
    return b"\x00" * 128 + b"DICM" + _meta_group() + _encode_body(dataset)
