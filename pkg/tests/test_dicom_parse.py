"""Parser/serializer tests against hand-encoded explicit-VR-LE byte layouts."""

import random
import struct

import pytest

from chips.dicom import (
    DicomDataset,
    DicomTag,
    OddLengthValue,
    OutOfOrderTag,
    TruncatedInput,
    UndefinedLengthSequence,
    UnsupportedTransferSyntax,
    UnsupportedVR,
    parse_dataset,
    serialize_dataset,
)

from datagen import random_dataset

# Hand-encoded oracle bytes: tag (little endian u16 pair), 2-char VR,
# u16 length, value. (0010,0040) CS, length 2, "M ".
PATIENT_SEX_M = b"\x10\x00\x40\x00" + b"CS" + b"\x02\x00" + b"M "

# Minimal meta group as the serializer must emit it: group length (UL 4)
# then TransferSyntaxUID "1.2.840.10008.1.2.1" NUL-padded to 20 bytes.
_TSUID = b"1.2.840.10008.1.2.1\x00"
META_GROUP = (
    b"\x02\x00\x00\x00" + b"UL" + b"\x04\x00" + struct.pack("<L", 8 + len(_TSUID))
    + b"\x02\x00\x10\x00" + b"UI" + struct.pack("<H", len(_TSUID)) + _TSUID
)


def test_parse_single_element_headerless():
    ds = parse_dataset(PATIENT_SEX_M)
    assert len(ds) == 1
    assert ds.text("PatientSex") == "M"
    assert ds["PatientSex"].raw == b"M "


def test_parse_empty_stream_is_truncated():
    with pytest.raises(TruncatedInput):
        parse_dataset(b"")


def test_parse_full_file_with_meta_group():
    data = b"\x00" * 128 + b"DICM" + META_GROUP + PATIENT_SEX_M
    ds = parse_dataset(data)
    assert ds.text("PatientSex") == "M"
    # meta elements are consumed, not part of the dataset
    assert len(ds) == 1


def test_serialize_empty_dataset_is_preamble_plus_meta():
    data = serialize_dataset(DicomDataset())
    assert data[:128] == b"\x00" * 128
    assert data[128:132] == b"DICM"
    assert data[132:] == META_GROUP


def test_serialize_matches_hand_encoding():
    ds = DicomDataset()
    ds.set("PatientSex", "M")
    data = serialize_dataset(ds)
    assert data == b"\x00" * 128 + b"DICM" + META_GROUP + PATIENT_SEX_M


def test_round_trip_simple():
    ds = DicomDataset()
    ds.set("PatientSex", "M")
    assert parse_dataset(serialize_dataset(ds)) == ds


def test_round_trip_sequence_with_one_item():
    item = DicomDataset()
    item.set("PatientSex", "F")
    ds = DicomDataset()
    ds.set(DicomTag(0x0040, 0x0275), (item,), vr="SQ")
    parsed = parse_dataset(serialize_dataset(ds))
    assert parsed == ds
    assert parsed[DicomTag(0x0040, 0x0275)].items[0].text("PatientSex") == "F"


def test_sequence_byte_layout():
    # SQ uses 2 reserved bytes + u32 length; items are (FFFE,E000) + u32 length.
    item = DicomDataset()
    item.set("PatientSex", "F")
    ds = DicomDataset()
    ds.set(DicomTag(0x0040, 0x0275), (item,), vr="SQ")
    body = serialize_dataset(ds)[132 + len(META_GROUP):]
    item_bytes = b"\x10\x00\x40\x00CS\x02\x00F "
    expected = (
        b"\x40\x00\x75\x02" + b"SQ" + b"\x00\x00"
        + struct.pack("<L", 8 + len(item_bytes))
        + b"\xfe\xff\x00\xe0" + struct.pack("<L", len(item_bytes))
        + item_bytes
    )
    assert body == expected


def test_truncated_mid_element():
    with pytest.raises(TruncatedInput):
        parse_dataset(PATIENT_SEX_M[:-1])
    with pytest.raises(TruncatedInput):
        parse_dataset(PATIENT_SEX_M[:6])


def test_unsupported_vr():
    bad = b"\x10\x00\x40\x00" + b"ZZ" + b"\x02\x00M "
    with pytest.raises(UnsupportedVR):
        parse_dataset(bad)


def test_unsupported_transfer_syntax_rejected():
    implicit_le = b"1.2.840.10008.1.2\x00"
    meta = (
        b"\x02\x00\x00\x00UL\x04\x00" + struct.pack("<L", 8 + len(implicit_le))
        + b"\x02\x00\x10\x00UI" + struct.pack("<H", len(implicit_le)) + implicit_le
    )
    with pytest.raises(UnsupportedTransferSyntax):
        parse_dataset(b"\x00" * 128 + b"DICM" + meta + PATIENT_SEX_M)


def test_meta_group_without_header_rejected():
    with pytest.raises(UnsupportedTransferSyntax):
        parse_dataset(META_GROUP + PATIENT_SEX_M)


def test_undefined_length_sequence_rejected():
    data = b"\x40\x00\x75\x02" + b"SQ" + b"\x00\x00" + b"\xff\xff\xff\xff"
    with pytest.raises(UndefinedLengthSequence):
        parse_dataset(data)


def test_undefined_length_ob_rejected():
    data = b"\xe0\x7f\x10\x00" + b"OB" + b"\x00\x00" + b"\xff\xff\xff\xff"
    with pytest.raises(UndefinedLengthSequence):
        parse_dataset(data)


def test_out_of_order_tags_rejected():
    sex = PATIENT_SEX_M
    modality = b"\x08\x00\x60\x00CS\x02\x00MR"
    parse_dataset(modality + sex)  # ascending: fine
    with pytest.raises(OutOfOrderTag):
        parse_dataset(sex + modality)
    with pytest.raises(OutOfOrderTag):
        parse_dataset(sex + sex)  # duplicate tag is also an ordering violation


def test_odd_length_value_rejected_on_parse():
    bad = b"\x10\x00\x40\x00CS\x01\x00M"
    with pytest.raises(OddLengthValue):
        parse_dataset(bad)


def test_odd_length_value_rejected_on_serialize():
    from chips.dicom.dataset import DicomElement

    ds = DicomDataset()
    ds.put(DicomElement(DicomTag(0x0010, 0x0040), "CS", b"M"))
    with pytest.raises(OddLengthValue):
        serialize_dataset(ds)


def test_property_round_trips():
    # parse(serialize(D)) == D and serialize(parse(B)) == B over a seeded corpus
    rng = random.Random(1107)
    for _ in range(120):
        ds = random_dataset(rng)
        data = serialize_dataset(ds)
        parsed = parse_dataset(data)
        assert parsed == ds
        assert serialize_dataset(parsed) == data


def test_parse_output_tags_strictly_ascending():
    rng = random.Random(2214)
    for _ in range(40):
        ds = random_dataset(rng)
        tags = parse_dataset(serialize_dataset(ds)).tags()
        assert tags == sorted(tags)
        assert len(set(tags)) == len(tags)
