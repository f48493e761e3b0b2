"""Tag extraction into typed metadata entries."""

import random

from chips.dicom import DicomDataset, DicomTag, extract_metadata, make_element
from chips.dicom.metadata import SOURCE_DICOM
from chips.dicom.tags import BYTES_VRS

from datagen import random_dataset


def test_two_text_entries():
    ds = DicomDataset()
    ds.set("PatientSex", "M")
    ds.set("SeriesDescription", "T1 MPRAGE")
    record = extract_metadata(ds, image_id="img1", provenance="series1")
    assert record.source == SOURCE_DICOM
    assert record.entries == {"PatientSex": "M", "SeriesDescription": "T1 MPRAGE"}


def test_ds_decodes_to_real():
    ds = DicomDataset()
    ds.set("EchoTime", "4.2")
    record = extract_metadata(ds)
    assert record.entries == {"EchoTime": 4.2}
    assert isinstance(record.entries["EchoTime"], float)


def test_is_decodes_to_int():
    ds = DicomDataset()
    ds.set("SeriesNumber", "7")
    record = extract_metadata(ds)
    assert record.entries == {"SeriesNumber": 7}
    assert isinstance(record.entries["SeriesNumber"], int)


def test_binary_numeric_vrs_decode():
    ds = DicomDataset()
    ds.set("Rows", 256)
    record = extract_metadata(ds)
    assert record.entries == {"Rows": 256}


def test_empty_dataset_yields_no_entries():
    assert extract_metadata(DicomDataset()).entries == {}


def test_binary_and_sequence_elements_skipped():
    item = DicomDataset()
    item.set("PatientSex", "F")
    ds = DicomDataset()
    ds.set("PatientSex", "M")
    ds.set(DicomTag(0x0040, 0x0275), (item,), vr="SQ")
    ds.set("PixelData", b"\x00\x01\x02\x03", vr="OB")
    record = extract_metadata(ds)
    assert record.entries == {"PatientSex": "M"}


def test_unknown_tag_uses_tag_text_key():
    ds = DicomDataset()
    ds.put(make_element(DicomTag(0x0099, 0x0010), "vendor", vr="LO"))
    record = extract_metadata(ds)
    assert record.entries == {"(0099,0010)": "vendor"}


def test_undecodable_value_counted_as_raw_skipped():
    ds = DicomDataset()
    ds.set("EchoTime", "oops", vr="DS")
    record = extract_metadata(ds)
    assert record.entries == {"EchoTime.raw_skipped": 1}


def test_multivalued_numeric_kept_as_text():
    ds = DicomDataset()
    ds.set("PixelSpacing", "0.5\\0.5")
    record = extract_metadata(ds)
    assert record.entries == {"PixelSpacing": "0.5\\0.5"}


def test_entry_count_matches_supported_elements():
    rng = random.Random(990)
    for _ in range(50):
        ds = random_dataset(rng)
        expected = sum(1 for e in ds if e.vr != "SQ" and e.vr not in BYTES_VRS)
        record = extract_metadata(ds)
        # datagen values always decode, so no .raw_skipped keys appear
        assert len(record.entries) == expected
