"""Synthetic study corpus: generator, manifest, and loader.

Corpus layout on disk:

    <corpus>/manifest.jsonl       one JSON object per study
    <corpus>/study###/series#/inst#.dcm

The default profile yields two MR studies (both PatientSex F) and one CT
study, so modality queries have both hits and misses out of the box.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from ..dicom import DicomDataset, serialize_dataset


@dataclass
class SeriesInfo:
    series_uid: str
    modality: str
    files: list[str] = field(default_factory=list)  # paths relative to corpus root

    @property
    def instance_count(self) -> int:
        return len(self.files)


@dataclass
class StudyInfo:
    study_uid: str
    patient_id: str
    patient_name: str
    patient_sex: str
    patient_age: str
    patient_birth_date: str
    study_date: str
    description: str
    accession: str
    institution: str
    physician: str
    series: list[SeriesInfo] = field(default_factory=list)

    def validate(self) -> None:
        for series in self.series:
            if series.instance_count < 1:
                raise ValueError(f"series {series.series_uid} lists no instances")

    def to_json(self) -> dict:
        return {
            "study_uid": self.study_uid,
            "patient_id": self.patient_id,
            "patient_name": self.patient_name,
            "patient_sex": self.patient_sex,
            "patient_age": self.patient_age,
            "patient_birth_date": self.patient_birth_date,
            "study_date": self.study_date,
            "description": self.description,
            "accession": self.accession,
            "institution": self.institution,
            "physician": self.physician,
            "series": [
                {"series_uid": s.series_uid, "modality": s.modality, "files": list(s.files)}
                for s in self.series
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "StudyInfo":
        return cls(
            study_uid=obj["study_uid"],
            patient_id=obj["patient_id"],
            patient_name=obj["patient_name"],
            patient_sex=obj["patient_sex"],
            patient_age=obj["patient_age"],
            patient_birth_date=obj["patient_birth_date"],
            study_date=obj["study_date"],
            description=obj["description"],
            accession=obj["accession"],
            institution=obj["institution"],
            physician=obj["physician"],
            series=[
                SeriesInfo(s["series_uid"], s["modality"], list(s["files"]))
                for s in obj["series"]
            ],
        )


_PROFILES = [
    # (name, sex, age, birth, modality, description)
    ("DOE^JANE", "F", "032Y", "19920314", "MR", "BRAIN MRI T1"),
    ("ROE^MARY", "F", "010M", "20240101", "MR", "FETAL MRI FOLLOWUP"),
    ("BLOGGS^JOE", "M", "054Y", "19700522", "CT", "CHEST CT ROUTINE"),
]

_INSTITUTIONS = ["GENERAL HOSPITAL", "CITY CLINIC", "REGIONAL IMAGING CENTER"]
_PHYSICIANS = ["HOUSE^GREGORY", "GREY^MEREDITH", "WILSON^JAMES"]


def _uid(rng: random.Random) -> str:
    return "1.2.840.99999." + ".".join(str(rng.randint(1, 10**6)) for _ in range(3))


def _instance_dataset(study: StudyInfo, series: SeriesInfo, rng: random.Random,
                      instance_number: int) -> DicomDataset:
    ds = DicomDataset()
    ds.set("SOPInstanceUID", _uid(rng))
    ds.set("StudyDate", study.study_date)
    ds.set("AccessionNumber", study.accession)
    ds.set("Modality", series.modality)
    ds.set("InstitutionName", study.institution)
    ds.set("ReferringPhysicianName", study.physician)
    ds.set("StudyDescription", study.description)
    ds.set("SeriesDescription", f"{series.modality} SERIES")
    ds.set("PatientName", study.patient_name)
    ds.set("PatientID", study.patient_id)
    ds.set("PatientBirthDate", study.patient_birth_date)
    ds.set("PatientSex", study.patient_sex)
    ds.set("PatientAge", study.patient_age)
    ds.set("EchoTime", f"{rng.uniform(2.0, 12.0):.2f}")
    ds.set("StudyInstanceUID", study.study_uid)
    ds.set("SeriesInstanceUID", series.series_uid)
    ds.set("InstanceNumber", str(instance_number))
    ds.set("Rows", 64)
    ds.set("Columns", 64)
    # voxel placeholder: small deterministic blob standing in for pixel data
    ds.set("PixelData", rng.randbytes(256), vr="OB")
    return ds


def build_corpus(
    dest: Path | str,
    studies: int = 3,
    series_per_study: int = 2,
    instances_per_series: int = 3,
    seed: int = 20240501,
) -> list[StudyInfo]:
    """Generate the corpus and its manifest; deterministic for a given seed."""
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    infos: list[StudyInfo] = []
    for index in range(studies):
        if index < len(_PROFILES):
            name, sex, age, birth, modality, description = _PROFILES[index]
        else:
            name = f"TEST^PATIENT{index}"
            sex = rng.choice(["F", "M", "O"])
            age = f"{rng.randint(0, 99):03d}Y"
            birth = f"{rng.randint(1940, 2020)}0{rng.randint(1, 9)}1{rng.randint(0, 9)}"
            modality = rng.choice(["MR", "CT", "US"])
            description = f"STUDY {index}"
        study = StudyInfo(
            study_uid=_uid(rng),
            patient_id=f"PAT-{rng.randint(10**5, 10**6 - 1)}",
            patient_name=name,
            patient_sex=sex,
            patient_age=age,
            patient_birth_date=birth,
            study_date=f"2024{rng.randint(1, 12):02d}{rng.randint(1, 28):02d}",
            description=description,
            accession=f"ACC{rng.randint(10**6, 10**7 - 1)}",
            institution=rng.choice(_INSTITUTIONS),
            physician=rng.choice(_PHYSICIANS),
        )
        for series_index in range(series_per_study):
            series = SeriesInfo(series_uid=_uid(rng), modality=modality)
            for instance_index in range(instances_per_series):
                rel = f"study{index:03d}/series{series_index}/inst{instance_index}.dcm"
                path = dest / rel
                path.parent.mkdir(parents=True, exist_ok=True)
                ds = _instance_dataset(study, series, rng, instance_index + 1)
                path.write_bytes(serialize_dataset(ds))
                series.files.append(rel)
            study.series.append(series)
        infos.append(study)
    with open(dest / "manifest.jsonl", "w", encoding="utf-8") as fh:
        for info in infos:
            fh.write(json.dumps(info.to_json()) + "\n")
    return infos


def load_manifest(corpus_dir: Path | str) -> list[StudyInfo]:
    corpus_dir = Path(corpus_dir)
    infos = []
    with open(corpus_dir / "manifest.jsonl", "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                info = StudyInfo.from_json(json.loads(line))
                info.validate()
                infos.append(info)
    return infos
