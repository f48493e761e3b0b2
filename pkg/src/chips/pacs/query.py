"""Query filters: exact, ``*`` wildcard, and date-range matching."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .corpus import SeriesInfo, StudyInfo
from .errors import BadFilterKeyword

QUERYABLE_KEYWORDS = frozenset({
    "PatientID", "PatientSex", "StudyDate", "Modality", "StudyDescription",
    "StudyInstanceUID", "SeriesInstanceUID",
})

# keywords whose values live on the series, not the study
SERIES_KEYWORDS = frozenset({"Modality", "SeriesInstanceUID"})

_DATE_RANGE_RE = re.compile(r"^(\d{8})-(\d{8})$")


@dataclass
class QuerySpec:
    level: str = "STUDY"  # STUDY or SERIES
    filters: dict[str, str] = field(default_factory=dict)

    def validate(self) -> None:
        if self.level not in ("STUDY", "SERIES"):
            raise BadFilterKeyword(f"bad query level {self.level!r}")
        for keyword in self.filters:
            if keyword not in QUERYABLE_KEYWORDS:
                raise BadFilterKeyword(f"{keyword!r} is not queryable")

    def to_json(self) -> dict:
        return {"level": self.level, "filters": dict(self.filters)}

    @classmethod
    def from_json(cls, obj: dict) -> "QuerySpec":
        return cls(level=obj.get("level", "STUDY"), filters=dict(obj.get("filters", {})))


def value_matches(value: str, pattern: str) -> bool:
    range_match = _DATE_RANGE_RE.match(pattern)
    if range_match:
        return range_match.group(1) <= value <= range_match.group(2)
    if "*" in pattern:
        regex = ".*".join(re.escape(part) for part in pattern.split("*"))
        return re.fullmatch(regex, value) is not None
    return value == pattern


def _study_value(study: StudyInfo, keyword: str) -> str:
    return {
        "PatientID": study.patient_id,
        "PatientSex": study.patient_sex,
        "StudyDate": study.study_date,
        "StudyDescription": study.description,
        "StudyInstanceUID": study.study_uid,
    }[keyword]


def _series_value(series: SeriesInfo, keyword: str) -> str:
    return {"Modality": series.modality, "SeriesInstanceUID": series.series_uid}[keyword]


def series_matches(series: SeriesInfo, filters: dict[str, str]) -> bool:
    return all(
        value_matches(_series_value(series, kw), pat)
        for kw, pat in filters.items()
        if kw in SERIES_KEYWORDS
    )


def study_matches(study: StudyInfo, filters: dict[str, str]) -> bool:
    """Conjunction over all filters; series keywords match if any series does."""
    for keyword, pattern in filters.items():
        if keyword in SERIES_KEYWORDS:
            if not any(value_matches(_series_value(s, keyword), pattern) for s in study.series):
                return False
        elif not value_matches(_study_value(study, keyword), pattern):
            return False
    return True


def filter_series(study: StudyInfo, spec: QuerySpec) -> list[SeriesInfo]:
    """Series to report: all of them at STUDY level, matching ones at SERIES level."""
    if spec.level == "STUDY":
        return list(study.series)
    return [s for s in study.series if series_matches(s, spec.filters)]
