"""Policy-driven PHI scrubbing with a deterministic pseudonym UID scheme.

Pseudonym UIDs live under the root ``9.9.`` (not a valid ISO root, so no
real device emits it); a value already under that root is treated as a fixed
point, which makes anonymization idempotent on its own output. Replacement
digests are salted and one-way: the audit record never stores original
values in clear.
"""

from __future__ import annotations

import enum
import hashlib
import re
from dataclasses import dataclass, field

from .dataset import DicomDataset, DicomElement, _pad
from .errors import PolicyViolation
from .tags import STRING_VRS, DicomTag, tag_for_keyword, vr_for_tag

PSEUDO_UID_ROOT = "9.9."
UID_MAX_LEN = 64


class Action(enum.Enum):
    REMOVE = "remove"
    REPLACE = "replace"
    HASH_UID = "hash_uid"
    HASH_TEXT = "hash_text"
    KEEP = "keep"


@dataclass(frozen=True)
class PolicyRule:
    action: Action
    arg: str = ""  # REPLACE: fixed text; HASH_TEXT: rendered prefix


@dataclass
class AnonymizationPolicy:
    policy_id: str
    rules: dict[DicomTag, PolicyRule]
    salt: bytes

    def __post_init__(self):
        for tag, rule in self.rules.items():
            if rule.action is Action.HASH_UID:
                vr = vr_for_tag(tag)
                if vr is not None and vr != "UI":
                    raise PolicyViolation(f"HASH_UID on {tag} ({vr}); only UI tags may be hashed")

    def rule_for(self, tag: DicomTag) -> PolicyRule:
        return self.rules.get(tag, PolicyRule(Action.KEEP))

    def salt_digest(self) -> str:
        return hashlib.sha256(self.salt).hexdigest()


@dataclass(frozen=True)
class RecordEntry:
    tag: str  # canonical (GGGG,EEEE) text
    original_digest: str  # salted sha256 hex of the original raw bytes
    replacement: str | None  # None when the element was removed


@dataclass
class AnonymizationRecord:
    policy_id: str
    salt_digest: str
    mappings: list[RecordEntry] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "policy_id": self.policy_id,
            "salt_digest": self.salt_digest,
            "mappings": [
                {"tag": m.tag, "original_digest": m.original_digest, "replacement": m.replacement}
                for m in self.mappings
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AnonymizationRecord":
        return cls(
            policy_id=obj["policy_id"],
            salt_digest=obj["salt_digest"],
            mappings=[
                RecordEntry(m["tag"], m["original_digest"], m["replacement"])
                for m in obj.get("mappings", [])
            ],
        )


def _digest(salt: bytes, raw: bytes) -> str:
    return hashlib.sha256(salt + raw).hexdigest()


def pseudonym_uid(salt: bytes, original: str) -> str:
    """Deterministic valid UID for a (salt, original) pair: digits and dots."""
    digest = hashlib.sha256(salt + original.encode("utf-8")).digest()
    uid = PSEUDO_UID_ROOT + str(int.from_bytes(digest[:16], "big"))
    return uid[:UID_MAX_LEN]


def _hashed_text(salt: bytes, prefix: str, original: bytes) -> str:
    return prefix + _digest(salt, original)[:8]


def _apply_to_element(
    element: DicomElement, policy: AnonymizationPolicy, record: AnonymizationRecord
) -> DicomElement | None:
    """Return the transformed element, or None when it must be removed."""
    rule = policy.rule_for(element.tag)
    if element.vr == "SQ":
        # The rule applies to the SQ element as a whole; KEEP recurses.
        if rule.action is Action.REMOVE:
            record.mappings.append(RecordEntry(str(element.tag), _digest(policy.salt, b"SQ"), None))
            return None
        items = tuple(_apply_to_dataset(item, policy, record) for item in element.items)
        return DicomElement(element.tag, "SQ", b"", items)

    if rule.action is Action.KEEP:
        return element
    if rule.action is Action.REMOVE:
        record.mappings.append(
            RecordEntry(str(element.tag), _digest(policy.salt, element.raw), None)
        )
        return None

    if rule.action in (Action.REPLACE, Action.HASH_TEXT) and element.vr not in STRING_VRS:
        raise PolicyViolation(
            f"{rule.action.value} on {element.tag} with non-string VR {element.vr}"
        )
    if rule.action is Action.REPLACE:
        replacement = rule.arg
    elif rule.action is Action.HASH_TEXT:
        if re.fullmatch(re.escape(rule.arg) + r"[0-9a-f]{8}", element.text):
            return element  # already pseudonymous: fixed point
        replacement = _hashed_text(policy.salt, rule.arg, element.raw)
    else:  # HASH_UID
        if element.vr != "UI":
            raise PolicyViolation(f"HASH_UID on {element.tag} with VR {element.vr}")
        if element.text.startswith(PSEUDO_UID_ROOT):
            return element  # fixed point
        replacement = pseudonym_uid(policy.salt, element.text)

    new_raw = _pad(replacement.encode("utf-8"), element.vr)
    if new_raw == element.raw:
        return element
    record.mappings.append(
        RecordEntry(str(element.tag), _digest(policy.salt, element.raw), replacement)
    )
    return DicomElement(element.tag, element.vr, new_raw)


def _apply_to_dataset(
    dataset: DicomDataset, policy: AnonymizationPolicy, record: AnonymizationRecord
) -> DicomDataset:
    out = DicomDataset()
    for element in dataset:
        transformed = _apply_to_element(element, policy, record)
        if transformed is not None:
            out.put(transformed)
    return out


def anonymize_dataset(
    dataset: DicomDataset, policy: AnonymizationPolicy
) -> tuple[DicomDataset, AnonymizationRecord]:
    """Apply the policy (recursively into sequences); idempotent on its output."""
    record = AnonymizationRecord(policy_id=policy.policy_id, salt_digest=policy.salt_digest())
    return _apply_to_dataset(dataset, policy, record), record


# -- policy construction -----------------------------------------------------

_REMOVED_KEYWORDS = (
    "PatientName",
    "PatientBirthDate",
    "PatientAddress",
    "ReferringPhysicianName",
    "InstitutionName",
    "AccessionNumber",
    "OtherPatientIDs",
)

_HASHED_UID_KEYWORDS = ("StudyInstanceUID", "SeriesInstanceUID", "SOPInstanceUID")


def default_policy(salt: bytes) -> AnonymizationPolicy:
    """The shipped default: scrub direct identifiers, keep demographics."""
    rules: dict[DicomTag, PolicyRule] = {}
    for keyword in _REMOVED_KEYWORDS:
        rules[tag_for_keyword(keyword)] = PolicyRule(Action.REMOVE)
    rules[tag_for_keyword("PatientID")] = PolicyRule(Action.HASH_TEXT, "ANON-")
    for keyword in _HASHED_UID_KEYWORDS:
        rules[tag_for_keyword(keyword)] = PolicyRule(Action.HASH_UID)
    return AnonymizationPolicy(policy_id="default", rules=rules, salt=salt)


def load_policy_file(path, salt: bytes, policy_id: str | None = None) -> AnonymizationPolicy:
    """Load the documented text format: ``(GGGG,EEEE) = action [argument]``.

    Lines starting with ``#`` and blank lines are ignored; unlisted tags
    default to keep.
    """
    rules: dict[DicomTag, PolicyRule] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise PolicyViolation(f"{path}:{lineno}: expected '(GGGG,EEEE) = action'")
            tag_text, _, action_text = line.partition("=")
            try:
                tag = DicomTag.from_text(tag_text.strip())
            except ValueError as exc:
                raise PolicyViolation(f"{path}:{lineno}: {exc}") from None
            parts = action_text.strip().split(None, 1)
            try:
                action = Action(parts[0].lower())
            except ValueError:
                raise PolicyViolation(f"{path}:{lineno}: unknown action {parts[0]!r}") from None
            arg = parts[1] if len(parts) > 1 else ""
            if tag in rules:
                raise PolicyViolation(f"{path}:{lineno}: duplicate rule for {tag}")
            rules[tag] = PolicyRule(action, arg)
    name = policy_id if policy_id is not None else str(path)
    return AnonymizationPolicy(policy_id=name, rules=rules, salt=salt)
