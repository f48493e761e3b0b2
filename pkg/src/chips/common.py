"""Small shared helpers."""

from __future__ import annotations

import re

JOB_KEY_RE = re.compile(r"^[A-Za-z0-9_-]{1,64}$")


def valid_job_key(key: str) -> bool:
    return bool(JOB_KEY_RE.match(key))
