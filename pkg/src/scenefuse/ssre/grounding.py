"""Entity-anchoring checks: every cited id must exist in the scene summary."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable

from ..scene import Decision, SceneSummary

ID_TOKEN = re.compile(r"(?<![A-Za-z0-9_])ID_[0-9]+(?![0-9])")


@dataclass(frozen=True)
class Violation:
    entity_id: str
    location: str
    reason: str = "entity id absent from the scene summary"

    def to_dict(self) -> dict:
        return {"entity_id": self.entity_id, "location": self.location, "reason": self.reason}


def extract_entity_ids(text: str) -> tuple[str, ...]:
    """ID_<digits> tokens in first-seen order, without numeric canonicalization."""
    return tuple(dict.fromkeys(ID_TOKEN.findall(text or "")))


def validate_grounding(decision: Decision, justification: str, summary: SceneSummary) -> list[Violation]:
    known = set(summary.entity_ids)
    out = [Violation(i, "target_entity_ids") for i in dict.fromkeys(decision.target_entity_ids) if i not in known]
    out += [Violation(i, "justification") for i in extract_entity_ids(justification) if i not in known]
    return out


def unknown_ids(ids: Iterable[str], summary: SceneSummary) -> list[str]:
    known = set(summary.entity_ids)
    return [i for i in dict.fromkeys(ids) if i not in known]
