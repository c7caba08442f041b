"""Grounded staged reasoning over a scene summary."""
from __future__ import annotations

from .backends import AdversarialBackend, AlwaysMajorBackend, HttpBackend, OracleBackend, ReplayBackend, make_backend
from .engine import UNVERIFIED_FLAG, SsreResult, run_ssre
from .grounding import Violation, extract_entity_ids, validate_grounding
from .prompts import render_prompt

__all__ = [
    "AdversarialBackend", "AlwaysMajorBackend", "HttpBackend", "OracleBackend", "ReplayBackend", "make_backend",
    "UNVERIFIED_FLAG", "SsreResult", "run_ssre", "Violation", "extract_entity_ids", "validate_grounding",
    "render_prompt",
]
