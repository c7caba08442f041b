"""Prompt templates for the five reasoning stages and slot substitution."""
from __future__ import annotations

from functools import lru_cache
from importlib import resources
from string import Template
from typing import Mapping

from ..errors import TemplateError

TEMPLATE_FILES = {
    "T_parse": "t_parse.txt",
    "T_risk": "t_risk.txt",
    "T_reason": "t_reason.txt",
    "T_verify": "t_verify.txt",
    "T_revision": "t_revision.txt",
}
TEMPLATE_SLOTS = {
    "T_parse": ("scene_summary",),
    "T_risk": ("m",),
    "T_reason": ("query", "m", "l_risk", "aux"),
    "T_verify": ("scene_summary", "d_draft", "n_draft"),
    "T_revision": ("m", "l_risk", "query", "d_draft", "n_draft", "v"),
}


@lru_cache(maxsize=None)
def template_text(name: str) -> str:
    if name not in TEMPLATE_FILES:
        raise TemplateError(f"unknown template {name!r}; expected one of {sorted(TEMPLATE_FILES)}")
    return resources.files(__package__).joinpath("templates", TEMPLATE_FILES[name]).read_text(encoding="utf-8")


def render_prompt(name: str, slots: Mapping[str, str]) -> str:
    """Template text with every ``${slot}`` replaced; a missing slot raises TemplateError naming it."""
    text = template_text(name)
    for slot in TEMPLATE_SLOTS[name]:
        if slot not in slots:
            raise TemplateError(f"template {name} is missing slot {slot!r}")
    try:
        return Template(text).substitute({k: str(v) for k, v in slots.items()})
    except KeyError as exc:
        raise TemplateError(f"template {name} is missing slot {exc.args[0]!r}") from None
