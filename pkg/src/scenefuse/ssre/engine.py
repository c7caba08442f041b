"""Staged prompting loop: parse, assess risk, draft, then bounded verify/revise."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any, Optional

from ..config import SsreConfig
from ..errors import SchemaError
from ..scene import Decision, SceneSummary, Verdict, validate_decision, validate_verdict
from ..serialize import canonical_dumps, decision_from_dict, decision_to_dict, summary_to_dict, verdict_from_dict, verdict_to_dict
from .backends import Backend
from .grounding import validate_grounding
from .prompts import render_prompt

UNVERIFIED_FLAG = "unverified_after_k_max"
VERDICT_ALIASES = {"PASS": "Consistent", "FAIL": "Major"}
TOP_RISKS = 3


class MalformedOutput(ValueError):
    pass


@dataclass
class SsreResult:
    decision: Decision
    justification: str
    verified: bool
    iterations: int
    trace: list[dict] = field(default_factory=list)

    @property
    def backend_calls(self) -> int:
        return sum(1 for r in self.trace if r["type"] == "backend_call")


def _first_json(text: str) -> tuple[Any, str]:
    """First JSON value embedded in ``text`` and the remainder after it."""
    dec = json.JSONDecoder()
    for i, ch in enumerate(text):
        if ch in "{[":
            try:
                val, end = dec.raw_decode(text, i)
            except ValueError:
                continue
            return val, text[end:]
    raise MalformedOutput("no JSON value in response")


def parse_draft(text: str) -> tuple[Decision, str]:
    try:
        obj, rest = _first_json(text)
        if not isinstance(obj, dict):
            raise MalformedOutput("decision must be a JSON object")
        d = decision_from_dict(obj)
        validate_decision(d)
    except (SchemaError, TypeError, KeyError) as exc:
        raise MalformedOutput(str(exc)) from exc
    return d, rest.strip()


def parse_verdict(text: str) -> Verdict:
    try:
        obj, _ = _first_json(text)
        if not isinstance(obj, dict):
            raise MalformedOutput("verdict must be a JSON object")
        obj = dict(obj)
        obj["verdict"] = VERDICT_ALIASES.get(obj.get("verdict"), obj.get("verdict"))
        v = verdict_from_dict(obj)
        validate_verdict(v)
    except (SchemaError, TypeError, KeyError) as exc:
        raise MalformedOutput(str(exc)) from exc
    return v


def _loose_json(text: str) -> Any:
    try:
        return _first_json(text)[0]
    except MalformedOutput:
        return text


def _as_text(x: Any) -> str:
    return x if isinstance(x, str) else json.dumps(x, sort_keys=True)


class _Session:
    def __init__(self, backend: Backend, trace: list[dict]):
        self.backend = backend
        self.trace = trace

    def call(self, stage: str, slots: dict, inputs: dict) -> str:
        prompt = render_prompt(stage, slots)
        response = self.backend.complete(stage, prompt, inputs)
        self.trace.append({"type": "backend_call", "index": sum(r["type"] == "backend_call" for r in self.trace),
                           "stage": stage, "prompt": prompt, "response": response})
        return response

    def call_parsed(self, stage: str, slots: dict, inputs: dict, parser):
        """One re-ask on malformed output; returns None if both attempts fail."""
        for _ in range(2):
            try:
                return parser(self.call(stage, slots, inputs))
            except MalformedOutput as exc:
                self.trace.append({"type": "malformed_output", "stage": stage, "error": str(exc)})
        return None


def run_ssre(summary: SceneSummary, query: str, aux: Optional[str], cfg: SsreConfig, backend: Backend) -> SsreResult:
    """Decision and justification for ``query`` grounded in ``summary``.

    Any id cited but absent from the summary forces a Major verdict whatever
    the backend verifier says. Without a Consistent verdict after ``k_max``
    rounds the confidence is scaled by ``gamma`` and the result is flagged.
    """
    trace: list[dict] = []
    s = _Session(backend, trace)
    s_text = canonical_dumps(summary_to_dict(summary))
    aux_text = aux if aux else "(none)"

    m = _loose_json(s.call("T_parse", {"scene_summary": s_text}, {"summary": summary}))
    m_text = _as_text(m)
    l_risk = _loose_json(s.call("T_risk", {"m": m_text}, {"m": m}))
    l_text = _as_text(l_risk)
    ctx = {"query": query, "m": m, "l_risk": l_risk if isinstance(l_risk, list) else [], "aux": aux}

    draft = s.call_parsed("T_reason", {"query": query, "m": m_text, "l_risk": l_text, "aux": aux_text}, ctx, parse_draft)
    malformed = draft is None
    d, n = draft if draft is not None else (Decision("unknown", 0.0), "")

    verified = False
    iterations = 0
    for k in range(1, cfg.k_max + 1):
        iterations = k
        d_text = canonical_dumps(decision_to_dict(d))
        v = s.call_parsed("T_verify", {"scene_summary": s_text, "d_draft": d_text, "n_draft": n},
                          {"summary": summary, "decision": d, "justification": n}, parse_verdict)
        backend_verdict = v.verdict if v is not None else None
        if v is None or malformed:
            v = Verdict("Major", (v.claims if v is not None else ()) + (("draft", "malformed backend output"),),
                        "malformed output")
        violations = validate_grounding(d, n, summary)
        if violations:
            claims = v.claims + tuple((f"{x.location}: {x.entity_id}", x.reason) for x in violations)
            v = Verdict("Major", claims, v.comment or "ungrounded entity ids")
        trace.append({"type": "ivl_check", "iteration": k, "backend_verdict": backend_verdict, "verdict": v.verdict,
                      "claims": verdict_to_dict(v)["unsupported_or_conflicting_claims"],
                      "local_violations": [x.to_dict() for x in violations]})
        if v.verdict == "Consistent":
            verified = True
            break
        revised = s.call_parsed("T_revision", {"m": m_text, "l_risk": l_text, "query": query, "d_draft": d_text,
                                               "n_draft": n, "v": json.dumps(verdict_to_dict(v), sort_keys=True)},
                                dict(ctx, decision=d, justification=n, verdict=v), parse_draft)
        if revised is not None:
            d, n = revised
            malformed = False

    if not verified:
        d = replace(d, confidence=cfg.gamma * d.confidence, flags=tuple(d.flags) + (UNVERIFIED_FLAG,))
    top = l_risk[:TOP_RISKS] if isinstance(l_risk, list) else []
    trace.append({"type": "result", "verified": verified, "iterations": iterations,
                  "sra_top_risks": top, "decision": decision_to_dict(d), "justification": n})
    return SsreResult(d, n, verified, iterations, trace)
