"""Text-completion backends for the reasoning engine.

Each backend answers ``complete(stage, prompt, inputs)`` with raw text. The
rendered ``prompt`` is what a chat model sees; ``inputs`` carries the same
material as typed objects so rule-based backends need not re-parse text.
"""
from __future__ import annotations

import json
import os
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional, Protocol

import numpy as np

from ..config import QaConfig, SsreConfig
from ..errors import ConfigError, TransportError
from . import oracle

ENV_ENDPOINT = "SCENEFUSE_LLM_ENDPOINT"
ENV_TOKEN = "SCENEFUSE_LLM_TOKEN"
ENV_MODEL = "SCENEFUSE_LLM_MODEL"


class Backend(Protocol):
    name: str

    def complete(self, stage: str, prompt: str, inputs: Mapping[str, Any]) -> str: ...


def _qa_cfg(cfg: SsreConfig) -> QaConfig:
    return QaConfig(tau_ttc=cfg.tau_ttc, horizon_s=cfg.horizon_s)


@dataclass
class OracleBackend:
    """Deterministic rule-based answers for every stage."""

    cfg: SsreConfig = field(default_factory=SsreConfig)
    name: str = "oracle"

    def complete(self, stage: str, prompt: str, inputs: Mapping[str, Any]) -> str:
        qa = _qa_cfg(self.cfg)
        if stage == "T_parse":
            return json.dumps(oracle.parse_scene(inputs["summary"]), sort_keys=True)
        if stage == "T_risk":
            return json.dumps(oracle.assess_risk(inputs["m"], qa), sort_keys=True)
        if stage == "T_reason":
            return oracle.format_draft(*oracle.draft_decision(inputs["query"], inputs["m"], inputs["l_risk"], qa))
        if stage == "T_verify":
            return oracle.format_verdict(oracle.verify_draft(inputs["summary"], inputs["decision"],
                                                             inputs["justification"], self.cfg.numeric_rel_tol))
        if stage == "T_revision":
            d, n = oracle.revise_draft(inputs["query"], inputs["m"], inputs["l_risk"], inputs["decision"],
                                       inputs["justification"], inputs["verdict"], qa)
            return oracle.format_draft(d, n)
        raise TransportError(f"unknown stage {stage!r}")


@dataclass
class AlwaysMajorBackend:
    """Oracle everywhere except the verifier, which always reports a major inconsistency."""

    cfg: SsreConfig = field(default_factory=SsreConfig)
    name: str = "always_major"

    def __post_init__(self) -> None:
        self._inner = OracleBackend(self.cfg)

    def complete(self, stage: str, prompt: str, inputs: Mapping[str, Any]) -> str:
        if stage == "T_verify":
            return json.dumps({"verdict": "Major", "unsupported_or_conflicting_claims": [
                {"claim": "stub", "reason": "verifier stub always reports Major"}], "comment": "stub"})
        return self._inner.complete(stage, prompt, inputs)


@dataclass
class AdversarialBackend:
    """Oracle drafts with 1 to 3 fabricated entity ids injected and a verifier that always passes."""

    seed: int = 0
    cfg: SsreConfig = field(default_factory=SsreConfig)
    reinject_prob: float = 0.3
    name: str = "adversarial"

    def __post_init__(self) -> None:
        self._inner = OracleBackend(self.cfg)
        self._rng = np.random.default_rng([self.seed, 0xAD])
        self.injected: list[str] = []

    def _fake_ids(self, known: Iterable[str]) -> list[str]:
        top = max([int(i[3:]) for i in known] + [0])
        k = int(self._rng.integers(1, 4))
        picks = sorted(set(int(x) for x in self._rng.integers(top + 1, top + 1000, size=k)))
        return [f"ID_{p}" for p in picks]

    def _inject(self, text: str, known: list[str]) -> str:
        d_text, _, n = text.partition("\n\n")
        d = json.loads(d_text)
        fakes = self._fake_ids(known)
        self.injected.extend(fakes)
        for j, f in enumerate(fakes):
            if j % 2 == 0:
                n = n + ("\n" if n else "") + f"The car ({f}) is at distance=7.5 m."
            else:
                d["target_entity_ids"] = list(d["target_entity_ids"]) + [f]
                d["supporting_entity_ids"] = list(d["target_entity_ids"])
        return json.dumps(d, sort_keys=True) + "\n\n" + n

    def complete(self, stage: str, prompt: str, inputs: Mapping[str, Any]) -> str:
        if stage == "T_verify":
            return json.dumps({"verdict": "PASS", "unsupported_or_conflicting_claims": [], "comment": "looks fine"})
        text = self._inner.complete(stage, prompt, inputs)
        known = [e["id"] for e in inputs["m"].get("entities", [])] if isinstance(inputs.get("m"), dict) else []
        if stage == "T_reason" or (stage == "T_revision" and self._rng.random() < self.reinject_prob):
            text = self._inject(text, known)
        return text


@dataclass
class ReplayBackend:
    """Serves recorded responses in call order, checking the stage matches."""

    records: list[dict]
    name: str = "replay"

    def __post_init__(self) -> None:
        self._pos = 0

    @classmethod
    def from_trace(cls, records: Iterable[Mapping[str, Any]]) -> "ReplayBackend":
        return cls([dict(r) for r in records if r.get("type") == "backend_call"])

    def complete(self, stage: str, prompt: str, inputs: Mapping[str, Any]) -> str:
        if self._pos >= len(self.records):
            raise TransportError("replay trace exhausted")
        rec = self.records[self._pos]
        self._pos += 1
        if rec.get("stage") != stage:
            raise TransportError(f"replay expected stage {rec.get('stage')!r}, engine asked for {stage!r}")
        return str(rec["response"])


@dataclass
class HttpBackend:
    """Chat-completion style POST; the first text block of the reply is the response."""

    endpoint: str
    token: Optional[str] = None
    model: str = "default"
    timeout_s: float = 30.0
    temperature: float = 0.2
    temperature_parse: float = 0.0
    name: str = "http"

    @classmethod
    def from_env(cls, cfg: SsreConfig) -> "HttpBackend":
        endpoint = os.environ.get(ENV_ENDPOINT)
        if not endpoint:
            raise ConfigError(f"{ENV_ENDPOINT} must be set for the http backend")
        return cls(endpoint=endpoint, token=os.environ.get(ENV_TOKEN), model=os.environ.get(ENV_MODEL, cfg.model),
                   timeout_s=cfg.timeout_s, temperature=cfg.temperature, temperature_parse=cfg.temperature_parse)

    def complete(self, stage: str, prompt: str, inputs: Mapping[str, Any]) -> str:
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature_parse if stage == "T_parse" else self.temperature,
        }
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        req = urllib.request.Request(self.endpoint, data=json.dumps(body).encode(), headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise TransportError(f"backend request to {self.endpoint} failed: {exc}") from exc
        text = first_text_block(payload)
        if text is None:
            raise TransportError("backend reply has no text block")
        return text


def first_text_block(payload: Any) -> Optional[str]:
    """Text of the first message/content block in common chat-completion reply shapes."""
    if not isinstance(payload, dict):
        return None
    for choice in payload.get("choices") or []:
        msg = choice.get("message") if isinstance(choice, dict) else None
        if isinstance(msg, dict) and isinstance(msg.get("content"), str):
            return msg["content"]
        if isinstance(choice, dict) and isinstance(choice.get("text"), str):
            return choice["text"]
    content = payload.get("content")
    if isinstance(content, str):
        return content
    for block in content or []:
        if isinstance(block, dict) and block.get("type", "text") == "text" and isinstance(block.get("text"), str):
            return block["text"]
    return None


def make_backend(cfg: SsreConfig, replay_records: Optional[list[dict]] = None) -> Backend:
    if cfg.backend == "oracle":
        return OracleBackend(cfg)
    if cfg.backend == "http":
        return HttpBackend.from_env(cfg)
    if cfg.backend == "replay":
        if replay_records is None:
            raise ConfigError("the replay backend needs a recorded trace")
        return ReplayBackend.from_trace(replay_records)
    raise ConfigError(f"unknown backend {cfg.backend!r}")
