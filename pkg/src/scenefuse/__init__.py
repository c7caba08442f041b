"""Multi-agent perception coordination and grounded scene reasoning."""
from __future__ import annotations

from .config import RunConfig, load_config
from .pipeline import run_ica, run_naive_union
from .scene import (
    AgentFactSet,
    Decision,
    FusedEntity,
    GroundTruthScene,
    SceneFacts,
    SceneSummary,
    Verdict,
)

__version__ = "0.1.0"

__all__ = [
    "AgentFactSet", "Decision", "FusedEntity", "GroundTruthScene", "RunConfig", "SceneFacts", "SceneSummary",
    "Verdict", "load_config", "run_ica", "run_naive_union", "__version__",
]
