"""Exception hierarchy; each family maps to a distinct CLI exit code."""
from __future__ import annotations


class ScenefuseError(Exception):
    exit_code = 6


class ConfigError(ScenefuseError):
    exit_code = 3


class SchemaError(ScenefuseError):
    """A value violates its schema; ``path`` locates the field, ``rule`` names the check."""

    exit_code = 4

    def __init__(self, path: str, rule: str, where: str | None = None):
        self.path = path
        self.rule = rule
        self.where = where
        prefix = f"{where}: " if where else ""
        super().__init__(f"{prefix}{path}: {rule}")


class TransportError(ScenefuseError):
    """The reasoning backend could not be reached or broke protocol."""

    exit_code = 5


class GeometryError(ScenefuseError):
    pass


class BehindCamera(GeometryError):
    pass


class NotVisible(GeometryError):
    pass


class GenerationError(ScenefuseError):
    pass


class TemplateError(ScenefuseError):
    pass


class ParameterError(ScenefuseError, ValueError):
    pass
