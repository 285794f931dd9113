"""Exception family and severity classification.

The built-in assignment ships as a frozen data file (data/taxonomy.json) so
it is auditable and overridable. load_taxonomy tops the table up for any
interpreter built-in the file predates by walking the class's MRO to the
nearest tabled ancestor, keeping the coverage invariant true on newer
interpreters.
"""
from __future__ import annotations

import builtins
import json
import logging
from dataclasses import dataclass
from enum import Enum
from importlib import resources

from .errors import ConfigError
from .traceparse import ExceptionEvent

logger = logging.getLogger(__name__)

DEPTH_BUMP_FRAMES = 10


class Family(str, Enum):
    SYSTEM_ERRORS = "SystemErrors"
    CODE_DEFECTS = "CodeDefects"
    TYPE_ISSUES = "TypeIssues"
    RESOURCE_PROBLEMS = "ResourceProblems"
    LOGICAL_FLAWS = "LogicalFlaws"


class Severity(str, Enum):
    CRITICAL = "Critical"
    HIGH = "High"
    WARNING = "Warning"
    INFO = "Info"

    @property
    def rank(self) -> int:
        return _SEVERITY_RANK[self]


_SEVERITY_RANK = {
    Severity.INFO: 0,
    Severity.WARNING: 1,
    Severity.HIGH: 2,
    Severity.CRITICAL: 3,
}


class MatchRule(str, Enum):
    EXACT_NAME = "exact_name"
    BASE_CLASS = "base_class"
    SUFFIX_RULE = "suffix_rule"
    DEFAULT = "default"


@dataclass(frozen=True)
class Classification:
    family: Family
    severity: Severity
    matched_by: MatchRule


@dataclass
class TaxonomyTable:
    entries: dict[str, tuple[Family, Severity]]
    critical_names: frozenset[str]

    @property
    def builtin_names(self) -> frozenset[str]:
        return frozenset(self.entries)


def _load_data_file() -> dict:
    text = resources.files("audible_trace").joinpath("data/taxonomy.json").read_text()
    return json.loads(text)


def _parse_entry(name: str, value: object) -> tuple[Family, Severity]:
    if isinstance(value, dict):
        value = [value.get("family"), value.get("severity")]
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"taxonomy entry {name!r} must be [family, severity]")
    family_raw, severity_raw = value
    try:
        family = Family(family_raw)
    except ValueError:
        raise ConfigError(f"unknown family {family_raw!r} for {name!r}") from None
    try:
        severity = Severity(severity_raw)
    except ValueError:
        raise ConfigError(f"unknown severity {severity_raw!r} for {name!r}") from None
    return family, severity


def _complete_runtime_builtins(entries: dict[str, tuple[Family, Severity]]) -> None:
    """Assign any built-in exception the data file predates via its MRO."""
    for name in dir(builtins):
        obj = getattr(builtins, name)
        if not isinstance(obj, type) or not issubclass(obj, BaseException):
            continue
        if name in entries:
            continue
        assigned: tuple[Family, Severity] | None = None
        for base in obj.__mro__[1:]:
            if base.__name__ in entries:
                assigned = entries[base.__name__]
                break
        if assigned is None:
            assigned = (
                (Family.LOGICAL_FLAWS, Severity.INFO)
                if name.endswith("Warning")
                else (Family.LOGICAL_FLAWS, Severity.WARNING)
            )
        entries[name] = assigned
        logger.debug("taxonomy completed at load time: %s -> %s", name, assigned)


def load_taxonomy(overrides: dict | None = None) -> TaxonomyTable:
    """Build the classification table: shipped data file + user overrides.

    Overrides shadow built-ins name by name; values are [family, severity]
    pairs (or {"family":..., "severity":...} maps). ConfigError on unknown
    family or severity values or malformed entries.
    """
    doc = _load_data_file()
    entries = {name: _parse_entry(name, value) for name, value in doc["entries"].items()}
    _complete_runtime_builtins(entries)
    if overrides:
        if not isinstance(overrides, dict):
            raise ConfigError("taxonomy overrides must be a mapping")
        for name, value in overrides.items():
            if not isinstance(name, str) or not name:
                raise ConfigError(f"taxonomy override key must be a name: {name!r}")
            entries[name] = _parse_entry(name, value)
    return TaxonomyTable(entries=entries, critical_names=frozenset(doc["critical"]))


def classify(event: ExceptionEvent, table: TaxonomyTable) -> Classification:
    """Resolve an event to (family, severity) with recorded provenance.

    Resolution order: exact name, first known base class, the *Warning
    suffix rule, then the default bucket. A Warning-severity result is
    bumped to High when the traceback runs deep.
    """
    name = event.exception_type
    family: Family
    severity: Severity
    if name in table.entries:
        family, severity = table.entries[name]
        matched = MatchRule.EXACT_NAME
    else:
        resolved = None
        for base in event.base_classes or ():
            if base in table.entries:
                resolved = table.entries[base]
                break
        if resolved is not None:
            family, severity = resolved
            matched = MatchRule.BASE_CLASS
        elif name.endswith("Warning"):
            family, severity = Family.LOGICAL_FLAWS, Severity.INFO
            matched = MatchRule.SUFFIX_RULE
        else:
            family, severity = Family.LOGICAL_FLAWS, Severity.WARNING
            matched = MatchRule.DEFAULT

    if severity is Severity.WARNING and event.frame_count >= DEPTH_BUMP_FRAMES:
        severity = Severity.HIGH
    return Classification(family=family, severity=severity, matched_by=matched)
