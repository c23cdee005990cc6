"""Declarative governance rules and their compilation into policies.

A rule is a conjunction of field conditions plus an action, a confidence and
a base escalation level.  Conditions select event fields through dotted
paths ("governance.classification", "context.disparate_impact", ...).  Two
virtual selectors consult the agent directory rather than the event itself:

* ``source.authorized`` resolves to 1 when the event's operation is within
  the source agent's capability set, else 0.
* ``lineage.any_jurisdiction_crossing`` with the CHAIN_CROSSES operator
  matches when data with origin jurisdiction J reaches, anywhere along the
  lineage-extended flow (lineage agents, then receiver, then an optional
  ``destination_jurisdiction`` context hop), an agent or destination whose
  jurisdiction differs from J.  This evaluates the end-to-end chain, not
  just the last hop; per-agent boundary guards are modelled elsewhere by
  truncating the lineage to its last entry before evaluation.

Rule packs load from and save to a strict YAML document: unknown fields are
a parse error, and serialize -> parse -> serialize is byte-identical.
"""

from __future__ import annotations

import numbers
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import yaml

from .errors import LineageResolutionError, RuleCompileError
from .model import (
    AgentId,
    Capability,
    GovernanceTelemetryEvent,
    Jurisdiction,
    ViolationType,
)
from .policy import EnforcementActionKind, Policy, PolicyDecision

PACK_FORMAT_VERSION = 1


class ConditionOperator(Enum):
    EQ = "EQ"
    NEQ = "NEQ"
    GT = "GT"
    LT = "LT"
    IN = "IN"
    CONTAINS = "CONTAINS"
    CHAIN_CROSSES = "CHAIN_CROSSES"


@dataclass(frozen=True)
class RuleCondition:
    field_path: str
    operator: ConditionOperator
    value: object = None


@dataclass(frozen=True)
class GovernanceRule:
    id: str
    violation: ViolationType | None
    conditions: tuple[RuleCondition, ...]
    action: EnforcementActionKind
    confidence: float
    base_level: int

    def __post_init__(self):
        if not self.conditions:
            raise ValueError(f"rule {self.id!r} has no conditions")
        if not 0 <= self.base_level <= 4:
            raise ValueError(f"rule {self.id!r} base_level outside 0..4")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"rule {self.id!r} confidence outside [0, 1]")


@dataclass(frozen=True)
class AgentDirectory:
    """Scenario-level agent registry used by the virtual selectors."""

    jurisdictions: Mapping[AgentId, Jurisdiction]
    capabilities: Mapping[AgentId, set[Capability]] = field(default_factory=dict)

    def jurisdiction_of(self, agent: AgentId) -> Jurisdiction:
        try:
            return self.jurisdictions[agent]
        except KeyError:
            raise LineageResolutionError(
                f"agent {agent!r} missing from directory", agent=agent
            ) from None

    def authorized(self, agent: AgentId, operation: str) -> bool:
        return operation in self.capabilities.get(agent, set())


# Governance field selectors that can be validated at compile time.
_GOVERNANCE_FIELDS = {"classification", "jurisdiction", "sensitivity", "verified"}
_SCALAR_ROOTS = {"operation", "source", "receiver", "timestamp"}
_CHAIN_FIELD = "lineage.any_jurisdiction_crossing"
_AUTHORIZED_FIELD = "source.authorized"


def _validate_condition(cond: RuleCondition) -> None:
    path = cond.field_path
    op = cond.operator
    if op is ConditionOperator.CHAIN_CROSSES:
        if path != _CHAIN_FIELD:
            raise RuleCompileError(
                f"CHAIN_CROSSES only applies to {_CHAIN_FIELD!r}", field=path
            )
        return
    if path == _CHAIN_FIELD:
        raise RuleCompileError(
            f"{_CHAIN_FIELD!r} requires the CHAIN_CROSSES operator", field=path
        )
    root, _, leaf = path.partition(".")
    if root == "governance":
        if leaf not in _GOVERNANCE_FIELDS:
            raise RuleCompileError(f"unknown governance field {leaf!r}", field=path)
    elif root == "context":
        if not leaf:
            raise RuleCompileError("context selector needs a key", field=path)
    elif path == _AUTHORIZED_FIELD:
        pass
    elif path in _SCALAR_ROOTS:
        pass
    else:
        raise RuleCompileError(f"unknown field path {path!r}", field=path)
    if op in (ConditionOperator.GT, ConditionOperator.LT):
        if isinstance(cond.value, bool) or not isinstance(cond.value, numbers.Real):
            raise RuleCompileError(
                f"{op.value} requires a numeric comparison value", field=path
            )
    if op is ConditionOperator.IN and not isinstance(cond.value, (list, tuple)):
        raise RuleCompileError("IN requires a list value", field=path)


def _resolve(event: GovernanceTelemetryEvent, path: str, directory: AgentDirectory | None):
    """Resolve a field path against an event. Missing context keys resolve to None."""
    if path == _AUTHORIZED_FIELD:
        if directory is None:
            raise RuleCompileError(
                "source.authorized requires an agent directory", field=path
            )
        return 1 if directory.authorized(event.source, event.operation) else 0
    root, _, leaf = path.partition(".")
    if root == "governance":
        return getattr(event.governance, leaf).value
    if root == "context":
        return event.context.get(leaf)
    if path == "operation":
        return event.operation
    if path == "source":
        return event.source
    if path == "receiver":
        return event.receiver
    if path == "timestamp":
        return event.timestamp
    raise RuleCompileError(f"unknown field path {path!r}", field=path)


def lineage_cross_check(
    event: GovernanceTelemetryEvent,
    directory: AgentDirectory,
) -> bool:
    """True when the data's origin jurisdiction is crossed anywhere in the chain.

    The chain is the event lineage followed by the receiver, plus a final
    pseudo-hop from the ``destination_jurisdiction`` context key when
    present.  Origin is the jurisdiction recorded in the governance
    metadata.  Raises LineageResolutionError when a chain agent is not in
    the directory; the enforcement bus maps that to the tier's fail mode.
    """
    origin = event.governance.jurisdiction
    for agent in (*event.governance.lineage, event.receiver):
        if directory.jurisdiction_of(agent) is not origin:
            return True
    destination = event.context.get("destination_jurisdiction")
    if destination is not None and str(destination) != origin.value:
        return True
    return False


def _condition_matches(
    cond: RuleCondition,
    event: GovernanceTelemetryEvent,
    directory: AgentDirectory | None,
) -> bool:
    if cond.operator is ConditionOperator.CHAIN_CROSSES:
        if directory is None:
            raise RuleCompileError(
                "CHAIN_CROSSES requires an agent directory", field=cond.field_path
            )
        return lineage_cross_check(event, directory)
    actual = _resolve(event, cond.field_path, directory)
    op = cond.operator
    if op is ConditionOperator.EQ:
        return actual == cond.value
    if op is ConditionOperator.NEQ:
        return actual is not None and actual != cond.value
    if op is ConditionOperator.GT:
        return isinstance(actual, numbers.Real) and actual > cond.value
    if op is ConditionOperator.LT:
        return isinstance(actual, numbers.Real) and actual < cond.value
    if op is ConditionOperator.IN:
        return actual in cond.value
    if op is ConditionOperator.CONTAINS:
        if actual is None:
            return False
        return cond.value in actual
    raise RuleCompileError(f"unsupported operator {op}", field=cond.field_path)


def compile_rule(rule: GovernanceRule, directory: AgentDirectory | None = None) -> Policy:
    """Compile a rule into a deterministic policy.

    The compiled policy returns (rule.action, rule.confidence) when every
    condition matches and (ALLOW, 1.0) otherwise, so non-matching rules are
    the bottom of the composition order and never mask other policies.
    """
    for cond in rule.conditions:
        _validate_condition(cond)
        if (
            cond.operator is ConditionOperator.CHAIN_CROSSES
            or cond.field_path == _AUTHORIZED_FIELD
        ) and directory is None:
            raise RuleCompileError(
                f"rule {rule.id!r} needs an agent directory", field=cond.field_path
            )
    hit = PolicyDecision(rule.action, rule.confidence)
    miss = PolicyDecision(EnforcementActionKind.ALLOW, 1.0)

    def evaluate(event: GovernanceTelemetryEvent) -> PolicyDecision:
        for cond in rule.conditions:
            if not _condition_matches(cond, event, directory):
                return miss
        return hit

    return Policy(rule.id, evaluate)


@dataclass(frozen=True)
class RulePack:
    name: str
    rules: tuple[GovernanceRule, ...]

    def base_level_for(self, kind: ViolationType) -> int:
        levels = [r.base_level for r in self.rules if r.violation is kind]
        if not levels:
            raise KeyError(f"no rule covers violation kind {kind}")
        return max(levels)

    def rule_by_id(self, rule_id: str) -> GovernanceRule:
        for rule in self.rules:
            if rule.id == rule_id:
                return rule
        raise KeyError(rule_id)

    def compile(self, directory: AgentDirectory | None = None) -> list[Policy]:
        return [compile_rule(rule, directory) for rule in self.rules]


def default_rule_pack() -> RulePack:
    """The fixed default pack covering all four violation kinds.

    All four violation rules DENY so that an injected pattern blocks the
    offending operation; base levels drive the graduated response (2 for
    residency and unauthorized access, 1 for consent and bias).  Allow-list
    rules document known-good patterns; under max-composition they are
    no-ops and exist for audit attribution.
    """
    deny = EnforcementActionKind.DENY
    allow = EnforcementActionKind.ALLOW
    rules = (
        GovernanceRule(
            id="consent-required",
            violation=ViolationType.CONSENT_MISSING,
            conditions=(RuleCondition("context.consent_flag", ConditionOperator.EQ, 0),),
            action=deny,
            confidence=0.85,
            base_level=1,
        ),
        GovernanceRule(
            id="bias-disparate-impact",
            violation=ViolationType.BIAS_THRESHOLD,
            conditions=(
                RuleCondition("context.disparate_impact", ConditionOperator.GT, 0.15),
            ),
            action=deny,
            confidence=0.8,
            base_level=1,
        ),
        GovernanceRule(
            id="residency-chain-eu-pii",
            violation=ViolationType.DATA_RESIDENCY,
            conditions=(
                RuleCondition("governance.classification", ConditionOperator.EQ, "PII"),
                RuleCondition("governance.jurisdiction", ConditionOperator.EQ, "EU"),
                RuleCondition(
                    "lineage.any_jurisdiction_crossing",
                    ConditionOperator.CHAIN_CROSSES,
                    None,
                ),
            ),
            action=deny,
            confidence=0.95,
            base_level=2,
        ),
        GovernanceRule(
            id="residency-destination-eu-pii",
            violation=ViolationType.DATA_RESIDENCY,
            conditions=(
                RuleCondition("governance.classification", ConditionOperator.EQ, "PII"),
                RuleCondition("governance.jurisdiction", ConditionOperator.EQ, "EU"),
                RuleCondition(
                    "context.destination_jurisdiction", ConditionOperator.NEQ, "EU"
                ),
            ),
            action=deny,
            confidence=0.95,
            base_level=2,
        ),
        GovernanceRule(
            id="unauthorized-capability",
            violation=ViolationType.UNAUTHORIZED_ACCESS,
            conditions=(RuleCondition("source.authorized", ConditionOperator.EQ, 0),),
            action=deny,
            confidence=0.9,
            base_level=2,
        ),
        GovernanceRule(
            id="allowlist-order-finalize",
            violation=None,
            conditions=(RuleCondition("operation", ConditionOperator.EQ, "finalize_order"),),
            action=allow,
            confidence=1.0,
            base_level=0,
        ),
        GovernanceRule(
            id="allowlist-public-telemetry",
            violation=None,
            conditions=(
                RuleCondition("governance.classification", ConditionOperator.EQ, "PUBLIC"),
            ),
            action=allow,
            confidence=1.0,
            base_level=0,
        ),
    )
    return RulePack(name="default", rules=rules)


# File format --------------------------------------------------------------

_RULE_KEYS = {"id", "violation", "conditions", "action", "confidence", "base_level"}
_CONDITION_KEYS = {"field", "op", "value"}
_PACK_KEYS = {"version", "pack", "rules"}


def pack_to_yaml(pack: RulePack) -> str:
    doc = {
        "version": PACK_FORMAT_VERSION,
        "pack": pack.name,
        "rules": [
            {
                "id": r.id,
                "violation": r.violation.value if r.violation else None,
                "action": r.action.name,
                "confidence": r.confidence,
                "base_level": r.base_level,
                "conditions": [
                    {
                        "field": c.field_path,
                        "op": c.operator.value,
                        "value": list(c.value)
                        if isinstance(c.value, tuple)
                        else c.value,
                    }
                    for c in r.conditions
                ],
            }
            for r in pack.rules
        ],
    }
    return yaml.safe_dump(doc, sort_keys=True, default_flow_style=False)


def pack_from_yaml(text: str) -> RulePack:
    """Strict parser: unknown fields are an error."""
    doc = yaml.safe_load(text)
    if not isinstance(doc, dict):
        raise RuleCompileError("pack document must be a mapping")
    unknown = set(doc) - _PACK_KEYS
    if unknown:
        raise RuleCompileError(f"unknown pack fields: {sorted(unknown)}")
    if doc.get("version") != PACK_FORMAT_VERSION:
        raise RuleCompileError(f"unsupported pack version: {doc.get('version')!r}")
    rules = []
    for raw in doc.get("rules", []):
        unknown = set(raw) - _RULE_KEYS
        if unknown:
            raise RuleCompileError(f"unknown rule fields: {sorted(unknown)}")
        conditions = []
        for cond in raw["conditions"]:
            unknown = set(cond) - _CONDITION_KEYS
            if unknown:
                raise RuleCompileError(f"unknown condition fields: {sorted(unknown)}")
            value = cond.get("value")
            conditions.append(
                RuleCondition(
                    field_path=cond["field"],
                    operator=ConditionOperator(cond["op"]),
                    value=tuple(value) if isinstance(value, list) else value,
                )
            )
        rules.append(
            GovernanceRule(
                id=raw["id"],
                violation=ViolationType(raw["violation"]) if raw["violation"] else None,
                conditions=tuple(conditions),
                action=EnforcementActionKind[raw["action"]],
                confidence=float(raw["confidence"]),
                base_level=int(raw["base_level"]),
            )
        )
    return RulePack(name=doc.get("pack", "unnamed"), rules=tuple(rules))
