"""Policy decisions and the composition algebra.

A policy is a deterministic, side-effect-free function from a telemetry event
to an (action, confidence) decision.  Actions form a total order
ALLOW < FLAG < QUARANTINE < DENY.  Parallel composition evaluates every
member and keeps the maximum action and the maximum confidence; sequential
composition short-circuits on DENY.  Both preserve two properties relied on
everywhere else: adding a policy never weakens enforcement, and the composed
result is independent of evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, Sequence

from .errors import ConfigurationError
from .model import GovernanceTelemetryEvent


class EnforcementActionKind(IntEnum):
    """Decision vocabulary; integer value is the severity rank."""

    ALLOW = 0
    FLAG = 1
    QUARANTINE = 2
    DENY = 3


@dataclass(frozen=True)
class PolicyDecision:
    action: EnforcementActionKind
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence outside [0, 1]: {self.confidence}")


@dataclass(frozen=True)
class Policy:
    """Named deterministic policy; the id attributes decisions in the audit log."""

    id: str
    evaluate: Callable[[GovernanceTelemetryEvent], PolicyDecision]

    def __call__(self, event: GovernanceTelemetryEvent) -> PolicyDecision:
        return self.evaluate(event)


ALLOW_ALL = Policy("allow-all", lambda _event: PolicyDecision(EnforcementActionKind.ALLOW, 1.0))


def action_max(
    a1: EnforcementActionKind, a2: EnforcementActionKind
) -> EnforcementActionKind:
    """Higher-severity action under the total order. Associative, commutative, idempotent."""
    return a1 if a1 >= a2 else a2


def combine_parallel(decisions: Sequence[PolicyDecision]) -> PolicyDecision:
    """Fold of the parallel composition rule: max action, max confidence."""
    if not decisions:
        raise ConfigurationError("cannot combine an empty decision list")
    action = decisions[0].action
    confidence = decisions[0].confidence
    for d in decisions[1:]:
        action = action_max(action, d.action)
        if d.confidence > confidence:
            confidence = d.confidence
    return PolicyDecision(action, confidence)


def parallel_compose(policies: Sequence[Policy]) -> Policy:
    """Compose policies so every member is evaluated on each event.

    The composed decision is (max action, max confidence) over all members.
    Note the confidence is the maximum over all members even when the most
    confident member is not the one supplying the winning action.
    """
    if not policies:
        raise ConfigurationError("parallel_compose requires a non-empty policy list")
    if len(policies) == 1:
        return policies[0]
    members = tuple(policies)
    composed_id = "parallel(" + ",".join(p.id for p in members) + ")"

    def evaluate(event: GovernanceTelemetryEvent) -> PolicyDecision:
        return combine_parallel([p.evaluate(event) for p in members])

    return Policy(composed_id, evaluate)


def sequential_compose(p1: Policy, p2: Policy) -> Policy:
    """Apply p1 then p2; DENY from p1 short-circuits and p2 is never evaluated.

    Otherwise the actions merge with action_max and the confidence follows
    the winning action (max confidence on an action tie), keeping sequential
    consistent with parallel on the action component.
    """
    composed_id = f"seq({p1.id};{p2.id})"

    def evaluate(event: GovernanceTelemetryEvent) -> PolicyDecision:
        first = p1.evaluate(event)
        if first.action is EnforcementActionKind.DENY:
            return first
        second = p2.evaluate(event)
        if first.action > second.action:
            return first
        if second.action > first.action:
            return second
        return PolicyDecision(first.action, max(first.confidence, second.confidence))

    return Policy(composed_id, evaluate)


def evaluate_policy_set(
    policies: Sequence[Policy], event: GovernanceTelemetryEvent
) -> PolicyDecision:
    """Evaluate a policy set under parallel composition semantics.

    The result is identical under any permutation of the input list.
    """
    if not policies:
        raise ConfigurationError("evaluate_policy_set requires a non-empty policy set")
    return combine_parallel([p.evaluate(event) for p in policies])


def severity(decision: PolicyDecision) -> int:
    return int(decision.action)
