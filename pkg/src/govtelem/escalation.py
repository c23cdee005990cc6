"""Graduated escalation with per-agent violation history and circuit breaker.

Each non-allow policy decision appends a violation record to the acting
agent's history.  The applied level for a violation of kind v is
min(4, base(v) + floor(|history in window| / k)).  Level 4 quarantines the
agent (capabilities cleared) and is absorbing until a manual operator reset.
A per-agent circuit breaker bypasses the graduated path entirely: when the
violation count within the breaker window (a quarter of the history window)
exceeds three times k, the agent is quarantined immediately, bounding
worst-case response time for burst schedules the graduated path cannot
track.

Trust changes only through ``update_trust``: multiplicative 10 percent decay
per applied level, and a slow +0.01 recovery on clean operations.  The decay
constants are configurable; the closed loop only requires that trust moves
exclusively through enforcement feedback.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .errors import ConfigurationError
from .model import AgentId, Capability, ViolationType
from .policy import EnforcementActionKind, PolicyDecision
from .rules import RulePack

MAX_LEVEL = 4

TRUST_DECAY_PER_LEVEL = 0.1
TRUST_RECOVERY = 0.01


@dataclass(frozen=True)
class ViolationRecord:
    """Digest-sized record of one non-allow outcome; full events live in the audit log."""

    event_ref: bytes
    policy_id: str
    decision: PolicyDecision
    time: float

    def __post_init__(self):
        if self.decision.action is EnforcementActionKind.ALLOW:
            raise ValueError("only non-allow outcomes enter violation history")


@dataclass(frozen=True)
class EscalationConfig:
    window_w_seconds: float = 160.0
    k: int = 2
    cb_threshold: int | None = None  # defaults to 3k
    cb_window_seconds: float | None = None  # defaults to W/4

    def __post_init__(self):
        if self.window_w_seconds <= 0:
            raise ConfigurationError("history window must be positive")
        if self.k < 1:
            raise ConfigurationError("k must be a positive integer")
        if self.cb_threshold is None:
            object.__setattr__(self, "cb_threshold", 3 * self.k)
        if self.cb_window_seconds is None:
            object.__setattr__(self, "cb_window_seconds", self.window_w_seconds / 4)
        if self.cb_threshold < 1 or self.cb_window_seconds <= 0:
            raise ConfigurationError("breaker threshold and window must be positive")


@dataclass
class AgentEscalationState:
    agent: AgentId
    history: list[ViolationRecord] = field(default_factory=list)
    current_level: int = 0
    circuit_broken: bool = False
    trust: float = 1.0
    capabilities: set[Capability] = field(default_factory=set)
    baseline_capabilities: frozenset[Capability] = frozenset()

    @property
    def quarantined(self) -> bool:
        return self.current_level >= MAX_LEVEL

    def check_invariants(self) -> None:
        assert 0 <= self.current_level <= MAX_LEVEL
        assert 0.0 <= self.trust <= 1.0
        if self.circuit_broken:
            assert self.current_level == MAX_LEVEL and not self.capabilities


def prune_history(
    state: AgentEscalationState, now: float, config: EscalationConfig
) -> AgentEscalationState:
    """Keep exactly the records with time in [now - W, now]. Mutates in place."""
    lo = now - config.window_w_seconds
    state.history = [r for r in state.history if lo <= r.time <= now]
    return state


def compute_level(
    violation: ViolationType,
    state: AgentEscalationState,
    config: EscalationConfig,
    rules: RulePack,
) -> int:
    """Graduated level for a fresh violation given the already-pruned history."""
    try:
        base = rules.base_level_for(violation)
    except KeyError as exc:
        raise ConfigurationError(str(exc)) from exc
    return min(MAX_LEVEL, base + len(state.history) // config.k)


def level_from_history(state: AgentEscalationState, config: EscalationConfig) -> int:
    """Level implied by accumulated history alone, with no active violation.

    Used after operator resets: base(v) is defined per violation, so absent
    one only floor(|history| / k) applies.
    """
    return min(MAX_LEVEL, len(state.history) // config.k)


def breaker_window_count(
    state: AgentEscalationState, now: float, config: EscalationConfig
) -> int:
    lo = now - config.cb_window_seconds
    return sum(1 for r in state.history if lo <= r.time <= now)


def check_circuit_breaker(
    state: AgentEscalationState, now: float, config: EscalationConfig
) -> bool:
    """Trip when the breaker-window count strictly exceeds the threshold.

    Tripping forces immediate quarantine: level 4, capabilities cleared.
    """
    if breaker_window_count(state, now, config) > config.cb_threshold:
        state.circuit_broken = True
        state.current_level = MAX_LEVEL
        state.capabilities.clear()
        return True
    return False


@dataclass(frozen=True)
class ResetResult:
    state: AgentEscalationState
    was_broken: bool
    new_level: int
    operator_token: str


def reset_circuit_breaker(
    state: AgentEscalationState,
    operator_token: str,
    now: float,
    config: EscalationConfig,
) -> ResetResult:
    """Manual operator reset; the only way out of a broken or quarantined state.

    Recomputes the level from the pruned history alone and restores the
    scenario-baseline capabilities.  Resetting a non-broken, non-quarantined
    agent is a warning no-op.
    """
    if not operator_token:
        raise ConfigurationError("operator token required for breaker reset")
    if not state.circuit_broken and not state.quarantined:
        return ResetResult(state, False, state.current_level, operator_token)
    state.circuit_broken = False
    prune_history(state, now, config)
    state.current_level = level_from_history(state, config)
    state.capabilities = set(state.baseline_capabilities)
    return ResetResult(state, True, state.current_level, operator_token)


def update_trust(state: AgentEscalationState, applied_level: int) -> AgentEscalationState:
    """The single mutation point for trust.

    Level >= 1 decays trust multiplicatively by 10 percent per level; a
    clean level-0 pass recovers +0.01 up to 1.0.
    """
    if not 0 <= applied_level <= MAX_LEVEL:
        raise ValueError(f"applied level outside 0..4: {applied_level}")
    if applied_level == 0:
        state.trust = min(1.0, state.trust + TRUST_RECOVERY)
    else:
        state.trust = min(1.0, max(0.0, state.trust * (1 - TRUST_DECAY_PER_LEVEL * applied_level)))
    return state


def record_violation(
    state: AgentEscalationState, record: ViolationRecord
) -> AgentEscalationState:
    state.history.append(record)
    return state
