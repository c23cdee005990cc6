"""Enforcement bus: the closed loop from verified telemetry to intervention.

Pipeline order is normative: verify signature, replay-check the nonce, gate
unverified events by risk-tier fail mode, enrich with the acting agent's
windowed violation history, evaluate the policy set, map the decision plus
history to a graduated level, apply the level, audit, and feed trust and
capability updates back to agent state.  Replay and verification rejections
never reach policy evaluation.

Interplay between the decision's action and the graduated level: the applied
level is the maximum of the level implied by the action (FLAG at least L2,
QUARANTINE at least L4) and the graduated level from history.  DENY carries
no level floor; it blocks the single operation at whatever level history
implies and contributes the rule's base level to escalation.  QUARANTINE and
level 4 block the agent: capabilities clear and every subsequent event from
it is denied until an operator reset.  Level 3 reroutes the operation to the
scenario's compliance sink; the original receiver never sees it.

Fail modes: an event whose verification state is not TRUE is denied outright
in a fail-closed tier and passed with an alert in a fail-open tier.  An
internal stage failure (an unresolvable lineage agent, for instance) is
treated the same way.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .audit import MerkleAuditLog
from .canonical import canonical_serialize
from .errors import ConfigurationError, LineageResolutionError
from .escalation import (
    AgentEscalationState,
    EscalationConfig,
    ViolationRecord,
    check_circuit_breaker,
    compute_level,
    prune_history,
    record_violation,
    reset_circuit_breaker,
    update_trust,
)
from .model import (
    AgentId,
    FailMode,
    GovernanceTelemetryEvent,
    MultiAgentSystem,
    TierConfig,
    Verified,
    ViolationType,
    derive_risk_tier,
)
from .policy import EnforcementActionKind, PolicyDecision, combine_parallel
from .replay import ReplayFilter
from .rules import AgentDirectory, RulePack
from .signing import KeyRegistry, verify_event, with_verification


class EnforcementMode(Enum):
    FULL = "FULL"
    BOUNDARY_ONLY = "BOUNDARY_ONLY"
    OBSERVE_ONLY = "OBSERVE_ONLY"


class OutcomeReason(Enum):
    POLICY = "POLICY"
    CIRCUIT_BREAKER = "CIRCUIT_BREAKER"
    FAIL_CLOSED_UNVERIFIED = "FAIL_CLOSED_UNVERIFIED"
    FAIL_OPEN_PASS = "FAIL_OPEN_PASS"
    REPLAY_REJECTED = "REPLAY_REJECTED"


class GateVerdict(Enum):
    PROCEED = "PROCEED"
    DENY_UNVERIFIED = "DENY_UNVERIFIED"
    PASS_WITH_ALERT = "PASS_WITH_ALERT"


# Minimum level implied by a decision action; DENY blocks without a floor.
_ACTION_LEVEL_FLOOR = {
    EnforcementActionKind.ALLOW: 0,
    EnforcementActionKind.FLAG: 2,
    EnforcementActionKind.QUARANTINE: 4,
    EnforcementActionKind.DENY: 0,
}


def gate_unverified(event: GovernanceTelemetryEvent, tier) -> GateVerdict:
    """Fail-mode gate for events whose verification state is not TRUE."""
    if event.verified is Verified.TRUE:
        return GateVerdict.PROCEED
    if tier.fail_mode is FailMode.FAIL_CLOSED:
        return GateVerdict.DENY_UNVERIFIED
    return GateVerdict.PASS_WITH_ALERT


@dataclass(frozen=True)
class EnforcementOutcome:
    event_digest: bytes
    timestamp: float
    source: AgentId
    receiver: AgentId
    operation: str
    verified: Verified
    decided_action: PolicyDecision | None
    applied_level: int
    operation_completed: bool
    redirected: bool
    redirect_target: AgentId | None
    reason: OutcomeReason
    matched_rule: str | None
    violation: ViolationType | None
    latency_detection_ms: float
    latency_e2e_ms: float

    @property
    def blocked(self) -> bool:
        return not self.operation_completed

    @property
    def prevents_flow(self) -> bool:
        return self.blocked or self.redirected


@dataclass(frozen=True)
class Alert:
    time: float
    kind: str
    agent: AgentId
    event_digest_hex: str
    detail: str


@dataclass
class StageCounters:
    processed: int = 0
    replay_rejected: int = 0
    gate_denied: int = 0
    policy_evaluated: int = 0
    circuit_breaker_trips: int = 0
    quarantine_denials: int = 0
    stage_failures: int = 0


class EnforcementBus:
    """Per-run enforcement engine owning agent state, trusted-plane checks and the audit log."""

    def __init__(
        self,
        system: MultiAgentSystem,
        pack: RulePack,
        directory: AgentDirectory,
        registry: KeyRegistry,
        escalation_config: EscalationConfig | None = None,
        tier_config: TierConfig | None = None,
        mode: EnforcementMode = EnforcementMode.FULL,
        compliance_sink: AgentId | None = None,
        replay_filter: ReplayFilter | None = None,
        audit_path: str | Path | None = None,
        replay_capacity: int = 100_000,
    ):
        self.system = system
        self.pack = pack
        self.directory = directory
        self.registry = registry
        self.escalation_config = escalation_config or EscalationConfig()
        self.tier_config = tier_config or TierConfig()
        self.mode = mode
        if compliance_sink is not None and compliance_sink not in directory.jurisdictions:
            raise ConfigurationError(
                f"redirect sink {compliance_sink!r} is not a registered agent"
            )
        self.compliance_sink = compliance_sink
        self.replay_filter = replay_filter or ReplayFilter(capacity=replay_capacity)
        self.audit_log = MerkleAuditLog(audit_path)
        self.counters = StageCounters()
        self.alerts: list[Alert] = []
        self._compiled = [(rule, rule_policy) for rule, rule_policy in
                          zip(pack.rules, pack.compile(directory))]
        self.states: dict[AgentId, AgentEscalationState] = {
            agent: AgentEscalationState(
                agent=agent,
                trust=system.trust.get(agent, 1.0),
                capabilities=set(system.capabilities.get(agent, set())),
                baseline_capabilities=frozenset(system.capabilities.get(agent, set())),
            )
            for agent in system.agents
        }
        self._quarantine_cause: dict[AgentId, OutcomeReason] = {}

    # -- helpers ------------------------------------------------------------

    def _alert(self, event: GovernanceTelemetryEvent, digest: bytes, kind: str, detail: str):
        self.alerts.append(
            Alert(event.timestamp, kind, event.source, digest.hex(), detail)
        )

    def _audit(self, outcome: EnforcementOutcome) -> None:
        record = {
            "time": outcome.timestamp,
            "event": outcome.event_digest.hex(),
            "source": outcome.source,
            "receiver": outcome.receiver,
            "operation": outcome.operation,
            "verified": outcome.verified.value,
            "action": outcome.decided_action.action.name if outcome.decided_action else None,
            "confidence": outcome.decided_action.confidence if outcome.decided_action else None,
            "level": outcome.applied_level,
            "completed": outcome.operation_completed,
            "redirected": outcome.redirected,
            "reason": outcome.reason.value,
            "rule": outcome.matched_rule,
            "violation": outcome.violation.value if outcome.violation else None,
        }
        self.audit_log.append(json.dumps(record, sort_keys=True).encode("utf-8"))

    def _evaluate_rules(self, event: GovernanceTelemetryEvent):
        """Evaluate every compiled rule, keeping provenance of the winning decision.

        Equivalent to parallel composition (max action, max confidence) while
        retaining which rule supplied the winning action.  Tie-break for the
        winner is (action, confidence, pack order), which is deterministic
        under any evaluation order.
        """
        decisions = []
        winner = None
        winner_decision = None
        for rule, rule_policy in self._compiled:
            decision = rule_policy.evaluate(event)
            decisions.append(decision)
            if decision.action is EnforcementActionKind.ALLOW:
                continue
            if (
                winner_decision is None
                or decision.action > winner_decision.action
                or (
                    decision.action == winner_decision.action
                    and decision.confidence > winner_decision.confidence
                )
            ):
                winner, winner_decision = rule, decision
        return combine_parallel(decisions), winner

    # -- pipeline -----------------------------------------------------------

    def process_event(self, event: GovernanceTelemetryEvent) -> EnforcementOutcome:
        start = time.perf_counter()
        self.counters.processed += 1
        now = event.timestamp
        observe = self.mode is EnforcementMode.OBSERVE_ONLY

        # Stage 1: signature verification.  The canonical form excludes the
        # verification state, so it is computed once and reused for the digest.
        canonical = canonical_serialize(event)
        digest = hashlib.sha256(canonical).digest()
        verified = verify_event(event, self.registry, canonical=canonical)
        event = with_verification(event, verified)

        def finish(
            decided: PolicyDecision | None,
            level: int,
            completed: bool,
            reason: OutcomeReason,
            redirected: bool = False,
            redirect_target: AgentId | None = None,
            matched=None,
            violation=None,
            detection_ms: float | None = None,
        ) -> EnforcementOutcome:
            detect = detection_ms if detection_ms is not None else (
                (time.perf_counter() - start) * 1000.0
            )
            outcome = EnforcementOutcome(
                event_digest=digest,
                timestamp=event.timestamp,
                source=event.source,
                receiver=event.receiver,
                operation=event.operation,
                verified=verified,
                decided_action=decided,
                applied_level=level,
                operation_completed=completed,
                redirected=redirected,
                redirect_target=redirect_target,
                reason=reason,
                matched_rule=matched,
                violation=violation,
                latency_detection_ms=detect,
                latency_e2e_ms=0.0,  # replaced below
            )
            self._audit(outcome)
            e2e = (time.perf_counter() - start) * 1000.0
            return dataclasses.replace(outcome, latency_e2e_ms=e2e)

        # Stage 2: replay prevention.
        if not self.replay_filter.check(event.source, event.nonce, now).fresh:
            self.counters.replay_rejected += 1
            return finish(None, 0, observe, OutcomeReason.REPLAY_REJECTED)

        state = self.states.get(event.source)
        if state is None:
            # Unknown source agent: treat like an unverifiable event.
            event = with_verification(event, Verified.UNKNOWN)
            verified = Verified.UNKNOWN
            state = self.states.setdefault(
                event.source, AgentEscalationState(agent=event.source)
            )

        # Quarantined agents are cut off until an operator reset.
        if not observe and (state.circuit_broken or state.quarantined):
            self.counters.quarantine_denials += 1
            cause = self._quarantine_cause.get(event.source, OutcomeReason.POLICY)
            outcome = finish(None, 4, False, cause)
            update_trust(state, 4)
            return outcome

        # Stage 3: fail-mode gate for unverified telemetry.
        tier = derive_risk_tier(event, self.tier_config)
        if verified is not Verified.TRUE:
            verdict = gate_unverified(event, tier)
            if verdict is GateVerdict.DENY_UNVERIFIED and not observe:
                self.counters.gate_denied += 1
                return finish(None, state.current_level, False,
                              OutcomeReason.FAIL_CLOSED_UNVERIFIED)
            self._alert(event, digest, "unverified-pass",
                        f"verified={verified.value} tier={tier.tier.value}")

        # Stage 4: enrich with windowed history.
        prune_history(state, now, self.escalation_config)

        # Stage 5: policy evaluation (boundary mode sees only the last hop).
        eval_event = event
        if self.mode is EnforcementMode.BOUNDARY_ONLY and len(event.governance.lineage) > 1:
            eval_event = dataclasses.replace(
                event,
                governance=dataclasses.replace(
                    event.governance, lineage=event.governance.lineage[-1:]
                ),
            )
        try:
            decision, winner = self._evaluate_rules(eval_event)
            self.counters.policy_evaluated += 1
        except LineageResolutionError as exc:
            self.counters.stage_failures += 1
            self._alert(event, digest, "lineage-unresolved", str(exc))
            if tier.fail_mode is FailMode.FAIL_CLOSED and not observe:
                return finish(None, state.current_level, False,
                              OutcomeReason.FAIL_CLOSED_UNVERIFIED)
            return finish(None, 0, True, OutcomeReason.FAIL_OPEN_PASS)

        detection_ms = (time.perf_counter() - start) * 1000.0

        if observe:
            return finish(decision, 0, True,
                          OutcomeReason.POLICY if decision.action
                          is not EnforcementActionKind.ALLOW else OutcomeReason.FAIL_OPEN_PASS,
                          matched=winner.id if winner else None,
                          violation=winner.violation if winner else None,
                          detection_ms=detection_ms)

        # Clean pass: level 0 and slow trust recovery.
        if decision.action is EnforcementActionKind.ALLOW:
            reason = (OutcomeReason.FAIL_OPEN_PASS if verified is not Verified.TRUE
                      else OutcomeReason.POLICY)
            outcome = finish(decision, 0, True, reason, detection_ms=detection_ms)
            update_trust(state, 0)
            return outcome

        # Violation: record, escalate, maybe trip the breaker.
        violation = winner.violation if winner else None
        graduated = (
            compute_level(violation, state, self.escalation_config, self.pack)
            if violation is not None
            else 1
        )
        record_violation(
            state,
            ViolationRecord(
                event_ref=digest,
                policy_id=winner.id if winner else "unknown",
                decision=PolicyDecision(decision.action, decision.confidence),
                time=now,
            ),
        )
        reason = OutcomeReason.POLICY
        if check_circuit_breaker(state, now, self.escalation_config):
            self.counters.circuit_breaker_trips += 1
            self._quarantine_cause[event.source] = OutcomeReason.CIRCUIT_BREAKER
            reason = OutcomeReason.CIRCUIT_BREAKER
            applied = 4
        else:
            applied = max(graduated, _ACTION_LEVEL_FLOOR[decision.action])

        redirected = False
        redirect_target: AgentId | None = None
        completed = True

        if applied >= 4:
            state.current_level = 4
            state.capabilities.clear()
            self._quarantine_cause.setdefault(event.source, OutcomeReason.POLICY)
            completed = False
        else:
            state.current_level = applied
            if decision.action is EnforcementActionKind.DENY:
                completed = False
            elif applied == 3:
                if self.compliance_sink is None:
                    raise ConfigurationError("redirect level reached with no compliance sink")
                redirected = True
                redirect_target = self.compliance_sink
                completed = True
            elif applied == 1:
                self._alert(event, digest, "violation-alert",
                            f"rule={winner.id if winner else '?'}")

        outcome = finish(
            decision,
            applied,
            completed,
            reason,
            redirected=redirected,
            redirect_target=redirect_target,
            matched=winner.id if winner else None,
            violation=violation,
            detection_ms=detection_ms,
        )
        update_trust(state, applied)
        return outcome

    # -- operator surface ---------------------------------------------------

    def reset_breaker(self, agent: AgentId, operator_token: str):
        """Manual quarantine/breaker reset with audit attribution."""
        state = self.states[agent]
        now = max((r.time for r in state.history), default=0.0)
        result = reset_circuit_breaker(state, operator_token, now, self.escalation_config)
        self._quarantine_cause.pop(agent, None)
        record = {
            "op": "breaker-reset",
            "agent": agent,
            "operator": operator_token,
            "was_broken": result.was_broken,
            "new_level": result.new_level,
        }
        self.audit_log.append(json.dumps(record, sort_keys=True).encode("utf-8"))
        return result

    def trust_of(self, agent: AgentId) -> float:
        return self.states[agent].trust


# -- state snapshots (operator tooling) --------------------------------------

def states_to_dict(states: dict[AgentId, AgentEscalationState]) -> dict:
    return {
        agent: {
            "level": s.current_level,
            "circuit_broken": s.circuit_broken,
            "trust": s.trust,
            "capabilities": sorted(s.capabilities),
            "baseline_capabilities": sorted(s.baseline_capabilities),
            "history": [
                {
                    "event": r.event_ref.hex(),
                    "policy": r.policy_id,
                    "action": r.decision.action.name,
                    "confidence": r.decision.confidence,
                    "time": r.time,
                }
                for r in s.history
            ],
        }
        for agent, s in sorted(states.items())
    }


def states_from_dict(doc: dict) -> dict[AgentId, AgentEscalationState]:
    states = {}
    for agent, raw in doc.items():
        history = [
            ViolationRecord(
                event_ref=bytes.fromhex(r["event"]),
                policy_id=r["policy"],
                decision=PolicyDecision(
                    EnforcementActionKind[r["action"]], r["confidence"]
                ),
                time=r["time"],
            )
            for r in raw.get("history", [])
        ]
        states[agent] = AgentEscalationState(
            agent=agent,
            history=history,
            current_level=raw["level"],
            circuit_broken=raw["circuit_broken"],
            trust=raw["trust"],
            capabilities=set(raw.get("capabilities", [])),
            baseline_capabilities=frozenset(raw.get("baseline_capabilities", [])),
        )
    return states
