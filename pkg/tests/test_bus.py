import dataclasses

import pytest

from govtelem.bus import (
    EnforcementBus,
    EnforcementMode,
    GateVerdict,
    OutcomeReason,
    gate_unverified,
)
from govtelem.errors import ConfigurationError
from govtelem.escalation import EscalationConfig
from govtelem.model import (
    Classification,
    FailMode,
    Jurisdiction,
    MultiAgentSystem,
    RiskTier,
    Sensitivity,
    TierLevel,
    Verified,
    ViolationType,
)
from govtelem.policy import EnforcementActionKind
from govtelem.rules import AgentDirectory, default_rule_pack
from govtelem.signing import AgentKeyStore, KeyRegistry, sign_event, with_verification

from .conftest import make_event

AGENTS = ["order", "inventory", "payment", "shipping", "analytics"]


CAPABILITIES = {
    "order": {"reserve_stock", "charge_payment", "finalize_order"},
    "inventory": {"restock_inventory"},
    "payment": {"schedule_shipment"},
    "shipping": {"emit_analytics"},
    "analytics": {"confirm_order"},
}


def build_bus(mode=EnforcementMode.FULL, escalation=None, tier_config=None):
    keystore = AgentKeyStore()
    registry = KeyRegistry()
    keystore.provision(AGENTS, registry)
    directory = AgentDirectory(
        jurisdictions={
            "order": Jurisdiction.EU,
            "inventory": Jurisdiction.EU,
            "payment": Jurisdiction.EU,
            "shipping": Jurisdiction.EU,
            "analytics": Jurisdiction.US,
            "sink": Jurisdiction.EU,
        },
        capabilities={k: set(v) for k, v in CAPABILITIES.items()},
    )
    bus = EnforcementBus(
        system=MultiAgentSystem(
            agents=set(AGENTS),
            capabilities={k: set(v) for k, v in CAPABILITIES.items()},
        ),
        pack=default_rule_pack(),
        directory=directory,
        registry=registry,
        escalation_config=escalation or EscalationConfig(window_w_seconds=100.0, k=2),
        tier_config=tier_config,
        mode=mode,
        compliance_sink="sink",
    )
    return bus, keystore, registry


def signed(keystore, **kwargs):
    event = make_event(**kwargs)
    return sign_event(event, keystore.key_for(event.source))


class TestGate:
    def test_unverified_high_tier_denied(self):
        tier = RiskTier(TierLevel.HIGH, FailMode.FAIL_CLOSED)
        event = make_event(verified=Verified.UNKNOWN)
        assert gate_unverified(event, tier) is GateVerdict.DENY_UNVERIFIED

    def test_unverified_low_tier_passes_with_alert(self):
        tier = RiskTier(TierLevel.LOW, FailMode.FAIL_OPEN)
        event = make_event(verified=Verified.FALSE)
        assert gate_unverified(event, tier) is GateVerdict.PASS_WITH_ALERT

    def test_verified_proceeds(self):
        tier = RiskTier(TierLevel.HIGH, FailMode.FAIL_CLOSED)
        event = with_verification(make_event(), Verified.TRUE)
        assert gate_unverified(event, tier) is GateVerdict.PROCEED


class TestPipelineOrdering:
    def test_replay_rejected_before_policy(self):
        bus, keystore, _ = build_bus()
        event = signed(keystore, nonce=5, timestamp=1.0)
        bus.process_event(event)
        evaluated = bus.counters.policy_evaluated
        outcome = bus.process_event(event)
        assert outcome.reason is OutcomeReason.REPLAY_REJECTED
        assert outcome.blocked
        assert bus.counters.policy_evaluated == evaluated
        assert bus.counters.replay_rejected == 1

    def test_fail_closed_unverified_never_reaches_policy(self):
        bus, _, _ = build_bus()
        event = make_event(
            classification=Classification.PII,
            jurisdiction=Jurisdiction.EU,
            signature=b"\x00" * 64,
        )
        outcome = bus.process_event(event)
        assert outcome.reason is OutcomeReason.FAIL_CLOSED_UNVERIFIED
        assert outcome.decided_action is None
        assert outcome.blocked
        assert bus.counters.policy_evaluated == 0
        assert bus.counters.gate_denied == 1

    def test_unverified_low_tier_fail_open_pass(self):
        bus, _, _ = build_bus()
        event = make_event(
            classification=Classification.PUBLIC, sensitivity=Sensitivity.LOW
        )  # unsigned -> UNKNOWN, low tier -> fail open
        outcome = bus.process_event(event)
        assert outcome.reason is OutcomeReason.FAIL_OPEN_PASS
        assert outcome.operation_completed
        assert any(a.kind == "unverified-pass" for a in bus.alerts)

    def test_clean_verified_event_allows_with_recovery(self):
        bus, keystore, _ = build_bus()
        bus.states["order"].trust = 0.5
        outcome = bus.process_event(signed(keystore))
        assert outcome.applied_level == 0
        assert outcome.operation_completed
        assert outcome.verified is Verified.TRUE
        assert bus.states["order"].trust == pytest.approx(0.51)


class TestViolationPath:
    def consent_event(self, keystore, t=1.0, nonce=None):
        return signed(
            keystore,
            timestamp=t,
            source="analytics",
            receiver="order",
            operation="confirm_order",
            context={"consent_flag": 0},
            lineage=("order", "payment", "shipping", "analytics"),
            nonce=nonce if nonce is not None else int(t * 1000),
        )

    def test_deny_blocks_and_records_history(self):
        bus, keystore, _ = build_bus()
        outcome = bus.process_event(self.consent_event(keystore))
        assert outcome.decided_action.action is EnforcementActionKind.DENY
        assert outcome.blocked
        assert outcome.matched_rule == "consent-required"
        assert outcome.violation is ViolationType.CONSENT_MISSING
        assert outcome.applied_level == 1  # base level, empty history
        assert len(bus.states["analytics"].history) == 1

    def test_graduated_levels_rise_with_history(self):
        bus, keystore, _ = build_bus()  # k=2, W=100
        levels = []
        for i in range(6):
            outcome = bus.process_event(self.consent_event(keystore, t=1.0 + i))
            levels.append(outcome.applied_level)
        # floor(history/2) adds one level per two prior violations
        assert levels == [1, 1, 2, 2, 3, 3]
        assert levels == sorted(levels)

    def test_deny_blocks_even_at_redirect_level(self):
        # A DENY decision blocks the single operation at any graduated level;
        # the redirect semantics apply to non-deny decisions only.
        bus, keystore, _ = build_bus()
        outcomes = [
            bus.process_event(self.consent_event(keystore, t=1.0 + i)) for i in range(5)
        ]
        escalated = outcomes[4]
        assert escalated.applied_level == 3
        assert escalated.blocked
        assert not escalated.redirected

    def test_redirect_completes_against_sink(self):
        # A flag-action rule whose graduated level reaches 3 reroutes the
        # operation to the compliance sink; the original receiver never sees it.
        from govtelem.rules import ConditionOperator, GovernanceRule, RuleCondition, RulePack

        flag_rule = GovernanceRule(
            id="suspicious-flag",
            violation=ViolationType.BIAS_THRESHOLD,
            conditions=(RuleCondition("context.suspicious", ConditionOperator.EQ, 1),),
            action=EnforcementActionKind.FLAG,
            confidence=0.8,
            base_level=2,
        )
        keystore = AgentKeyStore()
        registry = KeyRegistry()
        keystore.provision(AGENTS, registry)
        bus = EnforcementBus(
            system=MultiAgentSystem(agents=set(AGENTS)),
            pack=RulePack(name="flags", rules=(flag_rule,)),
            directory=AgentDirectory(
                jurisdictions={**{a: Jurisdiction.EU for a in AGENTS}, "sink": Jurisdiction.EU}
            ),
            registry=registry,
            escalation_config=EscalationConfig(window_w_seconds=100.0, k=1),
            compliance_sink="sink",
        )

        def suspicious(t, nonce):
            return sign_event(
                make_event(
                    timestamp=t,
                    source="payment",
                    receiver="shipping",
                    operation="schedule_shipment",
                    context={"suspicious": 1},
                    lineage=("order", "payment"),
                    nonce=nonce,
                ),
                keystore.key_for("payment"),
            )

        first = bus.process_event(suspicious(1.0, 1))
        assert first.applied_level == 2  # FLAG floor
        assert first.operation_completed and not first.redirected
        second = bus.process_event(suspicious(2.0, 2))
        assert second.applied_level == 3
        assert second.redirected
        assert second.redirect_target == "sink"
        assert second.operation_completed  # against the sink
        assert second.prevents_flow

    def test_trust_decays_on_enforcement(self):
        bus, keystore, _ = build_bus()
        bus.process_event(self.consent_event(keystore))
        assert bus.states["analytics"].trust == pytest.approx(0.9)

    def test_quarantine_absorbs_subsequent_events(self):
        bus, keystore, _ = build_bus()
        # Spaced wider than the breaker window so level 4 is reached through
        # the graduated path alone (history floor, not the breaker).
        for i in range(7):
            bus.process_event(self.consent_event(keystore, t=1.0 + i * 14.0))
        state = bus.states["analytics"]
        assert state.current_level == 4
        assert not state.circuit_broken
        assert state.capabilities == set()
        # Any further event from the agent is auto-denied, including clean ones.
        clean = signed(
            keystore,
            timestamp=90.0,
            source="analytics",
            receiver="order",
            operation="confirm_order",
            context={"consent_flag": 1},
            lineage=("order", "analytics"),
            nonce=999,
        )
        outcome = bus.process_event(clean)
        assert outcome.blocked
        assert outcome.applied_level == 4
        assert bus.counters.quarantine_denials == 1

    def test_circuit_breaker_trips_on_burst(self):
        bus, keystore, _ = build_bus(
            escalation=EscalationConfig(window_w_seconds=100.0, k=1)
        )  # breaker: >3 within 25s
        outcomes = [
            bus.process_event(self.consent_event(keystore, t=1.0 + i * 0.1))
            for i in range(4)
        ]
        assert outcomes[-1].reason is OutcomeReason.CIRCUIT_BREAKER
        assert outcomes[-1].applied_level == 4
        assert bus.states["analytics"].circuit_broken
        assert bus.counters.circuit_breaker_trips == 1

    def test_breaker_reset_restores_agent(self):
        bus, keystore, _ = build_bus(
            escalation=EscalationConfig(window_w_seconds=100.0, k=1)
        )
        for i in range(4):
            bus.process_event(self.consent_event(keystore, t=1.0 + i * 0.1))
        audit_before = bus.audit_log.size
        result = bus.reset_breaker("analytics", "operator-7")
        assert result.was_broken
        assert not bus.states["analytics"].circuit_broken
        assert bus.states["analytics"].capabilities == {"confirm_order"}
        assert bus.audit_log.size == audit_before + 1  # exactly one reset record


class TestLineageFailure:
    def test_unresolvable_lineage_fail_closed_on_high_tier(self):
        bus, keystore, _ = build_bus()
        event = signed(
            keystore,
            classification=Classification.PII,
            jurisdiction=Jurisdiction.EU,
            source="order",
            receiver="order",
            operation="finalize_order",
            lineage=("order", "ghost-agent", "order"),
            nonce=77,
        )
        outcome = bus.process_event(event)
        assert outcome.blocked
        assert outcome.reason is OutcomeReason.FAIL_CLOSED_UNVERIFIED
        assert bus.counters.stage_failures == 1

    def test_unresolvable_lineage_fail_open_passes_with_alert(self):
        from govtelem.model import TierConfig

        open_tiers = TierConfig(fail_modes={t: FailMode.FAIL_OPEN for t in TierLevel})
        bus, keystore, _ = build_bus(tier_config=open_tiers)
        event = signed(
            keystore,
            classification=Classification.PII,
            jurisdiction=Jurisdiction.EU,
            source="order",
            receiver="order",
            operation="finalize_order",
            lineage=("order", "ghost-agent", "order"),
            nonce=78,
        )
        outcome = bus.process_event(event)
        assert outcome.operation_completed
        assert any(a.kind == "lineage-unresolved" for a in bus.alerts)

    def test_conjunction_short_circuits_before_chain_check(self):
        # A non-PII event never reaches the chain condition, so an unknown
        # lineage agent is irrelevant to it.
        bus, keystore, _ = build_bus()
        event = signed(
            keystore,
            classification=Classification.PUBLIC,
            sensitivity=Sensitivity.LOW,
            source="order",
            receiver="order",
            operation="finalize_order",
            lineage=("order", "ghost-agent", "order"),
            nonce=79,
        )
        outcome = bus.process_event(event)
        assert outcome.operation_completed
        assert bus.counters.stage_failures == 0


class TestObserveMode:
    def test_decisions_recorded_but_nothing_applied(self):
        bus, keystore, _ = build_bus(mode=EnforcementMode.OBSERVE_ONLY)
        event = signed(
            keystore,
            source="analytics",
            receiver="order",
            operation="confirm_order",
            context={"consent_flag": 0},
            lineage=("order", "analytics"),
        )
        outcome = bus.process_event(event)
        assert outcome.decided_action.action is EnforcementActionKind.DENY
        assert outcome.applied_level == 0
        assert outcome.operation_completed
        assert bus.states["analytics"].history == []
        assert bus.states["analytics"].trust == 1.0


class TestBoundaryMode:
    def test_lineage_truncated_before_evaluation(self):
        residency_event = dict(
            classification=Classification.PII,
            jurisdiction=Jurisdiction.EU,
            source="order",
            receiver="order",
            operation="finalize_order",
            lineage=("order", "payment", "shipping", "analytics", "order"),
        )
        full_bus, keystore, _ = build_bus(mode=EnforcementMode.FULL)
        boundary_bus, keystore2, _ = build_bus(mode=EnforcementMode.BOUNDARY_ONLY)
        full = full_bus.process_event(signed(keystore, **residency_event, nonce=1))
        boundary = boundary_bus.process_event(signed(keystore2, **residency_event, nonce=2))
        assert full.blocked  # whole chain shows the US hop
        assert boundary.operation_completed  # truncated view is EU to EU


class TestAuditTotality:
    def test_every_event_yields_exactly_one_record(self):
        bus, keystore, _ = build_bus()
        for i in range(20):
            bus.process_event(signed(keystore, timestamp=1.0 + i, nonce=i))
        # plus one replay and one unverified
        replay = signed(keystore, timestamp=30.0, nonce=0)
        bus.process_event(replay)
        bus.process_event(make_event(timestamp=31.0, nonce=500))
        assert bus.audit_log.size == bus.counters.processed == 22


class TestConfiguration:
    def test_unknown_sink_rejected_at_construction(self):
        keystore = AgentKeyStore()
        registry = KeyRegistry()
        keystore.provision(AGENTS, registry)
        with pytest.raises(ConfigurationError):
            EnforcementBus(
                system=MultiAgentSystem(agents=set(AGENTS)),
                pack=default_rule_pack(),
                directory=AgentDirectory(
                    jurisdictions={a: Jurisdiction.EU for a in AGENTS}
                ),
                registry=registry,
                compliance_sink="missing-sink",
            )


class TestLatency:
    def test_latency_fields_populated(self):
        bus, keystore, _ = build_bus()
        outcome = bus.process_event(signed(keystore))
        assert outcome.latency_detection_ms > 0
        assert outcome.latency_e2e_ms >= outcome.latency_detection_ms
