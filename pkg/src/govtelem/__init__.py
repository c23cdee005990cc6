"""Closed-loop governance enforcement for multi-agent telemetry.

Signed telemetry events flow through verification, replay prevention,
declarative policy evaluation and graduated escalation, with results audited
in a tamper-evident log and fed back into per-agent trust and capabilities.
A deterministic simulation harness and Monte Carlo validators reproduce the
system's headline metrics at desk scale.
"""

from .bus import EnforcementBus, EnforcementMode, EnforcementOutcome, OutcomeReason
from .canonical import canonical_serialize, event_digest, parse_canonical
from .escalation import AgentEscalationState, EscalationConfig, ViolationRecord
from .hmm import HmmModel, baum_welch_train, calibrate_threshold, forward_loglik
from .model import (
    Classification,
    FailMode,
    GovernanceMetadata,
    GovernanceTelemetryEvent,
    Jurisdiction,
    MultiAgentSystem,
    RiskTier,
    Sensitivity,
    TierConfig,
    TierLevel,
    Verified,
    ViolationType,
    derive_risk_tier,
)
from .policy import (
    EnforcementActionKind,
    Policy,
    PolicyDecision,
    action_max,
    evaluate_policy_set,
    parallel_compose,
    sequential_compose,
)
from .rules import (
    AgentDirectory,
    GovernanceRule,
    RuleCondition,
    RulePack,
    compile_rule,
    default_rule_pack,
    lineage_cross_check,
)
from .scenario import ScenarioConfig, generate_run, stream_digest
from .harness import (
    AttackKind,
    MetricsReport,
    attack_campaign,
    bootstrap_ci,
    run_scenario,
    sensitivity_sweep,
)
from .theorems import (
    TheoremRunConfig,
    validate_t2_convergence,
    validate_t3_determinism,
    validate_t4_false_quarantine,
)

__version__ = "0.1.0"

__all__ = [
    "AgentDirectory",
    "AgentEscalationState",
    "AttackKind",
    "Classification",
    "EnforcementActionKind",
    "EnforcementBus",
    "EnforcementMode",
    "EnforcementOutcome",
    "EscalationConfig",
    "FailMode",
    "GovernanceMetadata",
    "GovernanceRule",
    "GovernanceTelemetryEvent",
    "HmmModel",
    "Jurisdiction",
    "MetricsReport",
    "MultiAgentSystem",
    "OutcomeReason",
    "Policy",
    "PolicyDecision",
    "RiskTier",
    "RuleCondition",
    "RulePack",
    "ScenarioConfig",
    "Sensitivity",
    "TheoremRunConfig",
    "TierConfig",
    "TierLevel",
    "Verified",
    "ViolationRecord",
    "ViolationType",
    "action_max",
    "attack_campaign",
    "baum_welch_train",
    "bootstrap_ci",
    "calibrate_threshold",
    "canonical_serialize",
    "compile_rule",
    "default_rule_pack",
    "derive_risk_tier",
    "evaluate_policy_set",
    "event_digest",
    "forward_loglik",
    "generate_run",
    "lineage_cross_check",
    "parallel_compose",
    "parse_canonical",
    "run_scenario",
    "sensitivity_sweep",
    "sequential_compose",
    "stream_digest",
    "validate_t2_convergence",
    "validate_t3_determinism",
    "validate_t4_false_quarantine",
]
