"""Core domain types for governed multi-agent telemetry.

An agent system is a set of agents with communication channels, a capability
map and continuous trust levels.  Every observed inter-agent operation is a
``GovernanceTelemetryEvent`` carrying governance metadata (classification,
jurisdiction, sensitivity, delegation lineage and a three-valued verification
state).  These types are immutable values once constructed; mutation of
system-level state (trust, capabilities) is owned by the enforcement bus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Union

from .errors import ConfigurationError

AgentId = str
Capability = str

ContextValue = Union[str, int, float]

# Self-operations are the only case where source == receiver is legal.
DEFAULT_SELF_OPERATIONS = frozenset({"finalize_order"})


class Classification(Enum):
    PII = "PII"
    FINANCIAL = "FINANCIAL"
    OPERATIONAL = "OPERATIONAL"
    PUBLIC = "PUBLIC"


class Jurisdiction(Enum):
    EU = "EU"
    US = "US"
    OTHER = "OTHER"


class Sensitivity(Enum):
    HIGH = "HIGH"
    MEDIUM = "MEDIUM"
    LOW = "LOW"


class Verified(Enum):
    """Three-valued verification state. Never collapse to a boolean."""

    TRUE = "TRUE"
    FALSE = "FALSE"
    UNKNOWN = "UNKNOWN"


class ViolationType(Enum):
    CONSENT_MISSING = "CONSENT_MISSING"
    BIAS_THRESHOLD = "BIAS_THRESHOLD"
    DATA_RESIDENCY = "DATA_RESIDENCY"
    UNAUTHORIZED_ACCESS = "UNAUTHORIZED_ACCESS"


class TierLevel(Enum):
    HIGH = "HIGH"
    MEDIUM = "MEDIUM"
    LOW = "LOW"


class FailMode(Enum):
    FAIL_CLOSED = "FAIL_CLOSED"
    FAIL_OPEN = "FAIL_OPEN"


@dataclass(frozen=True)
class RiskTier:
    tier: TierLevel
    fail_mode: FailMode


@dataclass(frozen=True)
class GovernanceMetadata:
    """Governance attributes attached to every telemetry event.

    ``lineage`` is the ordered delegation chain the datum traversed, oldest
    first; its last entry is the agent currently handling the datum (the
    event source).  ``verified`` is set by the verifier, never by the
    emitting agent.
    """

    classification: Classification
    jurisdiction: Jurisdiction
    sensitivity: Sensitivity
    lineage: tuple[AgentId, ...] = ()
    verified: Verified = Verified.UNKNOWN

    def __post_init__(self):
        for agent in self.lineage:
            if not agent:
                raise ValueError("lineage entries must be non-empty agent ids")


@dataclass(frozen=True)
class GovernanceTelemetryEvent:
    """One observed inter-agent operation.

    The context map carries payload attributes (consent_flag,
    disparate_impact, destination_jurisdiction, ...) restricted to strings,
    integers and reals so the canonical wire form stays unambiguous.
    Timestamps are simulation-clock seconds, strictly positive.
    """

    timestamp: float
    source: AgentId
    receiver: AgentId
    operation: str
    context: Mapping[str, ContextValue]
    governance: GovernanceMetadata
    nonce: int
    signature: bytes | None = None
    self_operations: frozenset[str] = field(
        default=DEFAULT_SELF_OPERATIONS, repr=False, compare=False
    )

    def __post_init__(self):
        if not (isinstance(self.timestamp, (int, float)) and self.timestamp > 0):
            raise ValueError("timestamp must be strictly positive")
        if math.isnan(self.timestamp) or math.isinf(self.timestamp):
            raise ValueError("timestamp must be finite")
        if not self.source or not self.receiver:
            raise ValueError("source and receiver must be non-empty")
        if not self.operation:
            raise ValueError("operation must be non-empty")
        if self.source == self.receiver and self.operation not in self.self_operations:
            raise ValueError(
                f"source == receiver only allowed for whitelisted self-operations, "
                f"got {self.operation!r}"
            )
        if not (0 <= self.nonce < 2**64):
            raise ValueError("nonce must fit in 64 bits")
        for key, value in self.context.items():
            # bool is an int subclass; exclude it explicitly.
            if isinstance(value, bool) or not isinstance(value, (str, int, float)):
                raise ValueError(
                    f"context[{key!r}] must be a string, integer or real, "
                    f"got {type(value).__name__}"
                )

    @property
    def verified(self) -> Verified:
        return self.governance.verified


@dataclass
class MultiAgentSystem:
    """Agents, channels, capability map and trust levels.

    Trust mutation is serialized per agent by the enforcement bus; this type
    only enforces the structural invariants.
    """

    agents: set[AgentId]
    channels: set[tuple[AgentId, AgentId, str]] = field(default_factory=set)
    capabilities: dict[AgentId, set[Capability]] = field(default_factory=dict)
    trust: dict[AgentId, float] = field(default_factory=dict)

    def __post_init__(self):
        for src, rcv, _label in self.channels:
            if src not in self.agents or rcv not in self.agents:
                raise ValueError(f"channel endpoint outside agent set: {src}->{rcv}")
        for agent in self.agents:
            self.capabilities.setdefault(agent, set())
            self.trust.setdefault(agent, 1.0)
        for agent, value in self.trust.items():
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"trust[{agent}] outside [0, 1]: {value}")


@dataclass(frozen=True)
class TierConfig:
    """Deterministic mapping from governance metadata to a risk tier.

    Default table: EU PII is high risk, financial data or high sensitivity is
    medium risk, everything else low risk.  High and medium tiers fail
    closed, low fails open.
    """

    fail_modes: Mapping[TierLevel, FailMode] = field(
        default_factory=lambda: {
            TierLevel.HIGH: FailMode.FAIL_CLOSED,
            TierLevel.MEDIUM: FailMode.FAIL_CLOSED,
            TierLevel.LOW: FailMode.FAIL_OPEN,
        }
    )

    def __post_init__(self):
        missing = [t for t in TierLevel if t not in self.fail_modes]
        if missing:
            raise ConfigurationError(f"fail mode missing for tiers: {missing}")


def derive_risk_tier(
    event: GovernanceTelemetryEvent, config: TierConfig | None = None
) -> RiskTier:
    """Assign a risk tier from the event's governance metadata.

    Total and deterministic: same event and config always yield the same
    tier, across calls and process restarts.
    """
    config = config or TierConfig()
    gov = event.governance
    if gov.classification is Classification.PII and gov.jurisdiction is Jurisdiction.EU:
        level = TierLevel.HIGH
    elif (
        gov.classification is Classification.FINANCIAL
        or gov.sensitivity is Sensitivity.HIGH
    ):
        level = TierLevel.MEDIUM
    else:
        level = TierLevel.LOW
    return RiskTier(tier=level, fail_mode=config.fail_modes[level])
