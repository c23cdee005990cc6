"""Deterministic five-agent e-commerce scenario generation.

Every run is a stream of order-fulfilment flows.  A flow is a delegation
chain across the five roles (order, inventory, payment, shipping, analytics)
ending in a local finalize step back at the order agent:

    order -> inventory   reserve_stock
    order -> payment     charge_payment
    payment -> shipping  schedule_shipment   (carries disparate_impact)
    shipping -> analytics  emit_analytics    (anonymized, operational)
    analytics -> order   confirm_order       (carries consent_flag)
    order -> order       finalize_order      (terminal)

Lineage on each event is the chain the datum traversed, oldest first,
ending with the current source.  Legitimate flows keep personal data inside
EU agents: what reaches the US-hosted analytics agent is an operational
summary, and the finalize step's record never left the EU.  Injected
violations plant exactly one signature attribute each:

* CONSENT_MISSING      consent_flag=0 on the confirm step
* BIAS_THRESHOLD       disparate_impact > 0.15 on the shipment schedule
* DATA_RESIDENCY       the finalize record's lineage detours through the
                       US analytics agent (EU PII with a US hop, visible
                       only to whole-chain evaluation)
* UNAUTHORIZED_ACCESS  an extra probe where inventory attempts access_pii,
                       an operation outside its capability set

The master seed fully determines the stream; run seeds derive from it.
Injected flows sit at evenly spaced positions with kinds in a
quota-respecting round-robin (largest-remainder quotas over the configured
weights), so per-agent violation cadence, and with it the graduated level
trajectory, is a deterministic function of the injection rate rather than
of clustering luck.  Tier profiles follow exact largest-remainder counts
over the configured proportions in seeded order, making desk-scale counts
(e.g. 25 injections in a 500-flow run at 5 percent) exact.  Classification
metadata is corrupted independently per event with probability
``noise_epsilon`` (a flip to a uniformly chosen other class).
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import yaml

from .bus import EnforcementMode
from .canonical import event_digest
from .errors import ConfigurationError
from .escalation import EscalationConfig
from .model import (
    Classification,
    GovernanceMetadata,
    GovernanceTelemetryEvent,
    Jurisdiction,
    MultiAgentSystem,
    Sensitivity,
    TierLevel,
    Verified,
    ViolationType,
)
from .rules import AgentDirectory

CONFIG_FORMAT_VERSION = 1


@dataclass(frozen=True)
class AgentSpec:
    name: str
    jurisdiction: Jurisdiction
    capabilities: frozenset[str]


def default_agents() -> tuple[AgentSpec, ...]:
    ag = lambda name, jur, caps: AgentSpec(name, jur, frozenset(caps))
    return (
        ag("order", Jurisdiction.EU, ["reserve_stock", "charge_payment", "finalize_order"]),
        ag("inventory", Jurisdiction.EU, ["restock_inventory"]),
        ag("payment", Jurisdiction.EU, ["schedule_shipment"]),
        ag("shipping", Jurisdiction.EU, ["emit_analytics"]),
        ag("analytics", Jurisdiction.US, ["confirm_order"]),
    )


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 42
    mode: EnforcementMode = EnforcementMode.FULL
    flows_per_run: int = 500
    runs: int = 10
    injection_rate: float = 0.05
    violation_weights: Mapping[ViolationType, float] = field(
        default_factory=lambda: {kind: 1.0 for kind in ViolationType}
    )
    noise_epsilon: float = 0.02
    flow_interval_seconds: float = 1.0
    tier_proportions: Mapping[TierLevel, float] = field(
        default_factory=lambda: {
            TierLevel.HIGH: 0.18,
            TierLevel.MEDIUM: 0.35,
            TierLevel.LOW: 0.47,
        }
    )
    escalation: EscalationConfig = field(default_factory=EscalationConfig)
    agents: tuple[AgentSpec, ...] = field(default_factory=default_agents)
    compliance_sink: str = "eu-compliance-sink"

    def __post_init__(self):
        # Canonical agent order so round-tripped configs compare equal.
        object.__setattr__(
            self, "agents", tuple(sorted(self.agents, key=lambda a: a.name))
        )
        if not 0.0 <= self.injection_rate <= 1.0:
            raise ConfigurationError("injection_rate outside [0, 1]")
        if not 0.0 <= self.noise_epsilon <= 1.0:
            raise ConfigurationError("noise_epsilon outside [0, 1]")
        if self.flows_per_run < 1 or self.runs < 1:
            raise ConfigurationError("flows_per_run and runs must be positive")
        if abs(sum(self.tier_proportions.values()) - 1.0) > 1e-9:
            raise ConfigurationError("tier proportions must sum to 1")

    def directory(self) -> AgentDirectory:
        jur = {a.name: a.jurisdiction for a in self.agents}
        jur[self.compliance_sink] = Jurisdiction.EU
        caps = {a.name: set(a.capabilities) for a in self.agents}
        return AgentDirectory(jurisdictions=jur, capabilities=caps)

    def system(self) -> MultiAgentSystem:
        agents = {a.name for a in self.agents}
        return MultiAgentSystem(
            agents=agents,
            capabilities={a.name: set(a.capabilities) for a in self.agents},
            trust={a.name: 1.0 for a in self.agents},
        )

    def run_seed(self, run_index: int) -> int:
        material = f"govtelem:{self.seed}:{run_index}".encode()
        return int.from_bytes(hashlib.sha256(material).digest()[:8], "big")


@dataclass(frozen=True)
class FlowEvent:
    event: GovernanceTelemetryEvent
    probe: bool = False  # probes are side operations; blocking one does not abort the chain


@dataclass(frozen=True)
class Flow:
    index: int
    tier: TierLevel
    injected: ViolationType | None
    events: tuple[FlowEvent, ...]


def largest_remainder(total: int, weights: Sequence[float]) -> list[int]:
    """Integer quotas proportional to weights, exact by construction.

    Ties in fractional part resolve by position, so the allocation is
    deterministic for a fixed weight order.
    """
    norm = sum(weights)
    if norm <= 0:
        raise ConfigurationError("weights must have positive sum")
    raw = [total * w / norm for w in weights]
    counts = [math.floor(x) for x in raw]
    remainder = total - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def injection_count(rate: float, flows: int) -> int:
    """Round half up, so the canonical 5 percent of 500 is exactly 25."""
    if rate <= 0:
        return 0
    return max(1, math.floor(rate * flows + 0.5))


_PROFILE_FIELDS = {
    TierLevel.HIGH: (Classification.PII, Jurisdiction.EU, Sensitivity.HIGH),
    TierLevel.MEDIUM: (Classification.FINANCIAL, Jurisdiction.EU, Sensitivity.MEDIUM),
    TierLevel.LOW: (Classification.OPERATIONAL, Jurisdiction.EU, Sensitivity.LOW),
}

_OPERATIONAL_GOV = (Classification.OPERATIONAL, Jurisdiction.EU, Sensitivity.LOW)


def _maybe_corrupt(
    classification: Classification, rng: random.Random, epsilon: float
) -> Classification:
    if epsilon > 0 and rng.random() < epsilon:
        others = [c for c in Classification if c is not classification]
        return rng.choice(others)
    return classification


def generate_run(config: ScenarioConfig, run_index: int) -> list[Flow]:
    """Deterministic event stream for one run."""
    rng = random.Random(config.run_seed(run_index))
    flows = config.flows_per_run

    # Tier profile per flow: exact counts, seeded order.
    tiers_in_order = list(TierLevel)
    tier_counts = largest_remainder(
        flows, [config.tier_proportions.get(t, 0.0) for t in tiers_in_order]
    )
    profiles: list[TierLevel] = []
    for tier, count in zip(tiers_in_order, tier_counts):
        profiles.extend([tier] * count)
    rng.shuffle(profiles)

    # Injection sites and kinds: evenly spaced positions, weighted round-robin
    # kinds, so per-agent violation cadence is a pure function of the rate.
    count = min(injection_count(config.injection_rate, flows), flows)
    sites = [j * flows // count for j in range(count)] if count else []
    kinds_in_order = list(ViolationType)
    kind_counts = dict(
        zip(
            kinds_in_order,
            largest_remainder(
                count, [config.violation_weights.get(k, 0.0) for k in kinds_in_order]
            ),
        )
    )
    kind_sequence: list[ViolationType] = []
    while len(kind_sequence) < count:
        for kind in kinds_in_order:
            if kind_counts[kind] > 0 and len(kind_sequence) < count:
                kind_counts[kind] -= 1
                kind_sequence.append(kind)
    injected_at = dict(zip(sites, kind_sequence))

    out: list[Flow] = []
    for i in range(flows):
        base_time = 1.0 + i * config.flow_interval_seconds
        kind = injected_at.get(i)
        tier = TierLevel.HIGH if kind is ViolationType.DATA_RESIDENCY else profiles[i]
        out.append(_build_flow(config, rng, i, base_time, tier, kind))
    return out


def _build_flow(
    config: ScenarioConfig,
    rng: random.Random,
    index: int,
    base_time: float,
    tier: TierLevel,
    kind: ViolationType | None,
) -> Flow:
    profile_class, profile_jur, profile_sens = _PROFILE_FIELDS[tier]
    eps = config.noise_epsilon

    def gov(fields, lineage) -> GovernanceMetadata:
        classification, jurisdiction, sensitivity = fields
        return GovernanceMetadata(
            classification=_maybe_corrupt(classification, rng, eps),
            jurisdiction=jurisdiction,
            sensitivity=sensitivity,
            lineage=tuple(lineage),
            verified=Verified.UNKNOWN,
        )

    def ev(step, source, receiver, operation, context, gov_fields, lineage):
        return GovernanceTelemetryEvent(
            timestamp=base_time + step * 0.05,
            source=source,
            receiver=receiver,
            operation=operation,
            context=context,
            governance=gov(gov_fields, lineage),
            nonce=rng.getrandbits(64),
        )

    profile = (profile_class, profile_jur, profile_sens)
    disparate = (
        rng.uniform(0.15, 0.5) if kind is ViolationType.BIAS_THRESHOLD
        else rng.uniform(0.0, 0.15)
    )
    if kind is ViolationType.BIAS_THRESHOLD and disparate <= 0.15:
        disparate = 0.1501  # open interval guard
    consent = 0 if kind is ViolationType.CONSENT_MISSING else 1
    order_value = round(rng.uniform(5.0, 500.0), 2)

    events = [
        FlowEvent(ev(0, "order", "inventory", "reserve_stock",
                     {"order_id": index, "order_value": order_value},
                     profile, ("order",))),
        FlowEvent(ev(1, "order", "payment", "charge_payment",
                     {"order_id": index, "order_value": order_value},
                     profile, ("order",))),
        FlowEvent(ev(2, "payment", "shipping", "schedule_shipment",
                     {"order_id": index, "disparate_impact": disparate},
                     profile, ("order", "payment"))),
        FlowEvent(ev(3, "shipping", "analytics", "emit_analytics",
                     {"order_id": index},
                     _OPERATIONAL_GOV, ("order", "payment", "shipping"))),
        FlowEvent(ev(4, "analytics", "order", "confirm_order",
                     {"order_id": index, "consent_flag": consent},
                     _OPERATIONAL_GOV, ("order", "payment", "shipping", "analytics"))),
    ]
    if kind is ViolationType.UNAUTHORIZED_ACCESS:
        events.insert(1, FlowEvent(
            ev(0.5, "inventory", "order", "access_pii",
               {"order_id": index}, profile, ("inventory",)),
            probe=True,
        ))

    # The finalize record's provenance: legitimate personal data never left
    # the EU agents; the residency injection detoured it through analytics.
    if kind is ViolationType.DATA_RESIDENCY:
        final_lineage = ("order", "payment", "shipping", "analytics", "order")
    else:
        final_lineage = ("order", "payment", "shipping", "order")
    events.append(FlowEvent(ev(5, "order", "order", "finalize_order",
                               {"order_id": index},
                               profile, final_lineage)))

    return Flow(index=index, tier=tier, injected=kind, events=tuple(events))


def stream_digest(flows: Sequence[Flow]) -> str:
    """Digest over canonical event bytes; the determinism oracle for streams."""
    h = hashlib.sha256()
    for flow in flows:
        for fe in flow.events:
            h.update(event_digest(fe.event))
    return h.hexdigest()


# Config file io ------------------------------------------------------------

def config_to_yaml(config: ScenarioConfig) -> str:
    doc = {
        "version": CONFIG_FORMAT_VERSION,
        "seed": config.seed,
        "mode": config.mode.value,
        "flows_per_run": config.flows_per_run,
        "runs": config.runs,
        "injection_rate": config.injection_rate,
        "violation_weights": {k.value: v for k, v in config.violation_weights.items()},
        "noise_epsilon": config.noise_epsilon,
        "flow_interval_seconds": config.flow_interval_seconds,
        "tier_proportions": {t.value: p for t, p in config.tier_proportions.items()},
        "escalation": {
            "window_w_seconds": config.escalation.window_w_seconds,
            "k": config.escalation.k,
            "cb_threshold": config.escalation.cb_threshold,
            "cb_window_seconds": config.escalation.cb_window_seconds,
        },
        "agents": {
            a.name: {
                "jurisdiction": a.jurisdiction.value,
                "capabilities": sorted(a.capabilities),
            }
            for a in config.agents
        },
        "compliance_sink": config.compliance_sink,
    }
    return yaml.safe_dump(doc, sort_keys=True, default_flow_style=False)


def config_from_yaml(text: str) -> ScenarioConfig:
    doc = yaml.safe_load(text)
    if not isinstance(doc, dict):
        raise ConfigurationError("scenario config must be a mapping")
    if doc.get("version") != CONFIG_FORMAT_VERSION:
        raise ConfigurationError(f"unsupported config version {doc.get('version')!r}")
    esc = doc.get("escalation", {})
    agents = tuple(
        AgentSpec(
            name=name,
            jurisdiction=Jurisdiction(spec["jurisdiction"]),
            capabilities=frozenset(spec.get("capabilities", [])),
        )
        for name, spec in sorted(doc.get("agents", {}).items())
    ) or default_agents()
    return ScenarioConfig(
        seed=int(doc.get("seed", 42)),
        mode=EnforcementMode(doc.get("mode", "FULL")),
        flows_per_run=int(doc.get("flows_per_run", 500)),
        runs=int(doc.get("runs", 10)),
        injection_rate=float(doc.get("injection_rate", 0.05)),
        violation_weights={
            ViolationType(k): float(v)
            for k, v in doc.get(
                "violation_weights", {k.value: 1.0 for k in ViolationType}
            ).items()
        },
        noise_epsilon=float(doc.get("noise_epsilon", 0.02)),
        flow_interval_seconds=float(doc.get("flow_interval_seconds", 1.0)),
        tier_proportions={
            TierLevel(t): float(p)
            for t, p in doc.get(
                "tier_proportions",
                {"HIGH": 0.18, "MEDIUM": 0.35, "LOW": 0.47},
            ).items()
        },
        escalation=EscalationConfig(
            window_w_seconds=float(esc.get("window_w_seconds", 90.0)),
            k=int(esc.get("k", 3)),
            cb_threshold=esc.get("cb_threshold"),
            cb_window_seconds=esc.get("cb_window_seconds"),
        ),
        agents=agents,
        compliance_sink=doc.get("compliance_sink", "eu-compliance-sink"),
    )


def load_config(path: str | Path) -> ScenarioConfig:
    return config_from_yaml(Path(path).read_text())


def apply_overrides(config: ScenarioConfig, overrides: Sequence[str]) -> ScenarioConfig:
    """Apply dotted key=value overrides (CI sweeps without templated files)."""
    updates: dict = {}
    esc_updates: dict = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override must be key=value, got {item!r}")
        key, _, value = item.partition("=")
        key = key.strip()
        if key == "mode":
            updates["mode"] = EnforcementMode(value)
        elif key == "seed":
            updates["seed"] = int(value)
        elif key in ("flows_per_run", "runs"):
            updates[key] = int(value)
        elif key in ("injection_rate", "noise_epsilon", "flow_interval_seconds"):
            updates[key] = float(value)
        elif key == "compliance_sink":
            updates[key] = value
        elif key.startswith("escalation."):
            sub = key.split(".", 1)[1]
            if sub == "k":
                esc_updates["k"] = int(value)
            elif sub in ("window_w_seconds", "cb_window_seconds"):
                esc_updates[sub] = float(value)
            elif sub == "cb_threshold":
                esc_updates[sub] = int(value)
            else:
                raise ConfigurationError(f"unknown escalation override {sub!r}")
        else:
            raise ConfigurationError(f"unknown override key {key!r}")
    if esc_updates:
        base = config.escalation
        # Breaker parameters at their derived defaults re-derive when k or the
        # window changes; explicit custom values are preserved.
        threshold = esc_updates.get(
            "cb_threshold",
            None if base.cb_threshold == 3 * base.k else base.cb_threshold,
        )
        cb_window = esc_updates.get(
            "cb_window_seconds",
            None
            if base.cb_window_seconds == base.window_w_seconds / 4
            else base.cb_window_seconds,
        )
        updates["escalation"] = EscalationConfig(
            window_w_seconds=esc_updates.get("window_w_seconds", base.window_w_seconds),
            k=esc_updates.get("k", base.k),
            cb_threshold=threshold,
            cb_window_seconds=cb_window,
        )
    return dataclasses.replace(config, **updates) if updates else config
