"""Scenario execution, metrics and adversarial campaigns.

Definitions used throughout:

* A violating flow counts as *prevented* when at least one of its operations
  is blocked or redirected at or before its terminal operation.  Blocking a
  chain operation aborts the rest of the flow (the delegation never
  happens); blocking a side probe blocks only the probe.
* VPR = prevented / injected, VER = 1 - VPR.
* FPR counts legitimate flows that received level 2 or higher, or were
  blocked outright, divided by legitimate flows.
* The average escalation level is the mean applied level over enforced
  events (applied level >= 1).

OBSERVE_ONLY records every decision but applies nothing, so its VPR and FPR
are zero by definition; BOUNDARY_ONLY truncates lineage to the last hop
before evaluation, which blinds it exactly to chain-crossing residency
violations.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import random
import statistics
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .bus import EnforcementBus, EnforcementMode, EnforcementOutcome
from .errors import ConfigurationError
from .hmm import (
    HmmModel,
    OmissionThreshold,
    OmissionVerdict,
    baum_welch_train,
    calibrate_threshold,
    random_model,
    score_for_omission,
)
from .model import FailMode, TierConfig, TierLevel, Verified, ViolationType
from .rules import default_rule_pack
from .scenario import Flow, ScenarioConfig, generate_run, stream_digest
from .signing import AgentKeyStore, KeyRegistry, sign_event

REPORT_FORMAT_VERSION = 1


# -- bootstrap ---------------------------------------------------------------

def bootstrap_ci(
    values: Sequence[float],
    resamples: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> tuple[float, float]:
    """Seeded percentile bootstrap of the mean over per-run values.

    Resample means use exact rational arithmetic so a degenerate input
    (every run identical) collapses to exactly (v, v).
    """
    if len(values) < 2:
        raise ConfigurationError("bootstrap CI needs at least 2 runs")
    rng = random.Random(seed)
    n = len(values)
    means = []
    for _ in range(resamples):
        sample = [values[rng.randrange(n)] for _ in range(n)]
        means.append(statistics.mean(sample))
    alpha = (1.0 - level) / 2.0
    lo = float(np.percentile(means, alpha * 100))
    hi = float(np.percentile(means, (1 - alpha) * 100))
    return lo, hi


# -- per-run bookkeeping ------------------------------------------------------

@dataclass
class FlowRecord:
    index: int
    tier: TierLevel
    injected: ViolationType | None
    prevented: bool = False
    blocked: bool = False
    max_applied_level: int = 0
    terminal_completed: bool = False

    @property
    def false_positive(self) -> bool:
        return self.injected is None and (self.blocked or self.max_applied_level >= 2)


@dataclass
class RunResult:
    run_index: int
    stream_digest: str
    flows: list[FlowRecord]
    enforced_levels: list[int]
    detection_ms: list[float]
    e2e_ms: list[float]
    processed: int
    audit_records: int
    audit_root: str
    counters: dict

    def injected_flows(self) -> list[FlowRecord]:
        return [f for f in self.flows if f.injected is not None]

    def vpr(self) -> float | None:
        injected = self.injected_flows()
        if not injected:
            return None
        return sum(f.prevented for f in injected) / len(injected)

    def fpr(self) -> float:
        legit = [f for f in self.flows if f.injected is None]
        if not legit:
            return 0.0
        return sum(f.false_positive for f in legit) / len(legit)


def _execute_flow(
    bus: EnforcementBus,
    flow: Flow,
    keystore: AgentKeyStore,
    observe: bool,
    mutate=None,
) -> tuple[FlowRecord, list[EnforcementOutcome]]:
    record = FlowRecord(index=flow.index, tier=flow.tier, injected=flow.injected)
    outcomes: list[EnforcementOutcome] = []
    aborted = False
    terminal = flow.events[-1]
    for fe in flow.events:
        if aborted:
            break
        event = sign_event(fe.event, keystore.key_for(fe.event.source))
        if mutate is not None:
            event = mutate(event)
        outcome = bus.process_event(event)
        outcomes.append(outcome)
        if outcome.applied_level > record.max_applied_level:
            record.max_applied_level = outcome.applied_level
        if outcome.blocked:
            record.blocked = True
        if outcome.prevents_flow:
            record.prevented = True
            if not fe.probe and not observe:
                aborted = True
        if fe is terminal and outcome.operation_completed and not outcome.redirected:
            record.terminal_completed = True
    return record, outcomes


def run_single(
    config: ScenarioConfig,
    run_index: int,
    keystore: AgentKeyStore,
    registry: KeyRegistry,
    mode: EnforcementMode | None = None,
    tier_config: TierConfig | None = None,
    audit_path=None,
) -> RunResult:
    mode = mode or config.mode
    flows = generate_run(config, run_index)
    bus = EnforcementBus(
        system=config.system(),
        pack=default_rule_pack(),
        directory=config.directory(),
        registry=registry,
        escalation_config=config.escalation,
        tier_config=tier_config,
        mode=mode,
        compliance_sink=config.compliance_sink,
        audit_path=audit_path,
    )
    observe = mode is EnforcementMode.OBSERVE_ONLY
    records: list[FlowRecord] = []
    enforced_levels: list[int] = []
    detection_ms: list[float] = []
    e2e_ms: list[float] = []
    for flow in flows:
        record, outcomes = _execute_flow(bus, flow, keystore, observe)
        records.append(record)
        for outcome in outcomes:
            detection_ms.append(outcome.latency_detection_ms)
            e2e_ms.append(outcome.latency_e2e_ms)
            if outcome.applied_level >= 1:
                enforced_levels.append(outcome.applied_level)
    result = RunResult(
        run_index=run_index,
        stream_digest=stream_digest(flows),
        flows=records,
        enforced_levels=enforced_levels,
        detection_ms=detection_ms,
        e2e_ms=e2e_ms,
        processed=bus.counters.processed,
        audit_records=bus.audit_log.size,
        audit_root=bus.audit_log.root.hex(),
        counters=dataclasses.asdict(bus.counters),
    )
    bus.audit_log.close()
    return result


# -- aggregate report ---------------------------------------------------------

@dataclass
class MetricsReport:
    mode: str
    seed: int
    runs: int
    flows_per_run: int
    injection_rate: float
    injected: int
    prevented: int
    escaped: int
    vpr: float | None
    ver: float | None
    fpr: float
    per_kind: dict
    avg_escalation_level: float | None
    vpr_ci: tuple[float, float] | None
    fpr_ci: tuple[float, float] | None
    per_run: list[dict]
    tier_mix: dict
    latency: dict
    audit: dict

    def to_dict(self, include_timing: bool = False) -> dict:
        doc = {
            "format_version": REPORT_FORMAT_VERSION,
            "kind": "scenario-metrics",
            "mode": self.mode,
            "seed": self.seed,
            "runs": self.runs,
            "flows_per_run": self.flows_per_run,
            "injection_rate": self.injection_rate,
            "injected": self.injected,
            "prevented": self.prevented,
            "escaped": self.escaped,
            "vpr": self.vpr,
            "ver": self.ver,
            "fpr": self.fpr,
            "per_kind": self.per_kind,
            "avg_escalation_level": self.avg_escalation_level,
            "vpr_ci": list(self.vpr_ci) if self.vpr_ci else None,
            "fpr_ci": list(self.fpr_ci) if self.fpr_ci else None,
            "per_run": self.per_run,
            "tier_mix": self.tier_mix,
            "audit": self.audit,
        }
        if include_timing:
            doc["timing"] = self.latency
        return doc

    def digest(self) -> str:
        """Reproducibility digest over the deterministic report content."""
        payload = json.dumps(self.to_dict(include_timing=False), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


def _percentiles(samples: Sequence[float]) -> dict:
    if not samples:
        return {"p50_ms": None, "p99_ms": None}
    return {
        "p50_ms": float(np.percentile(samples, 50)),
        "p99_ms": float(np.percentile(samples, 99)),
    }


def run_scenario(
    config: ScenarioConfig,
    mode: EnforcementMode | None = None,
    tier_config: TierConfig | None = None,
) -> MetricsReport:
    """Process every run through the enforcement bus and aggregate metrics."""
    mode = mode or config.mode
    keystore = AgentKeyStore()
    registry = KeyRegistry()
    keystore.provision([a.name for a in config.agents], registry)

    results = [
        run_single(config, i, keystore, registry, mode=mode, tier_config=tier_config)
        for i in range(config.runs)
    ]

    all_flows = [f for r in results for f in r.flows]
    injected_flows = [f for f in all_flows if f.injected is not None]
    legit_flows = [f for f in all_flows if f.injected is None]
    injected = len(injected_flows)
    prevented = sum(f.prevented for f in injected_flows)
    vpr = prevented / injected if injected else None
    fpr = (
        sum(f.false_positive for f in legit_flows) / len(legit_flows)
        if legit_flows
        else 0.0
    )

    per_kind = {}
    for kind in ViolationType:
        kind_flows = [f for f in injected_flows if f.injected is kind]
        kind_prev = sum(f.prevented for f in kind_flows)
        per_kind[kind.value] = {
            "injected": len(kind_flows),
            "prevented": kind_prev,
            "escaped": len(kind_flows) - kind_prev,
            "vpr": kind_prev / len(kind_flows) if kind_flows else None,
        }

    levels = [lvl for r in results for lvl in r.enforced_levels]
    avg_level = sum(levels) / len(levels) if levels else None

    run_vprs = [r.vpr() for r in results if r.vpr() is not None]
    run_fprs = [r.fpr() for r in results]
    vpr_ci = (
        bootstrap_ci(run_vprs, seed=config.seed) if len(run_vprs) >= 2 else None
    )
    fpr_ci = (
        bootstrap_ci(run_fprs, seed=config.seed + 1) if len(run_fprs) >= 2 else None
    )

    tier_counts = {t.value: 0 for t in TierLevel}
    for f in all_flows:
        tier_counts[f.tier.value] += 1
    total_flows = len(all_flows)
    tier_mix = {
        t: {"count": c, "fraction": c / total_flows} for t, c in tier_counts.items()
    }

    detection = [ms for r in results for ms in r.detection_ms]
    e2e = [ms for r in results for ms in r.e2e_ms]

    return MetricsReport(
        mode=mode.value,
        seed=config.seed,
        runs=config.runs,
        flows_per_run=config.flows_per_run,
        injection_rate=config.injection_rate,
        injected=injected,
        prevented=prevented,
        escaped=injected - prevented,
        vpr=vpr,
        ver=(1.0 - vpr) if vpr is not None else None,
        fpr=fpr,
        per_kind=per_kind,
        avg_escalation_level=avg_level,
        vpr_ci=vpr_ci,
        fpr_ci=fpr_ci,
        per_run=[
            {
                "run": r.run_index,
                "stream_digest": r.stream_digest,
                "vpr": r.vpr(),
                "fpr": r.fpr(),
                "processed": r.processed,
                "audit_records": r.audit_records,
                "audit_root": r.audit_root,
                "counters": r.counters,
            }
            for r in results
        ],
        tier_mix=tier_mix,
        latency={"detection": _percentiles(detection), "e2e": _percentiles(e2e)},
        audit={
            "records": sum(r.audit_records for r in results),
            "processed": sum(r.processed for r in results),
        },
    )


# -- sensitivity sweep --------------------------------------------------------

DEFAULT_SWEEP_RATES = (0.001, 0.01, 0.05, 0.075, 0.10)


def sensitivity_sweep(
    config: ScenarioConfig,
    rates: Sequence[float] = DEFAULT_SWEEP_RATES,
    force_epsilon: float | None = 0.0,
) -> list[dict]:
    """Per-rate metrics with the average applied escalation level.

    Classification noise defaults off here: at very low injection rates the
    noise-driven false-positive mass would otherwise dominate the level
    average and mask the trend under study.
    """
    rows = []
    for rate in rates:
        cfg = dataclasses.replace(config, injection_rate=rate)
        if force_epsilon is not None:
            cfg = dataclasses.replace(cfg, noise_epsilon=force_epsilon)
        report = run_scenario(cfg)
        rows.append(
            {
                "rate": rate,
                "injected": report.injected,
                "prevented": report.prevented,
                "vpr": report.vpr,
                "ver": report.ver,
                "fpr": report.fpr,
                "avg_level": report.avg_escalation_level,
            }
        )
    return rows


# -- attack campaigns ---------------------------------------------------------

class AttackKind(Enum):
    FORGERY = "FORGERY"
    REPLAY = "REPLAY"
    OMISSION = "OMISSION"


@dataclass
class SecurityReport:
    attack: str
    fail_mode: str
    detection_rate: float | None
    bypass_rate: float | None
    availability_reduction: float
    false_alert_rate: float | None
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "kind": "security-report",
            "attack": self.attack,
            "fail_mode": self.fail_mode,
            "detection_rate": self.detection_rate,
            "bypass_rate": self.bypass_rate,
            "availability_reduction": self.availability_reduction,
            "false_alert_rate": self.false_alert_rate,
            "detail": self.detail,
        }


def _forced_tier_config(override: FailMode | None) -> TierConfig | None:
    if override is None:
        return None
    return TierConfig(fail_modes={t: override for t in TierLevel})


def _legit_terminal_fraction(results: list[RunResult]) -> float:
    legit = [f for r in results for f in r.flows if f.injected is None]
    if not legit:
        return 1.0
    return sum(f.terminal_completed for f in legit) / len(legit)


def _forgery_campaign(
    config: ScenarioConfig,
    fail_mode_override: FailMode | None,
    forged_rate: float,
    unverified_legit_rate: float,
) -> SecurityReport:
    keystore = AgentKeyStore()
    registry = KeyRegistry()
    keystore.provision([a.name for a in config.agents], registry)
    tier_config = _forced_tier_config(fail_mode_override)

    baseline: list[RunResult] = []
    attacked_results: list[RunResult] = []
    forged_total = 0
    forged_detected = 0
    forged_completed = 0

    for run_index in range(config.runs):
        baseline.append(
            run_single(config, run_index, keystore, registry, tier_config=tier_config)
        )

        # Attack pass: same stream, with a seeded fraction of signatures
        # corrupted (forgeries) or stripped (unverifiable legit telemetry).
        attack_rng = random.Random(config.run_seed(run_index) ^ 0xF0F0F0F0)
        flows = generate_run(config, run_index)
        bus = EnforcementBus(
            system=config.system(),
            pack=default_rule_pack(),
            directory=config.directory(),
            registry=registry,
            escalation_config=config.escalation,
            tier_config=tier_config,
            mode=EnforcementMode.FULL,
            compliance_sink=config.compliance_sink,
        )
        records = []
        det, e2e, levels = [], [], []
        run_forged: list[EnforcementOutcome] = []
        for flow in flows:
            forge_plan = {}
            for pos, fe in enumerate(flow.events):
                roll = attack_rng.random()
                if roll < forged_rate:
                    forge_plan[pos] = "forge"
                elif roll < forged_rate + unverified_legit_rate:
                    forge_plan[pos] = "strip"
            position = {"i": 0}

            def mutate(event):
                action = forge_plan.get(position["i"])
                position["i"] += 1
                if action == "forge":
                    return dataclasses.replace(
                        event, signature=bytes(attack_rng.getrandbits(8) for _ in range(70))
                    )
                if action == "strip":
                    return dataclasses.replace(event, signature=None)
                return event

            record, outcomes = _execute_flow(bus, flow, keystore, observe=False, mutate=mutate)
            records.append(record)
            for pos, outcome in enumerate(outcomes):
                det.append(outcome.latency_detection_ms)
                e2e.append(outcome.latency_e2e_ms)
                if outcome.applied_level >= 1:
                    levels.append(outcome.applied_level)
                if forge_plan.get(pos) == "forge":
                    run_forged.append(outcome)
        for outcome in run_forged:
            forged_total += 1
            if outcome.verified is Verified.FALSE:
                forged_detected += 1
            if outcome.operation_completed:
                forged_completed += 1
        attacked_results.append(
            RunResult(
                run_index=run_index,
                stream_digest=stream_digest(flows),
                flows=records,
                enforced_levels=levels,
                detection_ms=det,
                e2e_ms=e2e,
                processed=bus.counters.processed,
                audit_records=bus.audit_log.size,
                audit_root=bus.audit_log.root.hex(),
                counters=dataclasses.asdict(bus.counters),
            )
        )

    baseline_avail = _legit_terminal_fraction(baseline)
    attack_avail = _legit_terminal_fraction(attacked_results)
    return SecurityReport(
        attack=AttackKind.FORGERY.value,
        fail_mode=fail_mode_override.value if fail_mode_override else "PER_TIER",
        detection_rate=forged_detected / forged_total if forged_total else None,
        bypass_rate=forged_completed / forged_total if forged_total else None,
        availability_reduction=max(0.0, baseline_avail - attack_avail),
        false_alert_rate=None,
        detail={
            "forged_events": forged_total,
            "baseline_availability": baseline_avail,
            "attack_availability": attack_avail,
        },
    )


def _replay_campaign(
    config: ScenarioConfig,
    fail_mode_override: FailMode | None,
    replay_rate: float,
) -> SecurityReport:
    # Stretch the stream past 1.5 replay windows so the expiry escape class
    # is exercised alongside in-window replays.
    cfg = dataclasses.replace(config, flow_interval_seconds=2.5, runs=1)
    keystore = AgentKeyStore()
    registry = KeyRegistry()
    keystore.provision([a.name for a in cfg.agents], registry)
    tier_config = _forced_tier_config(fail_mode_override)
    flows = generate_run(cfg, 0)
    bus = EnforcementBus(
        system=cfg.system(),
        pack=default_rule_pack(),
        directory=cfg.directory(),
        registry=registry,
        escalation_config=cfg.escalation,
        tier_config=tier_config,
        mode=EnforcementMode.FULL,
        compliance_sink=cfg.compliance_sink,
    )
    rng = random.Random(cfg.run_seed(0) ^ 0x5EED)
    signed: list = []
    for flow in flows:
        for fe in flow.events:
            event = sign_event(fe.event, keystore.key_for(fe.event.source))
            bus.process_event(event)
            signed.append(event)

    # Age <= window/2 guarantees the nonce generation is still queried; age
    # beyond one full window guarantees both generations have rotated past it.
    window = bus.replay_filter.window_seconds
    end_time = signed[-1].timestamp
    in_window = [e for e in signed if end_time - e.timestamp <= window / 2]
    expired = [e for e in signed if end_time - e.timestamp > window]
    in_window_sample = rng.sample(in_window, min(len(in_window), int(replay_rate * len(signed))))
    expired_sample = rng.sample(expired, min(len(expired), int(replay_rate * len(signed))))

    detected = sum(
        1 for e in in_window_sample if bus.process_event(e).reason.value == "REPLAY_REJECTED"
    )
    escaped = sum(
        1 for e in expired_sample if bus.process_event(e).reason.value != "REPLAY_REJECTED"
    )
    return SecurityReport(
        attack=AttackKind.REPLAY.value,
        fail_mode=fail_mode_override.value if fail_mode_override else "PER_TIER",
        detection_rate=detected / len(in_window_sample) if in_window_sample else None,
        bypass_rate=escaped / len(expired_sample) if expired_sample else None,
        availability_reduction=0.0,
        false_alert_rate=None,
        detail={
            "in_window_replays": len(in_window_sample),
            "expired_replays": len(expired_sample),
            "expired_escapes": escaped,
        },
    )


# -- omission detection corpus ------------------------------------------------

NOMINAL_SYMBOLS = (
    "reserve_stock",
    "restock_inventory",
    "charge_payment",
    "schedule_shipment",
    "emit_analytics",
    "confirm_order",
    "finalize_order",
)


def nominal_trace(rng: random.Random) -> list[str]:
    """One nominal per-flow operation sequence with structural retry noise."""
    seq = ["reserve_stock"]
    if rng.random() < 0.15:
        seq.append("reserve_stock")
    if rng.random() < 0.10:
        seq.append("restock_inventory")
    seq.append("charge_payment")
    if rng.random() < 0.08:
        seq.append("charge_payment")
    seq.append("schedule_shipment")
    seq.append("emit_analytics")
    if rng.random() < 0.12:
        seq.append("emit_analytics")
    seq.append("confirm_order")
    seq.append("finalize_order")
    return seq


def nominal_corpus(n: int, seed: int) -> list[list[str]]:
    rng = random.Random(seed)
    return [nominal_trace(rng) for _ in range(n)]


_DELETION_PHASES = (
    ("emit_analytics", "confirm_order"),
    ("charge_payment", "schedule_shipment"),
    ("schedule_shipment", "emit_analytics"),
)


def suppress_phase(trace: list[str], rng: random.Random) -> list[str]:
    """Delete one operational phase's emissions, as a hiding agent would."""
    drop = set(_DELETION_PHASES[rng.randrange(len(_DELETION_PHASES))])
    return [s for s in trace if s not in drop]


@dataclass
class OmissionDetector:
    model: HmmModel
    threshold: OmissionThreshold

    def suspicious(self, trace: Sequence[str]) -> bool:
        score = score_for_omission(self.model, self.threshold, trace)
        return score.verdict is OmissionVerdict.OMISSION_SUSPECTED


def train_omission_detector(
    training: Sequence[Sequence[str]],
    states: int = 6,
    seed: int = 7,
    max_iters: int = 20,
    restarts: int = 3,
) -> tuple[OmissionDetector, object]:
    """Train with a few seeded restarts and keep the best corpus likelihood.

    Expectation-maximization converges to local optima; a poor random init
    occasionally merges two phases and blinds the detector to one deletion
    class, so restarts are a correctness matter here, not a tuning nicety.
    """
    best_model = None
    best_trace = None
    for restart in range(restarts):
        init = random_model(
            [f"phase{i}" for i in range(states)],
            NOMINAL_SYMBOLS,
            seed=seed + 1000 * restart,
        )
        model, trace = baum_welch_train(training, init, max_iters=max_iters)
        if best_trace is None or trace.log_likelihoods[-1] > best_trace.log_likelihoods[-1]:
            best_model, best_trace = model, trace
    threshold = calibrate_threshold(best_model, training)
    return OmissionDetector(best_model, threshold), best_trace


def _omission_campaign(
    config: ScenarioConfig,
    fail_mode_override: FailMode | None,
    omission_rate: float,
) -> SecurityReport:
    seed = config.seed
    training = nominal_corpus(500, seed)
    held_out = nominal_corpus(1000, seed + 1)
    detector, _trace = train_omission_detector(training, seed=seed)

    rng = random.Random(seed + 2)
    attacked_n = max(50, int(omission_rate * 1000))
    attacked = [suppress_phase(nominal_trace(rng), rng) for _ in range(attacked_n)]

    detected = sum(detector.suspicious(t) for t in attacked)
    false_alerts = sum(detector.suspicious(t) for t in held_out)
    return SecurityReport(
        attack=AttackKind.OMISSION.value,
        fail_mode=fail_mode_override.value if fail_mode_override else "PER_TIER",
        detection_rate=detected / len(attacked),
        bypass_rate=1.0 - detected / len(attacked),
        availability_reduction=0.0,
        false_alert_rate=false_alerts / len(held_out),
        detail={
            "training_traces": len(training),
            "held_out_traces": len(held_out),
            "attacked_traces": len(attacked),
            "threshold": detector.threshold.theta,
        },
    )


def attack_campaign(
    config: ScenarioConfig,
    attack: AttackKind,
    fail_mode_override: FailMode | None = None,
    forged_rate: float = 0.05,
    unverified_legit_rate: float = 0.03,
    replay_rate: float = 0.1,
    omission_rate: float = 0.2,
) -> SecurityReport:
    """Inject one attack class and report detection, bypass and availability cost."""
    if attack is AttackKind.FORGERY:
        return _forgery_campaign(config, fail_mode_override, forged_rate, unverified_legit_rate)
    if attack is AttackKind.REPLAY:
        return _replay_campaign(config, fail_mode_override, replay_rate)
    if attack is AttackKind.OMISSION:
        return _omission_campaign(config, fail_mode_override, omission_rate)
    raise ConfigurationError(f"unknown attack kind {attack}")
