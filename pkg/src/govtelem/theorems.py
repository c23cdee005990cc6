"""Monte Carlo validation of the escalation, determinism and false-quarantine properties.

Three validators, each over seeded independent trials (default 10,000), each
replayable from (master seed, trial index):

* Escalation convergence: one agent's graduated escalation under random
  violation arrivals.  Per cycle, arrivals are Bernoulli(rate); rates above
  0.4 per cycle can additionally fire a retry burst that lands several
  violations in a single processing tick, which is exactly the bounded-rate
  assumption being violated.  A trial fails when the level sequence skips an
  intermediate level in one tick (the graduated path was overwhelmed) or
  fixes later than the convergence horizon.  Bernoulli schedules cannot
  skip (at most one arrival per tick moves the floor by at most one), so
  failures occur only in burst trials; with the circuit breaker enabled the
  burst tick almost always trips the breaker first, forcing quarantine
  within the breaker window instead.

* Composition determinism: random policy sets of size 2 to 25 evaluated
  under dozens of random permutations per trial; every permutation must
  produce a byte-identical decision.  Any deviation is a bug, not noise.

* Bounded false quarantine: batches of legitimate events under
  classification noise (rate epsilon) and policy false positives (rate
  delta).  A flip lands on the quarantine-relevant class a third of the
  time, so the analytic per-event rate is epsilon/3 + (1 - epsilon) * delta,
  strictly below the independence bound epsilon + (1 - epsilon) * delta.
  Correlated noise follows a common-shock model: with probability
  shock_scale * rho a trial's whole batch flips at an elevated rate, which
  is what pushes empirical rates past the independence bound while the
  corrected bound (1 + rho) * (epsilon + (1 - epsilon) * delta) absorbs
  moderate correlation.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .escalation import (
    AgentEscalationState,
    EscalationConfig,
    ViolationRecord,
    check_circuit_breaker,
    prune_history,
)
from .model import (
    Classification,
    GovernanceMetadata,
    GovernanceTelemetryEvent,
    Jurisdiction,
    Sensitivity,
    Verified,
)
from .policy import (
    EnforcementActionKind,
    Policy,
    PolicyDecision,
    evaluate_policy_set,
)

REPORT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TheoremRunConfig:
    trials: int = 10_000
    seed: int = 2024
    # escalation convergence
    window_cycles: int = 48
    k: int = 2
    heavy_tail: bool = True
    burst_size: int = 5
    burst_scale: float = 0.9
    burst_rate_floor: float = 0.4
    # composition determinism
    min_policies: int = 2
    max_policies: int = 25
    permutations: int = 50
    # false quarantine
    batch_size: int = 10_000
    epsilon: float = 0.02
    delta: float = 0.011
    rho: float = 0.0
    trigger_fraction: float = 1.0 / 3.0
    shock_scale: float = 0.15
    shock_epsilon: float = 0.12


@dataclass
class TheoremReport:
    theorem: str
    trials: int
    successes: int
    success_fraction: float
    bounds: dict = field(default_factory=dict)
    failures: list[dict] = field(default_factory=list)
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "kind": "theorem-report",
            "theorem": self.theorem,
            "trials": self.trials,
            "successes": self.successes,
            "success_fraction": self.success_fraction,
            "bounds": self.bounds,
            "failures": self.failures[:20],
            "detail": self.detail,
        }


def _trial_seed(seed: int, theorem: str, trial: int) -> int:
    material = f"{seed}:{theorem}:{trial}".encode()
    return int.from_bytes(hashlib.sha256(material).digest()[:8], "big")


# -- escalation convergence ----------------------------------------------------


def _draw_rate(rng: random.Random, heavy_tail: bool) -> float:
    if not heavy_tail:
        return rng.uniform(0.0, 1.0)
    if rng.random() < 0.8:
        return rng.uniform(0.0, 0.3)
    return rng.uniform(0.3, 0.8)


@dataclass
class ConvergenceTrial:
    rate: float
    base: int
    converged: bool
    skipped: bool
    tripped: bool
    trip_within_breaker_window: bool
    first_arrival: int | None
    last_change: int | None
    final_level: int
    burst_cycle: int | None


def _run_convergence_trial(
    trial_seed: int, config: TheoremRunConfig, breaker_enabled: bool
) -> ConvergenceTrial:
    rng = random.Random(trial_seed)
    rate = _draw_rate(rng, config.heavy_tail)
    base = rng.choice((1, 1, 2, 2))
    window = config.window_cycles
    esc = EscalationConfig(window_w_seconds=float(window), k=config.k)
    t_max = 4 * config.k * window

    # Retry bursts model the bounded-rate assumption being violated; they can
    # only occur above the rate floor, so failures are confined there by
    # construction.  A burst lands shortly after escalation onset, while the
    # graduated ladder is still climbing (at these rates saturation follows
    # within a couple of breaker windows anyway).
    burst_offset = None
    if config.heavy_tail and rate > config.burst_rate_floor:
        burst_prob = config.burst_scale * (rate - config.burst_rate_floor) / 0.4
        if rng.random() < burst_prob:
            burst_offset = 1 + rng.randrange(0, window // 4)
    burst_cycle = None

    state = AgentEscalationState(agent="t2")
    dummy = PolicyDecision(EnforcementActionKind.DENY, 0.9)
    level: int | None = None  # graduated sequence enters at base(v)
    first_arrival = None
    last_change = None
    skipped = False
    tripped = False
    trip_ok = True
    breach_cycle = None

    for t in range(t_max):
        arrivals = 1 if rng.random() < rate else 0
        if first_arrival is not None and burst_offset is not None and burst_cycle is None:
            burst_cycle = first_arrival + burst_offset
        if burst_cycle is not None and t == burst_cycle:
            arrivals += config.burst_size
        if arrivals == 0:
            continue
        if first_arrival is None:
            first_arrival = t
        now = float(t)
        prune_history(state, now, esc)
        prior = len(state.history)
        for _ in range(arrivals):
            state.history.append(
                ViolationRecord(b"", "t2", dummy, now)
            )
        if breaker_enabled and check_circuit_breaker(state, now, esc):
            tripped = True
            breach_cycle = t
            if level != 4:
                last_change = t
            level = 4
            break
        new_level = min(4, base + (prior + arrivals - 1) // config.k)
        if new_level != level:
            # A single-tick climb of more than one level means the graduated
            # path was skipped; the first violation legitimately enters at
            # base(v), so it never counts.
            if level is not None and new_level > level + 1 and level < 4:
                skipped = True
            last_change = t
            level = new_level
        if level >= 4:
            break  # quarantined; the agent is isolated and the level is fixed

    if first_arrival is None or last_change is None:
        fixed_in_time = True  # no escalation activity at all
    else:
        fixed_in_time = last_change - first_arrival <= t_max
    if tripped and breach_cycle is not None and burst_cycle is not None:
        trip_ok = breach_cycle - burst_cycle <= window // 4
    return ConvergenceTrial(
        rate=rate,
        base=base,
        converged=fixed_in_time and not skipped,
        skipped=skipped,
        tripped=tripped,
        trip_within_breaker_window=trip_ok,
        first_arrival=first_arrival,
        last_change=last_change,
        final_level=level if level is not None else 0,
        burst_cycle=burst_cycle,
    )


def validate_t2_convergence(
    config: TheoremRunConfig, breaker_enabled: bool = False
) -> TheoremReport:
    successes = 0
    failures = []
    tripped = 0
    trips_in_window = 0
    failure_rates = []
    for trial in range(config.trials):
        seed = _trial_seed(config.seed, f"t2:{breaker_enabled}", trial)
        result = _run_convergence_trial(seed, config, breaker_enabled)
        if result.tripped:
            tripped += 1
            if result.trip_within_breaker_window:
                trips_in_window += 1
        if result.converged:
            successes += 1
        else:
            failure_rates.append(result.rate)
            if len(failures) < 20:
                failures.append(
                    {
                        "trial": trial,
                        "seed": seed,
                        "rate": result.rate,
                        "base": result.base,
                        "burst_cycle": result.burst_cycle,
                        "final_level": result.final_level,
                    }
                )
    return TheoremReport(
        theorem="escalation-convergence",
        trials=config.trials,
        successes=successes,
        success_fraction=successes / config.trials,
        failures=failures,
        detail={
            "breaker_enabled": breaker_enabled,
            "heavy_tail": config.heavy_tail,
            "window_cycles": config.window_cycles,
            "k": config.k,
            "max_convergence_cycles": 4 * config.k * config.window_cycles,
            "breaker_trips": tripped,
            "trips_within_breaker_window": trips_in_window,
            "min_failure_rate": min(failure_rates) if failure_rates else None,
        },
    )


# -- composition determinism ----------------------------------------------------


_T3_ACTIONS = tuple(EnforcementActionKind)


def _hash_policy(policy_id: str, salt: bytes) -> Policy:
    """Deterministic pseudo-random policy: decision digest-keyed on the event."""

    def evaluate(event: GovernanceTelemetryEvent) -> PolicyDecision:
        h = hashlib.blake2b(
            salt + event.source.encode() + event.operation.encode()
            + int(event.nonce).to_bytes(8, "big"),
            digest_size=8,
        ).digest()
        value = int.from_bytes(h, "big")
        action = _T3_ACTIONS[value % 4]
        confidence = ((value >> 8) % 1_000_001) / 1_000_000
        return PolicyDecision(action, confidence)

    return Policy(policy_id, evaluate)


def _random_event(rng: random.Random) -> GovernanceTelemetryEvent:
    return GovernanceTelemetryEvent(
        timestamp=rng.uniform(1.0, 1e6),
        source=f"agent{rng.randrange(16)}",
        receiver=f"agent{16 + rng.randrange(16)}",
        operation=f"op{rng.randrange(32)}",
        context={"v": rng.randrange(1 << 30)},
        governance=GovernanceMetadata(
            classification=rng.choice(list(Classification)),
            jurisdiction=rng.choice(list(Jurisdiction)),
            sensitivity=rng.choice(list(Sensitivity)),
            lineage=(f"agent{rng.randrange(16)}",),
            verified=Verified.UNKNOWN,
        ),
        nonce=rng.getrandbits(64),
    )


def validate_t3_determinism(config: TheoremRunConfig) -> TheoremReport:
    successes = 0
    failures = []
    for trial in range(config.trials):
        seed = _trial_seed(config.seed, "t3", trial)
        rng = random.Random(seed)
        n = rng.randint(config.min_policies, config.max_policies)
        policies = [
            _hash_policy(f"p{i}", rng.getrandbits(64).to_bytes(8, "big"))
            for i in range(n)
        ]
        event = _random_event(rng)
        reference = evaluate_policy_set(policies, event)
        ok = True
        for _ in range(config.permutations):
            shuffled = policies[:]
            rng.shuffle(shuffled)
            result = evaluate_policy_set(shuffled, event)
            if (
                result.action is not reference.action
                or result.confidence != reference.confidence
            ):
                ok = False
                break
        if ok:
            successes += 1
        elif len(failures) < 20:
            failures.append({"trial": trial, "seed": seed, "policies": n})
    return TheoremReport(
        theorem="composition-determinism",
        trials=config.trials,
        successes=successes,
        success_fraction=successes / config.trials,
        failures=failures,
        detail={"permutations": config.permutations},
    )


# -- bounded false quarantine ----------------------------------------------------


def _exact(value: float) -> Fraction:
    """Fraction of the decimal literal the float was written as."""
    return Fraction(str(value))


def independence_bound(epsilon: float, delta: float) -> float:
    """epsilon + (1 - epsilon) * delta, computed in exact decimal arithmetic."""
    e, d = _exact(epsilon), _exact(delta)
    return float(e + (1 - e) * d)


def corrected_bound(epsilon: float, delta: float, rho: float) -> float:
    """(1 + rho) * (epsilon + (1 - epsilon) * delta) in exact decimal arithmetic."""
    e, d, r = _exact(epsilon), _exact(delta), _exact(rho)
    return float((1 + r) * (e + (1 - e) * d))


def analytic_fq_rate(epsilon: float, delta: float, trigger_fraction: Fraction) -> float:
    """Closed form of the unshocked generator: a flip quarantines when it lands
    on the triggering class; an unflipped event quarantines on a policy false
    positive.  P = epsilon * f + (1 - epsilon) * delta."""
    e, d = _exact(epsilon), _exact(delta)
    return float(e * trigger_fraction + (1 - e) * d)


def validate_t4_false_quarantine(config: TheoremRunConfig) -> TheoremReport:
    indep = independence_bound(config.epsilon, config.delta)
    corrected = corrected_bound(config.epsilon, config.delta, config.rho)
    rng = np.random.default_rng(_trial_seed(config.seed, "t4", 0))
    shock_prob = config.shock_scale * config.rho

    indep_hold = 0
    corrected_hold = 0
    shocked_trials = 0
    rates = np.zeros(config.trials)
    failures = []
    for trial in range(config.trials):
        shocked = config.rho > 0 and rng.random() < shock_prob
        flip_rate = config.shock_epsilon if shocked else config.epsilon
        if shocked:
            shocked_trials += 1
        flips = rng.random(config.batch_size) < flip_rate
        triggers = rng.random(config.batch_size) < config.trigger_fraction
        false_positives = rng.random(config.batch_size) < config.delta
        fq = (flips & triggers) | (~flips & false_positives)
        rate = fq.mean()
        rates[trial] = rate
        if rate <= indep:
            indep_hold += 1
        if rate <= corrected:
            corrected_hold += 1
        elif len(failures) < 20:
            failures.append({"trial": trial, "rate": float(rate), "shocked": shocked})

    return TheoremReport(
        theorem="bounded-false-quarantine",
        trials=config.trials,
        successes=corrected_hold if config.rho > 0 else indep_hold,
        success_fraction=(corrected_hold if config.rho > 0 else indep_hold)
        / config.trials,
        bounds={
            "independence": indep,
            "corrected": corrected,
            "analytic_unshocked_rate": analytic_fq_rate(
                config.epsilon, config.delta, Fraction(1, 3)
            ),
        },
        failures=failures,
        detail={
            "rho": config.rho,
            "batch_size": config.batch_size,
            "independence_hold_fraction": indep_hold / config.trials,
            "corrected_hold_fraction": corrected_hold / config.trials,
            "shocked_trials": shocked_trials,
            "mean_empirical_rate": float(rates.mean()),
        },
    )
