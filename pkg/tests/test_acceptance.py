"""Acceptance suite: every release criterion at its stated tolerance.

Each test prints one [PASS] line (visible with -s or in CI logs); a failure
surfaces as a normal pytest assertion.  Criteria that need the full-size
scenario (10 runs x 500 flows, 25 injections per run) share module-scoped
fixtures so the suite stays within its runtime budget.
"""

import dataclasses
import itertools
import random

import numpy as np
import pytest

from govtelem.bus import EnforcementMode
from govtelem.harness import (
    AttackKind,
    attack_campaign,
    nominal_corpus,
    nominal_trace,
    run_scenario,
    sensitivity_sweep,
    suppress_phase,
    train_omission_detector,
)
from govtelem.hmm import forward_loglik, random_model
from govtelem.model import FailMode, ViolationType
from govtelem.policy import (
    EnforcementActionKind,
    Policy,
    PolicyDecision,
    evaluate_policy_set,
    severity,
)
from govtelem.replay import ReplayFilter
from govtelem.scenario import ScenarioConfig
from govtelem.theorems import (
    TheoremRunConfig,
    corrected_bound,
    independence_bound,
    validate_t2_convergence,
    validate_t3_determinism,
    validate_t4_false_quarantine,
)

from .conftest import make_event, random_event
from .test_hmm import brute_force_loglik

THEOREM_CONFIG = TheoremRunConfig(trials=10_000, seed=2024)

# Criterion 5 scenario: 10 runs x 500 flows, 25 injections per run, no
# classification noise, honest keys.
SCENARIO = ScenarioConfig(seed=42, runs=10, flows_per_run=500,
                          injection_rate=0.05, noise_epsilon=0.0)


@pytest.fixture(scope="module")
def full_report():
    return run_scenario(SCENARIO)


@pytest.fixture(scope="module")
def boundary_report():
    return run_scenario(
        dataclasses.replace(SCENARIO, mode=EnforcementMode.BOUNDARY_ONLY)
    )


@pytest.fixture(scope="module")
def observe_report():
    return run_scenario(
        dataclasses.replace(SCENARIO, mode=EnforcementMode.OBSERVE_ONLY)
    )


def test_criterion_01_composition_determinism_exact():
    report = validate_t3_determinism(THEOREM_CONFIG)
    assert report.trials == 10_000
    assert report.successes == 10_000
    assert report.success_fraction == 1.0
    print("[PASS] criterion 1: order-independent composition, 10,000/10,000 trials "
          "(100.000%, zero tolerance)")


def test_criterion_02_monotonicity_property():
    rng = random.Random(1234)
    actions = list(EnforcementActionKind)

    def rand_policy(i):
        salt = rng.getrandbits(32)

        def evaluate(event, salt=salt):
            h = hash((salt, event.nonce, event.source)) & 0xFFFFFFFF
            return PolicyDecision(actions[h % 4], (h >> 8) % 1001 / 1000)

        return Policy(f"p{i}", evaluate)

    checked = 0
    for _ in range(10_000):
        event = random_event(rng)
        policies = [rand_policy(i) for i in range(rng.randint(1, 7))]
        extra = rand_policy(99)
        before = severity(evaluate_policy_set(policies, event))
        after = severity(evaluate_policy_set(policies + [extra], event))
        assert after >= before
        checked += 1
    assert checked == 10_000
    print("[PASS] criterion 2: adding a policy never weakened enforcement over "
          "10,000 random (set, policy, event) triples")


def test_criterion_03a_bounded_rate_convergence():
    report = validate_t2_convergence(
        dataclasses.replace(THEOREM_CONFIG, heavy_tail=False), breaker_enabled=False
    )
    assert report.success_fraction == 1.0
    horizon = report.detail["max_convergence_cycles"]
    print(f"[PASS] criterion 3a: 10,000/10,000 bounded-rate schedules reached a "
          f"fixed level within {horizon} cycles")


def test_criterion_03b_heavy_tail_without_breaker():
    report = validate_t2_convergence(THEOREM_CONFIG, breaker_enabled=False)
    assert 0.90 <= report.success_fraction <= 0.999
    assert report.detail["min_failure_rate"] > 0.4
    for failure in report.failures:
        assert failure["rate"] > 0.4
    print(f"[PASS] criterion 3b: heavy-tail success "
          f"{report.success_fraction:.2%} in [90%, 99.9%], all failures above "
          f"0.4 violations/cycle")


def test_criterion_03c_breaker_bounds_convergence():
    report = validate_t2_convergence(THEOREM_CONFIG, breaker_enabled=True)
    assert report.success_fraction >= 0.995
    assert report.detail["breaker_trips"] == report.detail["trips_within_breaker_window"]
    print(f"[PASS] criterion 3c: breaker-enabled success "
          f"{report.success_fraction:.2%} >= 99.5%, every trip quarantined "
          f"within the breaker window")


def test_criterion_04_false_quarantine_bounds():
    assert independence_bound(0.02, 0.011) == 0.03078
    assert corrected_bound(0.02, 0.011, 0.2) == 0.036936

    independent = validate_t4_false_quarantine(
        dataclasses.replace(THEOREM_CONFIG, rho=0.0, batch_size=10_000)
    )
    assert independent.detail["independence_hold_fraction"] >= 0.99

    for rho in (0.2, 0.4):
        correlated = validate_t4_false_quarantine(
            dataclasses.replace(THEOREM_CONFIG, rho=rho, batch_size=10_000)
        )
        assert correlated.detail["corrected_hold_fraction"] >= 0.93, rho

    print("[PASS] criterion 4: bound 0.03078 exact; held in >= 99% of 10,000 "
          "independent-noise trials; corrected bound 0.036936 exact and held in "
          ">= 93% of trials for correlation up to 0.4")


def test_criterion_05_vpr_accounting(full_report, boundary_report, observe_report):
    assert full_report.injected == 250  # 25 per run x 10 runs
    for run in full_report.per_run:
        assert run["vpr"] == 1.0
    assert full_report.vpr == 1.0
    assert full_report.fpr <= 0.01
    for kind in ViolationType:
        stats = full_report.per_kind[kind.value]
        assert stats["vpr"] == 1.0
        assert stats["injected"] == stats["prevented"] + stats["escaped"]

    assert full_report.vpr > boundary_report.vpr
    assert boundary_report.per_kind["DATA_RESIDENCY"]["vpr"] == 0.0
    for kind in ("CONSENT_MISSING", "BIAS_THRESHOLD", "UNAUTHORIZED_ACCESS"):
        assert boundary_report.per_kind[kind]["vpr"] == 1.0
    residency_share = (
        boundary_report.per_kind["DATA_RESIDENCY"]["injected"] / boundary_report.injected
    )
    assert full_report.vpr - boundary_report.vpr == pytest.approx(residency_share)

    assert observe_report.vpr == 0.0
    assert observe_report.fpr == 0.0
    print(f"[PASS] criterion 5: FULL VPR=100% on 250 injections (FPR="
          f"{full_report.fpr:.2%}); boundary gap of "
          f"{full_report.vpr - boundary_report.vpr:.1%} entirely chain-crossing "
          f"residency; OBSERVE_ONLY VPR=0")


def test_criterion_06_sensitivity_monotonicity():
    rows = sensitivity_sweep(SCENARIO, rates=(0.001, 0.01, 0.05, 0.075, 0.10))
    levels = [row["avg_level"] for row in rows]
    for earlier, later in zip(levels, levels[1:]):
        assert later > earlier, levels
    assert all(1.0 <= level <= 4.0 for level in levels)
    pretty = " -> ".join(f"L{level:.2f}" for level in levels)
    print(f"[PASS] criterion 6: average escalation level strictly increases "
          f"across the sweep ({pretty})")


def test_criterion_07_replay_prevention_at_scale():
    filt = ReplayFilter()  # production sizing: 1e7 capacity, 1e-4 target FP
    rng = random.Random(77)
    inserted = [("agent%d" % rng.randrange(5), rng.getrandbits(64)) for _ in range(1_000_000)]
    for source, nonce in inserted:
        filt.check(source, nonce, now=10.0)
    false_negatives = sum(
        1 for source, nonce in inserted if filt.check(source, nonce, now=20.0).fresh
    )
    assert false_negatives == 0

    held_out = [("held%d" % rng.randrange(5), rng.getrandbits(64)) for _ in range(1_000_000)]
    false_positives = sum(
        1 for source, nonce in held_out if filt.probably_seen(source, nonce, now=30.0)
    )
    fp_rate = false_positives / len(held_out)
    assert fp_rate <= 0.0002
    print(f"[PASS] criterion 7: 0 false negatives over 1,000,000 in-window "
          f"replays; measured FP rate {fp_rate:.5%} <= 0.02%")


def test_criterion_08_forgery_handling():
    config = dataclasses.replace(SCENARIO, runs=4, flows_per_run=250)
    closed = attack_campaign(config, AttackKind.FORGERY,
                             fail_mode_override=FailMode.FAIL_CLOSED)
    assert closed.detection_rate == 1.0
    assert closed.bypass_rate == 0.0
    assert closed.availability_reduction > 0.0

    opened = attack_campaign(config, AttackKind.FORGERY,
                             fail_mode_override=FailMode.FAIL_OPEN)
    assert opened.detection_rate == 1.0
    assert opened.bypass_rate > 0.0
    assert opened.availability_reduction == 0.0
    print(f"[PASS] criterion 8: forged signatures 100% rejected; fail-closed "
          f"availability cost {closed.availability_reduction:.2%} > 0, fail-open "
          f"0 with bypass {opened.bypass_rate:.0%} > 0")


def test_criterion_09_omission_detection():
    training = nominal_corpus(500, seed=SCENARIO.seed)
    assert len(training) >= 500
    detector, trace = train_omission_detector(training, seed=SCENARIO.seed)

    # Baum-Welch log-likelihood never decreased during the selected run.
    for earlier, later in zip(trace.log_likelihoods, trace.log_likelihoods[1:]):
        assert later >= earlier - 1e-9

    rng = random.Random(SCENARIO.seed + 1)
    attacked = [suppress_phase(nominal_trace(rng), rng) for _ in range(300)]
    held_out = nominal_corpus(1000, seed=SCENARIO.seed + 2)
    detection = sum(detector.suspicious(t) for t in attacked) / len(attacked)
    false_alerts = sum(detector.suspicious(t) for t in held_out) / len(held_out)
    assert detection >= 0.85
    assert false_alerts <= 0.08

    # Forward scores match exhaustive path enumeration on small fixtures.
    oracle_rng = np.random.default_rng(3)
    for states, symbols in ((2, 3), (3, 4), (4, 2)):
        model = random_model(
            [f"q{i}" for i in range(states)],
            [f"s{i}" for i in range(symbols)],
            seed=int(oracle_rng.integers(1 << 30)),
        )
        for length in (2, 5, 7):
            seq = [model.symbols[oracle_rng.integers(symbols)] for _ in range(length)]
            assert forward_loglik(model, seq) == pytest.approx(
                brute_force_loglik(model, seq), rel=1e-9
            )
    print(f"[PASS] criterion 9: deletion attacks detected at {detection:.1%} "
          f"(>= 85%), nominal false alerts {false_alerts:.1%} (<= 8%); forward "
          f"matches path enumeration at 1e-9; training LL monotone")


def test_criterion_10_audit_integrity(full_report, tmp_path):
    from govtelem.audit import MerkleAuditLog, verify_chain

    # Every processed event yielded exactly one audit record in every run.
    for run in full_report.per_run:
        assert run["audit_records"] == run["processed"]

    # Single-record tamper fixtures: all detected with the right index.
    records = [f"audit-record-{i}".encode() for i in range(200)]
    offsets = []
    path = tmp_path / "audit.bin"
    log = MerkleAuditLog(path)
    position = 5
    for record in records:
        offsets.append(position)
        log.append(record)
        position += 4 + len(record) + 32
    log.close()
    pristine = path.read_bytes()
    rng = random.Random(4)
    fixtures = sorted(rng.sample(range(len(records)), 50))
    detected = 0
    for index in fixtures:
        mutated = bytearray(pristine)
        mutated[offsets[index] + 4 + 3] ^= 0x80
        broken = tmp_path / "tampered.bin"
        broken.write_bytes(bytes(mutated))
        report = verify_chain(broken)
        if not report.ok and report.first_tampered_index == index:
            detected += 1
    assert detected == len(fixtures)
    print(f"[PASS] criterion 10: {detected}/{len(fixtures)} tamper fixtures "
          f"located at the exact record index; audit record count equals "
          f"processed count in all {len(full_report.per_run)} runs")


def test_criterion_11_latency_budget():
    from tests.test_bus import build_bus, signed

    bus, keystore, _ = build_bus()
    samples = []
    for i in range(300):
        outcome = bus.process_event(
            signed(keystore, timestamp=1.0 + i, nonce=i,
                   context={"order_id": i, "disparate_impact": 0.02})
        )
        samples.append(outcome.latency_e2e_ms)
    p50 = float(np.percentile(samples, 50))
    p99 = float(np.percentile(samples, 99))
    assert p99 < 200.0
    print(f"[PASS] criterion 11: single-event pipeline P50={p50:.2f} ms, "
          f"P99={p99:.2f} ms < 200 ms budget")


def test_criterion_12_reproducibility(full_report):
    small = dataclasses.replace(SCENARIO, runs=3, flows_per_run=150)
    digests = {run_scenario(small).digest() for _ in range(2)}
    assert len(digests) == 1

    # The full-size report regenerates to the same digest as the fixture.
    assert run_scenario(SCENARIO).digest() == full_report.digest()

    theorem_config = dataclasses.replace(THEOREM_CONFIG, trials=1000)
    first = validate_t3_determinism(theorem_config).to_dict()
    second = validate_t3_determinism(theorem_config).to_dict()
    assert first == second
    t4_first = validate_t4_false_quarantine(theorem_config).to_dict()
    t4_second = validate_t4_false_quarantine(theorem_config).to_dict()
    assert t4_first == t4_second
    print("[PASS] criterion 12: scenario and Monte Carlo reports regenerate "
          "byte-identically from the same seed and config")
