"""Command-line entry point for scenarios, sweeps, attacks and validation.

Exit codes: 0 on success, 1 when an acceptance threshold fails (theorem
validation below its band, tampered audit log), 2 on usage or configuration
errors.  All reports are JSON written atomically (temp file, then rename)
with sorted keys, so the same arguments, config and seed produce
byte-identical files.  Wall-clock timing is volatile and therefore excluded
from reports unless explicitly requested with --with-timings.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import tempfile
from pathlib import Path

from .audit import verify_chain
from .bus import EnforcementMode, states_from_dict, states_to_dict
from .errors import GovTelemError
from .escalation import reset_circuit_breaker
from .harness import (
    DEFAULT_SWEEP_RATES,
    AttackKind,
    attack_campaign,
    run_scenario,
    sensitivity_sweep,
)
from .model import FailMode
from .scenario import (
    ScenarioConfig,
    apply_overrides,
    config_to_yaml,
    load_config,
)
from .theorems import (
    TheoremRunConfig,
    validate_t2_convergence,
    validate_t3_determinism,
    validate_t4_false_quarantine,
)

EXIT_OK = 0
EXIT_THRESHOLD = 1
EXIT_USAGE = 2


def _atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_report(path: str | None, doc: dict) -> None:
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if path:
        _atomic_write(Path(path), text)
    else:
        sys.stdout.write(text)


def _load_scenario(args) -> ScenarioConfig:
    config = load_config(args.config) if args.config else ScenarioConfig()
    if getattr(args, "override", None):
        config = apply_overrides(config, args.override)
    return config


def _cmd_run(args) -> int:
    config = _load_scenario(args)
    if args.mode:
        config = dataclasses.replace(config, mode=EnforcementMode(args.mode))
    report = run_scenario(config)
    doc = report.to_dict(include_timing=args.with_timings)
    doc["report_digest"] = report.digest()
    _write_report(args.out, doc)
    if args.save_state:
        # Re-run the final run to capture end-of-run agent state for operator
        # tooling; scenario runs are deterministic so this is a pure snapshot.
        from .harness import run_single  # noqa: PLC0415
        from .signing import AgentKeyStore, KeyRegistry  # noqa: PLC0415

        keystore = AgentKeyStore()
        registry = KeyRegistry()
        keystore.provision([a.name for a in config.agents], registry)
        from .bus import EnforcementBus  # noqa: PLC0415
        from .rules import default_rule_pack  # noqa: PLC0415
        from .scenario import generate_run  # noqa: PLC0415
        from .signing import sign_event  # noqa: PLC0415

        bus = EnforcementBus(
            system=config.system(),
            pack=default_rule_pack(),
            directory=config.directory(),
            registry=registry,
            escalation_config=config.escalation,
            mode=config.mode,
            compliance_sink=config.compliance_sink,
        )
        for flow in generate_run(config, config.runs - 1):
            for fe in flow.events:
                bus.process_event(sign_event(fe.event, keystore.key_for(fe.event.source)))
        _atomic_write(
            Path(args.save_state),
            json.dumps(states_to_dict(bus.states), sort_keys=True, indent=2) + "\n",
        )
    return EXIT_OK


def _cmd_sweep(args) -> int:
    config = _load_scenario(args)
    rates = (
        [float(r) for r in args.rates.split(",")] if args.rates else list(DEFAULT_SWEEP_RATES)
    )
    rows = sensitivity_sweep(config, rates)
    _write_report(args.out, {"kind": "sensitivity-sweep", "rows": rows})
    return EXIT_OK


def _cmd_attack(args) -> int:
    config = _load_scenario(args)
    override = FailMode(args.fail_mode) if args.fail_mode else None
    report = attack_campaign(config, AttackKind(args.attack), fail_mode_override=override)
    _write_report(args.out, report.to_dict())
    return EXIT_OK


# Acceptance bands for theorem validation; the CLI exit code encodes them.
T2_A3_REQUIRED = 1.0
T2_NO_BREAKER_BAND = (0.90, 0.999)
T2_BREAKER_MIN = 0.995
T3_REQUIRED = 1.0
T4_INDEPENDENT_MIN = 0.99
T4_CORRECTED_MIN = 0.93


def _cmd_validate_theorems(args) -> int:
    config = TheoremRunConfig(trials=args.trials, seed=args.seed)
    results = {}
    checks: list[tuple[str, bool]] = []

    a3 = validate_t2_convergence(
        dataclasses.replace(config, heavy_tail=False), breaker_enabled=False
    )
    results["t2_bounded_rates"] = a3.to_dict()
    checks.append(("t2 bounded-rate convergence == 100%", a3.success_fraction == T2_A3_REQUIRED))

    heavy = validate_t2_convergence(config, breaker_enabled=False)
    results["t2_heavy_tail"] = heavy.to_dict()
    lo, hi = T2_NO_BREAKER_BAND
    checks.append(
        (f"t2 heavy-tail success in [{lo}, {hi}]", lo <= heavy.success_fraction <= hi)
    )
    min_fail_rate = heavy.detail.get("min_failure_rate")
    checks.append(
        ("t2 failures confined to rates > 0.4", min_fail_rate is None or min_fail_rate > 0.4)
    )

    breaker = validate_t2_convergence(config, breaker_enabled=True)
    results["t2_with_breaker"] = breaker.to_dict()
    checks.append(("t2 breaker success >= 99.5%", breaker.success_fraction >= T2_BREAKER_MIN))
    checks.append(
        (
            "t2 breaker trips quarantine within the breaker window",
            breaker.detail["breaker_trips"] == breaker.detail["trips_within_breaker_window"],
        )
    )

    t3 = validate_t3_determinism(config)
    results["t3"] = t3.to_dict()
    checks.append(("t3 order independence == 100%", t3.success_fraction == T3_REQUIRED))

    t4_indep = validate_t4_false_quarantine(dataclasses.replace(config, rho=0.0))
    results["t4_independent"] = t4_indep.to_dict()
    checks.append(
        (
            "t4 independence bound holds in >= 99% of trials",
            t4_indep.detail["independence_hold_fraction"] >= T4_INDEPENDENT_MIN,
        )
    )

    t4_corr = validate_t4_false_quarantine(dataclasses.replace(config, rho=0.2))
    results["t4_correlated"] = t4_corr.to_dict()
    checks.append(
        (
            "t4 corrected bound holds in >= 93% of trials",
            t4_corr.detail["corrected_hold_fraction"] >= T4_CORRECTED_MIN,
        )
    )

    passed = all(ok for _, ok in checks)
    doc = {
        "kind": "theorem-validation",
        "trials": args.trials,
        "seed": args.seed,
        "checks": [{"check": name, "passed": ok} for name, ok in checks],
        "passed": passed,
        "results": results,
    }
    _write_report(args.out, doc)
    for name, ok in checks:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}", file=sys.stderr)
    return EXIT_OK if passed else EXIT_THRESHOLD


def _cmd_audit_verify(args) -> int:
    report = verify_chain(args.log)
    doc = {
        "kind": "audit-verification",
        "ok": report.ok,
        "records": report.records,
        "root": report.root.hex(),
        "first_tampered_index": report.first_tampered_index,
        "truncated_at": report.truncated_at,
    }
    _write_report(args.out, doc)
    if not report.ok:
        where = (
            f"tampered record index {report.first_tampered_index}"
            if report.first_tampered_index is not None
            else f"truncated at record {report.truncated_at}"
        )
        print(f"audit-verify: FAIL ({where})", file=sys.stderr)
        return EXIT_THRESHOLD
    print(f"audit-verify: OK ({report.records} records)", file=sys.stderr)
    return EXIT_OK


def _cmd_breaker_reset(args) -> int:
    config = _load_scenario(args)
    path = Path(args.state)
    states = states_from_dict(json.loads(path.read_text()))
    if args.agent not in states:
        raise GovTelemError(f"agent {args.agent!r} not present in state file")
    state = states[args.agent]
    now = max((r.time for r in state.history), default=0.0)
    result = reset_circuit_breaker(state, args.token, now, config.escalation)
    _atomic_write(path, json.dumps(states_to_dict(states), sort_keys=True, indent=2) + "\n")
    if args.audit_log:
        from .audit import MerkleAuditLog  # noqa: PLC0415

        log = MerkleAuditLog(args.audit_log)
        log.append(
            json.dumps(
                {
                    "op": "breaker-reset",
                    "agent": args.agent,
                    "operator": args.token,
                    "was_broken": result.was_broken,
                    "new_level": result.new_level,
                },
                sort_keys=True,
            ).encode()
        )
        log.close()
    status = "reset" if result.was_broken else "no-op (agent was not quarantined)"
    print(f"breaker-reset: {status}; level={result.new_level}", file=sys.stderr)
    return EXIT_OK


def _cmd_emit_config(args) -> int:
    text = config_to_yaml(ScenarioConfig())
    if args.out:
        _atomic_write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="govtelem",
        description="Closed-loop governance enforcement engine: scenario runs, "
        "sensitivity sweeps, attack campaigns, theorem validation and audit tooling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write the metrics report")
    run.add_argument("--config", help="scenario config YAML (defaults used when omitted)")
    run.add_argument("--out", help="report path (stdout when omitted)")
    run.add_argument("--mode", choices=[m.value for m in EnforcementMode])
    run.add_argument("--override", action="append", metavar="KEY=VALUE",
                     help="dotted config override, repeatable")
    run.add_argument("--with-timings", action="store_true",
                     help="include volatile wall-clock timing in the report")
    run.add_argument("--save-state", help="write end-of-run agent state snapshot JSON")
    run.set_defaults(func=_cmd_run)

    sweep = sub.add_parser("sweep", help="injection-rate sensitivity sweep")
    sweep.add_argument("--config")
    sweep.add_argument("--out")
    sweep.add_argument("--rates", help="comma-separated rates, e.g. 0.001,0.01,0.05")
    sweep.add_argument("--override", action="append", metavar="KEY=VALUE")
    sweep.set_defaults(func=_cmd_sweep)

    attack = sub.add_parser("attack", help="run an adversarial telemetry campaign")
    attack.add_argument("--config")
    attack.add_argument("--out")
    attack.add_argument("--attack", required=True, choices=[a.value for a in AttackKind])
    attack.add_argument("--fail-mode", choices=[m.value for m in FailMode],
                        help="force every risk tier to this fail mode")
    attack.add_argument("--override", action="append", metavar="KEY=VALUE")
    attack.set_defaults(func=_cmd_attack)

    validate = sub.add_parser("validate-theorems",
                              help="Monte Carlo validation against acceptance bands")
    validate.add_argument("--trials", type=int, default=10_000)
    validate.add_argument("--seed", type=int, default=2024)
    validate.add_argument("--out")
    validate.set_defaults(func=_cmd_validate_theorems)

    audit = sub.add_parser("audit-verify", help="verify an audit log file end to end")
    audit.add_argument("--log", required=True)
    audit.add_argument("--out")
    audit.set_defaults(func=_cmd_audit_verify)

    reset = sub.add_parser("breaker-reset",
                           help="manually reset a quarantined agent in a state snapshot")
    reset.add_argument("--state", required=True, help="agent state snapshot JSON")
    reset.add_argument("--agent", required=True)
    reset.add_argument("--token", required=True, help="operator token for audit attribution")
    reset.add_argument("--config", help="scenario config for escalation parameters")
    reset.add_argument("--audit-log", help="append the reset record to this audit log")
    reset.add_argument("--override", action="append", metavar="KEY=VALUE")
    reset.set_defaults(func=_cmd_breaker_reset)

    emit = sub.add_parser("emit-config", help="write the default scenario config")
    emit.add_argument("--out")
    emit.set_defaults(func=_cmd_emit_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help; pass both through.
        return int(exc.code or 0)
    try:
        return args.func(args)
    except GovTelemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
