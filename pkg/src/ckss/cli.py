"""Command line: run scenarios, replay and audit logs, check codec conformance.

Exit codes: 0 clean, 2 bad input (schema errors, missing or corrupt files),
3 an invariant violation found in a run or log.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .blackbox import BlackBox, CorruptLog, TickOutOfRange, export_snapshot, replay
from .command import OperatorMode, OperatorPolicy
from .conformance import run_conformance
from .scenario import SchemaError, load_scenario
from .sim import Simulation
from .verify import verify_log

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_VIOLATION = 3


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _write_json(data, path: str | None) -> None:
    text = json.dumps(data, indent=2, sort_keys=True) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def cmd_run(args) -> int:
    try:
        scenario = load_scenario(Path(args.scenario) if Path(args.scenario).exists() else args.scenario)
    except SchemaError as exc:
        for line in exc.errors:
            _err(f"schema: {line}")
        return EXIT_INPUT
    operator = None
    if args.operator is not None:
        mode = OperatorMode(args.operator)
        operator = OperatorPolicy(mode, dict(scenario.operator.table))
    sim = Simulation(scenario, seed=args.seed, max_ticks=args.max_ticks, operator=operator)
    sim.run()
    log_path = args.log or f"{scenario.name}.ckbb"
    sim.log.write(log_path)
    report = sim.report()
    report["log"] = str(log_path)
    report["summary"] = sim.summary()
    _write_json(report, args.report)
    violations = verify_log(sim.log)
    for v in violations:
        _err(f"violation: {v}")
    return EXIT_VIOLATION if violations else EXIT_OK


def _read_log(path: str):
    try:
        return BlackBox.read(path)
    except FileNotFoundError:
        _err(f"{path}: no such log")
    except CorruptLog as exc:
        _err(f"{path}: corrupt log: {exc}")
    return None


def cmd_replay(args) -> int:
    log = _read_log(args.log)
    if log is None:
        return EXIT_INPUT
    if args.snapshot is not None:
        try:
            sys.stdout.write(export_snapshot(log, args.snapshot))
        except TickOutOfRange as exc:
            _err(str(exc))
            return EXIT_INPUT
        return EXIT_OK
    result = replay(log)
    _write_json({"ticks": len(result.stream), "records": len(log), "summary": result.summary}, None)
    return EXIT_OK


def cmd_verify(args) -> int:
    log = _read_log(args.log)
    if log is None:
        return EXIT_INPUT
    violations = verify_log(log)
    for v in violations:
        print(f"violation: {v}")
    print(f"{len(log)} records, {len(violations)} violations")
    return EXIT_VIOLATION if violations else EXIT_OK


def cmd_conformance(args) -> int:
    results = run_conformance(args.corpus)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} cases passed")
    return EXIT_VIOLATION if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ckss", description="Codified-key safety switch simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario to quiescence")
    run.add_argument("scenario", help="scenario file, or the name of a bundled scenario")
    run.add_argument("--seed", type=int)
    run.add_argument("--max-ticks", type=int)
    run.add_argument("--log", help="black-box output path (default <name>.ckbb)")
    run.add_argument("--report", help="compliance report path (default stdout)")
    run.add_argument("--operator", choices=[m.value for m in OperatorMode])
    run.set_defaults(func=cmd_run)

    rep = sub.add_parser("replay", help="re-derive the final summary from a log")
    rep.add_argument("log")
    rep.add_argument("--snapshot", type=int, metavar="TICK", help="export the battle-space at TICK instead")
    rep.set_defaults(func=cmd_replay)

    ver = sub.add_parser("verify", help="re-check invariants over a finished log")
    ver.add_argument("log")
    ver.set_defaults(func=cmd_verify)

    conf = sub.add_parser("conformance", help="run the codec golden-vector suite")
    conf.add_argument("--corpus", help="corpus directory (default: the bundled one)")
    conf.set_defaults(func=cmd_conformance)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
