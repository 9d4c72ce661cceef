"""Command-line driver: ``encflow check | compile | run``.

Exit codes: 0 clean, 1 flow errors / aborted calls / diverging histories,
2 unreadable or malformed input.
"""
from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

from . import ast as A
from .crypto import CryptoError, KeyStore
from .lattice import LatticeError
from .parser import LSQLSyntaxError, ProgramError, parse_program, parse_workload
from .partitioner import parse_manifest, partition, PartitionedProgram
from .policy import Policy, PolicyError, Stats
from .rewriter import RewriteError, rewrite
from .runtime import (ClientState, LSQLRuntimeError, audit_trace, cleartext_config, compare_histories,
                      load_fixture, read_fixture_dir, run_workload)
from .typeinfer import TypeInferenceError, infer_program, optimize_assignment, suggest_policy_fix

MODES = ("strict", "explicit-only", "permissive")
INPUT_ERRORS = (OSError, LSQLSyntaxError, ProgramError, PolicyError, CryptoError, LatticeError,
                TypeInferenceError, UnicodeDecodeError)


class InputError(Exception):
    pass


def _read(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as e:
        raise InputError(f"cannot read {path}: {e.strerror}") from None


def _emit(report: dict, out) -> None:
    out.write(json.dumps(report, indent=2, sort_keys=True) + "\n")


def _typed(program_file, policy_file, mode):
    program = parse_program(_read(program_file))
    policy = Policy.parse(_read(policy_file))
    return program, policy, infer_program(program, policy, mode)


def _check_report(tprog) -> dict:
    edits = suggest_policy_fix(tprog)
    errors = []
    for e in tprog.errors:
        e.suggestions = [s for s in edits if (s.table, s.column) in map(tuple, e.columns)]
        errors.append(e.as_dict())
    coercions = {n: len(tp.coerced_nodes()) if tp.ok else None for n, tp in tprog.procs.items()}
    return {"mode": tprog.mode, "ok": tprog.ok, "errors": errors,
            "suggestions": [s.as_text() for s in edits], "coercions": coercions}


def cmd_check(args, out) -> int:
    _, _, tprog = _typed(args.program, args.policy, args.mode)
    report = _check_report(tprog)
    _emit(report, out)
    return 0 if tprog.ok else 1


def count_coercions(program: A.Program) -> dict:
    return {p.name: sum(1 for n in A.walk(p.body) if isinstance(n, A.Coercion)) for p in program.procedures}


def compile_program(program, policy, mode="strict", stats=None, icm=True, extract=True, txelim=True):
    """Infer, optimize, rewrite and partition.  Returns ``(tprog, compiled,
    partitioned)``; the last two are None when the program has flow errors
    under ``mode``."""
    tprog = infer_program(program, policy, mode)
    if not tprog.ok and mode != "permissive":
        return tprog, None, None
    if tprog.ok:
        tprog = optimize_assignment(tprog, stats or Stats())
    compiled = rewrite(tprog)
    return tprog, compiled, partition(compiled, icm, extract, txelim)


def cmd_compile(args, out) -> int:
    program = parse_program(_read(args.program))
    policy = Policy.parse(_read(args.policy))
    stats = Stats.parse(_read(args.stats)) if args.stats else Stats()
    tprog, compiled, pp = compile_program(program, policy, args.mode, stats,
                                          not args.no_icm, not args.no_extract, not args.no_txelim)
    if pp is None:
        report = _check_report(tprog)
        report["compiled"] = False
        _emit(report, out)
        return 1
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "client.lsql").write_text(pp.render_client() + "\n")
    (outdir / "manifest.txt").write_text(pp.render_manifest())
    (outdir / "source.lsql").write_text(_read(args.program))
    (outdir / "policy.txt").write_text(policy.render())
    report = {
        "mode": args.mode,
        "compiled": True,
        "coercions": count_coercions(compiled.program),
        "distributed_tx": pp.distributed_tx,
        "closures": len(pp.closures),
        "flow_errors": len(tprog.errors),
        "stats_defaulted": sorted(f"{t}.{c}" for t, c in stats.missing),
    }
    (outdir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _emit(report, out)
    return 0


def load_artifacts(path) -> tuple[PartitionedProgram, A.Program, Policy]:
    d = Path(path)
    client = parse_program(_read(d / "client.lsql"), allow_compiled=True)
    closures = parse_manifest(_read(d / "manifest.txt"))
    source = parse_program(_read(d / "source.lsql"))
    policy = Policy.parse(_read(d / "policy.txt"))
    return PartitionedProgram(client, closures), source, policy


def cmd_run(args, out) -> int:
    pp, source, policy = load_artifacts(args.artifacts)
    keys = KeyStore.parse(_read(args.keys), seed=args.seed or 0)
    if not Path(args.fixture).is_dir():
        raise InputError(f"fixture directory {args.fixture} not found")
    fixture = read_fixture_dir(args.fixture)
    workload = parse_workload(_read(args.workload))
    rng = random.Random(args.seed) if args.seed is not None else random.Random()
    server = load_fixture(fixture, policy, keys, rng)
    client = ClientState(keys, rng)
    history, metrics, trace = run_workload(pp, workload, server, client)
    violations = audit_trace(trace)
    aborted = [i for i, e in enumerate(history.events) if getattr(e, "error", False)]
    report = {"metrics": metrics.as_dict(), "violations": violations, "aborted_events": aborted}
    status = 1 if aborted else 0
    if args.compare_cleartext:
        ref, _, _ = run_workload(source, workload, cleartext_config(fixture))
        cmp = compare_histories(ref, history)
        report["histories_identical"] = cmp.identical
        report["first_divergence"] = cmp.index
        if not cmp.identical:
            status = 1
    _emit(report, out)
    return status


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="encflow", description="Encryption-type checker and partitioner for LSQL")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("program")
        p.add_argument("policy")
        p.add_argument("--mode", choices=MODES, default="strict")

    p = sub.add_parser("check", help="report flow errors and policy suggestions")
    common(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("compile", help="rewrite and partition a program")
    common(p)
    p.add_argument("--stats")
    p.add_argument("--no-icm", action="store_true")
    p.add_argument("--no-extract", action="store_true")
    p.add_argument("--no-txelim", action="store_true")
    p.add_argument("-o", "--out", default="encflow-out")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("run", help="execute compiled artifacts on the simulator")
    p.add_argument("artifacts")
    p.add_argument("fixture", help="directory with one CSV per table")
    p.add_argument("keys")
    p.add_argument("workload")
    p.add_argument("--seed", type=int)
    p.add_argument("--compare-cleartext", action="store_true")
    p.set_defaults(func=cmd_run)
    return ap


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, out)
    except (InputError, RewriteError, LSQLRuntimeError) + INPUT_ERRORS as e:
        _emit({"error": str(e), "kind": type(e).__name__}, out)
        return 2


if __name__ == "__main__":
    sys.exit(main())
