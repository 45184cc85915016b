"""Command-line entry points: verify one problem, sweep a benchmark
directory, or just run the input checks. Exit codes: 0 verified, 1 no
solution in the predicate language, 2 usage or input error, 3 resource
limit, 4 internal soundness failure."""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from . import formula as fm
from .abstraction import SoundnessError
from .composition import render_pseudocode, render_smt
from .engine import Verdict, VerdictKind, verify
from .problem import ProblemError, ProblemFile, load_problem
from .solver import SolverError, SolverSession
from .system import check_adequacy, check_wellformed, mine_predicates

EXIT_VERIFIED = 0
EXIT_NO_SOLUTION = 1
EXIT_INPUT = 2
EXIT_RESOURCE = 3
EXIT_INTERNAL = 4

_EXIT_OF_KIND = {
    VerdictKind.VERIFIED: EXIT_VERIFIED,
    VerdictKind.NO_SOLUTION: EXIT_NO_SOLUTION,
    VerdictKind.RESOURCE_LIMIT: EXIT_RESOURCE,
}


@dataclass
class RunReport:
    """Machine-readable result record; field names are stable."""

    program: str
    verdict: str
    composition: dict[str, str] | None = None
    composition_pseudocode: str | None = None
    invariant: str | None = None
    metrics: dict = field(default_factory=dict)
    check_pair: dict | None = None
    bmc_witness: list[dict] | None = None
    reason: str = ""

    def as_dict(self) -> dict:
        return {
            "program": self.program,
            "verdict": self.verdict,
            "composition": self.composition,
            "composition_pseudocode": self.composition_pseudocode,
            "invariant": self.invariant,
            "metrics": self.metrics,
            "check_pair": self.check_pair,
            "bmc_witness": self.bmc_witness,
            "reason": self.reason,
        }


def _report_of(problem: ProblemFile, verdict: Verdict) -> RunReport:
    report = RunReport(program=problem.name, verdict=verdict.kind.value)
    report.metrics = {
        "iterations": verdict.iterations,
        "excluded": verdict.excluded,
        "unreach_cubes": verdict.unreach_cubes,
        "abstract_states": verdict.states_explored,
        "wall_ms": verdict.wall_ms,
    }
    if verdict.verified:
        report.composition = render_smt(verdict.composition)
        report.composition_pseudocode = render_pseudocode(verdict.composition)
        report.invariant = fm.to_wire(verdict.invariant)
    if verdict.check_pair_report is not None:
        report.check_pair = verdict.check_pair_report.as_dict()
    report.bmc_witness = verdict.bmc_witness
    report.reason = verdict.reason
    return report


def _print_report(report: RunReport, out=sys.stdout):
    m = report.metrics
    print(f"program:   {report.program}", file=out)
    print(f"verdict:   {report.verdict.upper()}", file=out)
    if m:
        print(f"metrics:   iterations={m['iterations']} excluded={m['excluded']} "
              f"unreach={m['unreach_cubes']} states={m['abstract_states']} "
              f"wall_ms={m['wall_ms']}", file=out)
    if report.reason:
        print(f"reason:    {report.reason}", file=out)
    if report.composition_pseudocode:
        print("composition:", file=out)
        for line in report.composition_pseudocode.splitlines():
            print(f"  {line}", file=out)
    if report.invariant:
        print(f"invariant: {report.invariant}", file=out)
    if report.check_pair:
        ok = "valid" if report.check_pair.get("passed") else "FAILED"
        print(f"pair check: {ok}", file=out)
    if report.bmc_witness is not None:
        print("concrete witness:", file=out)
        for i, row in enumerate(report.bmc_witness):
            vals = " ".join(f"{k}={v}" for k, v in sorted(row.items()))
            print(f"  step {i}: {vals}", file=out)


class InputRejected(Exception):
    """Input-level failure (parse, well-formedness, adequacy, solver setup)."""


def _prepare(problem: ProblemFile, session: SolverSession, *,
             assume_wellformed: bool = False, assume_adequate: bool = False):
    """Run the input gates and return the assembled predicate set."""
    wf = check_wellformed(problem.system, session)
    if wf.undetermined and not assume_wellformed:
        raise InputRejected(
            "well-formedness undetermined (solver unknown); "
            "pass --assume-wellformed to proceed")
    if not wf.undetermined and not wf.ok:
        broken = []
        if wf.terminal_frozen is not True:
            broken.append("terminal states have non-stuttering transitions")
        if wf.terminal_self_loop is not True:
            broken.append("terminal states lack a self-loop")
        raise InputRejected("ill-formed system: " + "; ".join(broken))

    P = mine_predicates(problem.system, problem.property, problem.predicates)
    to_check = [("pre", problem.property.pre), ("post", problem.property.post)]
    for i in range(1, problem.property.k + 1):
        to_check.append((f"terminal^{i}", problem.system.terminal_for_copy(i)))
    for name, f in to_check:
        witness: list = []
        verdict = check_adequacy(f, P, session, witness=witness)
        if verdict is None and not assume_adequate:
            raise InputRejected(
                f"adequacy of {name} undetermined (solver unknown); "
                "pass --assume-adequate to proceed")
        if verdict is False:
            split = witness[0] if witness else "?"
            raise InputRejected(
                f"{name} splits abstract state {split}; the predicate "
                "language cannot express it")
    return P


def run_verify(path: str, args) -> tuple[int, RunReport | None]:
    try:
        problem = load_problem(path)
    except ProblemError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT, None
    try:
        session = SolverSession(args.solver, log_path=args.smt_log)
    except SolverError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT, None
    try:
        P = _prepare(problem, session,
                     assume_wellformed=args.assume_wellformed,
                     assume_adequate=args.assume_adequate)
        verdict = verify(
            problem.system, problem.property, P, session,
            max_iters=args.max_iters, timeout_secs=args.timeout_secs,
            max_abstract_states=args.max_abstract_states,
            bmc_each_cex=args.bmc_each_cex,
            collect_graph=bool(args.dump_absgraph))
    except InputRejected as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT, None
    except SoundnessError as e:
        print(f"internal soundness failure: {e}", file=sys.stderr)
        return EXIT_INTERNAL, None
    except SolverError as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return EXIT_RESOURCE, None
    finally:
        session.close()
    if args.dump_absgraph and verdict.graph:
        Path(args.dump_absgraph).write_text(verdict.graph)
    report = _report_of(problem, verdict)
    return _EXIT_OF_KIND[verdict.kind], report


def _cmd_verify(args) -> int:
    code, report = run_verify(args.file, args)
    if report is not None:
        _print_report(report)
        if args.json:
            Path(args.json).write_text(json.dumps(report.as_dict(), indent=2) + "\n")
    return code


def _cmd_check(args) -> int:
    try:
        problem = load_problem(args.file)
        with SolverSession(args.solver, log_path=args.smt_log) as session:
            P = _prepare(problem, session,
                         assume_wellformed=args.assume_wellformed,
                         assume_adequate=args.assume_adequate)
    except (ProblemError, InputRejected, SolverError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    print(f"{args.file}: well-formed; predicates adequate ({len(P)} predicates)")
    return EXIT_VERIFIED


def _cmd_bench(args) -> int:
    root = Path(args.dir)
    if not root.is_dir():
        print(f"error: {root} is not a directory", file=sys.stderr)
        return EXIT_INPUT
    files = sorted(root.glob("*.pdsc"))
    rows = []

    def one(path: Path):
        t0 = time.monotonic()
        try:
            code, report = run_verify(str(path), args)
            secs = time.monotonic() - t0
            if report is None:
                return (path.name, "error", secs, "-")
            iters = report.metrics.get("iterations", "-")
            return (path.name, report.verdict, secs, iters)
        except Exception as e:  # keep the sweep alive
            return (path.name, f"error: {e}", time.monotonic() - t0, "-")

    if args.jobs > 1 and len(files) > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(one, files))
    else:
        rows = [one(p) for p in files]

    rows.sort(key=lambda r: r[0])
    name_w = max([len(r[0]) for r in rows], default=7)
    print(f"{'Program'.ljust(name_w)}  {'Verdict'.ljust(14)}  {'Time(s)':>8}  Iterations")
    for name, verdict, secs, iters in rows:
        print(f"{name.ljust(name_w)}  {verdict.ljust(14)}  {secs:8.1f}  {iters}")
    return EXIT_VERIFIED


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--solver", help="solver command (default: PDSC_SOLVER, z3 -in, "
                                    "or the bundled WASM shim)")
    p.add_argument("--smt-log", help="write the solver transcript to this file")
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--timeout-secs", type=float, default=None)
    p.add_argument("--max-abstract-states", type=int, default=None)
    p.add_argument("--bmc-each-cex", action="store_true",
                   help="concretize every abstract counterexample immediately")
    p.add_argument("--dump-absgraph", metavar="PATH",
                   help="write the last explored abstract graph as DOT")
    p.add_argument("--assume-wellformed", action="store_true")
    p.add_argument("--assume-adequate", action="store_true")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pdsc",
        description="k-safety verification by inferring a semantic "
                    "self-composition together with an inductive invariant")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_verify = sub.add_parser("verify", help="verify one problem file")
    p_verify.add_argument("file")
    p_verify.add_argument("--json", metavar="PATH", help="also write a JSON report")
    _add_common(p_verify)
    p_verify.set_defaults(fn=_cmd_verify)

    p_bench = sub.add_parser("bench", help="run every .pdsc file in a directory")
    p_bench.add_argument("dir")
    p_bench.add_argument("--jobs", type=int, default=1)
    p_bench.add_argument("--json", metavar="PATH", help=argparse.SUPPRESS)
    _add_common(p_bench)
    p_bench.set_defaults(fn=_cmd_bench, json=None)

    p_check = sub.add_parser("check", help="well-formedness and adequacy only")
    p_check.add_argument("file")
    _add_common(p_check)
    p_check.set_defaults(fn=_cmd_check)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
