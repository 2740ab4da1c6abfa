"""Command-line entry point.

Exit codes follow sysexits: 0 ok, 1 check failed, 2 timeout, 3 stuck,
64 usage, 65 bad program text, 66 missing input file.
"""

from __future__ import annotations

import argparse
import contextlib
import sys
from pathlib import Path

from .calculus import Program, parse_program
from .errors import BoundsTooLarge, ParseError
from .explorer import explore_protocol, explore_system
from .protocol import all_faults, injected
from .runtime import replay_check, run, spawn_system, trace

EX_OK, EX_FAIL, EX_TIMEOUT, EX_STUCK = 0, 1, 2, 3
EX_USAGE, EX_DATAERR, EX_NOINPUT = 64, 65, 66


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EX_USAGE, f"{self.prog}: error: {message}\n")


def _load(path: str) -> Program:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(path)
    return parse_program(p.read_text())


def _faults(names):
    for n in names or ():
        if n not in all_faults():
            raise UsageError(f"unknown fault {n!r}; known: {', '.join(sorted(all_faults()))}")
    return injected(*names) if names else contextlib.nullcontext()


def _emit(text: str, report: str | None) -> None:
    print(text)
    if report:
        Path(report).write_text(text + "\n")


def cmd_run(args) -> int:
    prog = _load(args.file)
    h = spawn_system(prog, seed=args.seed)
    out = run(h, args.timeout)
    records = trace(h)
    if args.verbose:
        logged = {r.seq: r.line() for r in records}
        for seq, s in sorted(h.steps, key=lambda x: x[0]):
            print(logged.get(seq) or f"silent {s.rule} {s.proc}")
    else:
        print("\n".join(r.line() for r in records))
    if args.log:
        Path(args.log).write_text("".join(r.line() + "\n" for r in records))
    for name, v in sorted(out.values.items()):
        print(f"# {name} = {v}")
    print(f"# {out.status} after {out.steps} steps")
    if args.check:
        v = replay_check(h)
        print(f"# replay: {'ok' if v.ok else v.violation}")
        if not v.ok:
            return EX_FAIL
    if out.status != "terminated":
        print(out.dump, file=sys.stderr)
    return {"terminated": EX_OK, "timeout": EX_TIMEOUT, "stuck": EX_STUCK}[out.status]


def cmd_explore(args) -> int:
    prog = _load(args.file)
    with _faults(args.inject_fault):
        rep = explore_system(prog, args.depth, args.k, cap=args.cap)
    _emit(rep.text(), args.report)
    return EX_OK if rep.ok else EX_FAIL


def cmd_check_refinement(args) -> int:
    prog = _load(args.file)
    if args.depth == 0:
        print("warning: depth 0 checks no steps", file=sys.stderr)
    with _faults(args.inject_fault):
        rep = explore_system(prog, args.depth, args.k, cap=args.cap)
    _emit(rep.text(), args.report)
    return EX_OK if not rep.findings else EX_FAIL


def cmd_check_protocol(args) -> int:
    if args.time_bound < 1 or args.values < 1:
        raise UsageError("--time-bound and --values must be at least 1")
    with _faults(args.inject_fault):
        rep = explore_protocol(args.time_bound, args.values, cap=args.cap)
    _emit(rep.text(), args.report)
    return EX_OK if rep.ok else EX_FAIL


def cmd_parse(args) -> int:
    prog = _load(args.file)
    print(f"ok: {len(prog.processes)} processes, {len(prog.channels)} channels")
    return EX_OK


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="revcsp", description="Reversible communicating processes: run, explore and check.")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="execute a program with one thread per process")
    p.add_argument("file")
    p.add_argument("--timeout", type=float, default=10.0, help="seconds (default 10)")
    p.add_argument("--seed", type=int, default=None, help="randomize tie-breaks and pacing")
    p.add_argument("--verbose", action="store_true", help="also print every rule step")
    p.add_argument("--log", help="write the event log (tab-separated) to this file")
    p.add_argument("--check", action="store_true", help="replay the step log and check refinement")
    p.set_defaults(func=cmd_run)

    for name, func, depth, doc in (
        ("explore", cmd_explore, 20, "enumerate low-level interleavings"),
        ("check-refinement", cmd_check_refinement, 40, "check every explored step against the atomic semantics"),
    ):
        p = sub.add_parser(name, help=doc)
        p.add_argument("file")
        p.add_argument("--depth", type=int, default=depth)
        p.add_argument("--k", type=int, default=1, help="fresh timestamps tried per choice")
        p.add_argument("--cap", type=int, default=500_000, help="give up past this many states")
        p.add_argument("--report", help="also write the report to this file")
        p.add_argument("--inject-fault", action="append", metavar="NAME")
        p.set_defaults(func=func)

    p = sub.add_parser("check-protocol", help="exhaustively check one channel cell")
    p.add_argument("--time-bound", type=int, default=4)
    p.add_argument("--values", type=int, default=2, help="size of the value domain")
    p.add_argument("--cap", type=int, default=2_000_000)
    p.add_argument("--report")
    p.add_argument("--inject-fault", action="append", metavar="NAME")
    p.set_defaults(func=cmd_check_protocol)

    p = sub.add_parser("parse", help="syntax-check a program")
    p.add_argument("file")
    p.set_defaults(func=cmd_parse)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"revcsp: no such file: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EX_NOINPUT
    except ParseError as exc:
        print(f"revcsp: {args.file}: {exc}", file=sys.stderr)
        return EX_DATAERR
    except (UsageError, BoundsTooLarge, ValueError) as exc:
        print(f"revcsp: {exc}", file=sys.stderr)
        return EX_USAGE


if __name__ == "__main__":
    sys.exit(main())
