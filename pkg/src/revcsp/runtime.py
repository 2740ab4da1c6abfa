"""Threaded runtime: one thread per process, channels as shared two-half cells.

Each unit repeatedly fires the low-level policy step of its own process.
A step locks the unit and the process's channel cells (always in the same
global order), so the sequence number drawn inside the critical section
gives a log that replays exactly under the sequential low-level stepper.
The only shared state is the channel cells; each half has a single writer,
which the audit checks after every step.
"""

from __future__ import annotations

import itertools
import random
import threading
import time
from contextlib import ExitStack
from dataclasses import dataclass, field

from .calculus import Program, StableActive, is_value, show
from .errors import NotQuiescent, RefinementViolation, SpawnFailure
from .hl import Event, Proc, Step, show_config
from .ll import ConfigLL, choose, initial_ll, policy_groups, terminated, try_apply
from .refinement import TraceVerdict, check_run

PARK_SECONDS = 0.005
MONITOR_SECONDS = 0.002

# step rules that leave a marker in the trace besides comm/rewind
MARKERS = {"H3": "enter", "H4": "exit", "H5": "backtrack", "H8": "resume"}


@dataclass(frozen=True)
class Record:
    seq: int
    kind: str
    chan: str | None
    time: int | None
    value: str | None
    proc: str

    def line(self) -> str:
        cols = [self.seq, self.kind, self.chan, self.time, self.value, self.proc]
        return "\t".join("-" if c is None else str(c) for c in cols)


@dataclass
class Outcome:
    status: str  # terminated | timeout | stuck
    values: dict = field(default_factory=dict)
    steps: int = 0
    dump: str = ""


class _Unit:
    def __init__(self, proc: Proc, chans: list[str], rng: random.Random | None):
        self.proc = proc
        self.name = proc.name
        self.chans = chans
        self.rng = rng
        self.lock = threading.Lock()
        self.wake = threading.Event()
        self.idle = False
        self.thread: threading.Thread | None = None


class System:
    """Handle returned by ``spawn_system``."""

    def __init__(self, program: Program, seed: int | None = None, jitter: bool | None = None):
        start = initial_ll(program)
        self.cells = dict(start.channels)
        self.chan_locks = {c: threading.Lock() for c in sorted(self.cells)}
        self.versions = {c: [0, 0] for c in self.cells}
        self.units: dict[str, _Unit] = {}
        for p in start.procs:
            rng = random.Random(f"{seed}:{p.name}") if seed is not None else None
            self.units[p.name] = _Unit(p, start.channels_of(p.name), rng)
        self.jitter = seed is not None if jitter is None else jitter
        self.start_config = start
        self.seq = itertools.count()
        self.records: list[Record] = []
        self.steps: list[tuple[int, Step]] = []
        self.audit: list[str] = []
        self.stop = threading.Event()
        self.state = "spawned"
        self.outcome: Outcome | None = None

    # -- views and locking --------------------------------------------------

    def _view(self, u: _Unit) -> ConfigLL:
        return ConfigLL(tuple((c, self.cells[c]) for c in u.chans), (u.proc,))

    def config(self) -> ConfigLL:
        """Current global configuration (callers must hold every lock)."""
        return ConfigLL(tuple(sorted(self.cells.items())),
                        tuple(self.units[n].proc for n in sorted(self.units)))

    def _lock_all(self, stack: ExitStack) -> None:
        for n in sorted(self.units):
            stack.enter_context(self.units[n].lock)
        for c in sorted(self.chan_locks):
            stack.enter_context(self.chan_locks[c])

    def _enabled_anywhere(self, C: ConfigLL) -> bool:
        for n in sorted(self.units):
            for group in policy_groups(C, n):
                if any(try_apply(C, s) is not None for s in group):
                    return True
        return False

    # -- one step -----------------------------------------------------------

    def _try_step(self, u: _Unit) -> bool:
        touched = []
        with ExitStack() as stack:
            stack.enter_context(u.lock)
            for c in u.chans:  # already sorted
                stack.enter_context(self.chan_locks[c])
            res = choose(self._view(u), u.name, u.rng)
            if res is None:
                return False
            step, after, ev = res
            for c, ch in after.channels:
                old = self.cells[c]
                if ch == old:
                    continue
                if ch.s != old.s:
                    self.versions[c][0] += 1
                    if ch.s.n != u.name:
                        self.audit.append(f"{u.name} wrote the sender half of {c}")
                if ch.r != old.r or ch.sync != old.sync:
                    self.versions[c][1] += 1
                    if ch.r.n != u.name:
                        self.audit.append(f"{u.name} wrote the receiver half of {c}")
                self.cells[c] = ch
                touched.append(c)
            u.proc = after.proc(u.name)
            seq = next(self.seq)
            self.steps.append((seq, step))
            self._record(seq, step, ev, u.proc)
        for c in touched:
            ch = self.cells[c]
            other = ch.r.n if u.name == ch.s.n else ch.s.n
            self.units[other].wake.set()
        return True

    def _record(self, seq: int, step: Step, ev: Event | None, p: Proc) -> None:
        if ev is not None:
            val = show(ev.value) if ev.value is not None else None
            self.records.append(Record(seq, ev.kind, ev.chan, ev.time, val, p.name))
        elif step.rule in MARKERS:
            self.records.append(Record(seq, MARKERS[step.rule], None, p.time, None, p.name))

    def _loop(self, u: _Unit) -> None:
        while not self.stop.is_set():
            u.wake.clear()
            if self._try_step(u):
                u.idle = False
                if self.jitter and u.rng.random() < 0.3:
                    time.sleep(u.rng.random() * 0.0005)
                continue
            u.idle = True
            u.wake.wait(PARK_SECONDS)

    # -- lifecycle ----------------------------------------------------------

    def _start(self) -> None:
        self.state = "running"
        for u in self.units.values():
            u.thread = threading.Thread(target=self._loop, args=(u,), name=f"unit-{u.name}", daemon=True)
            try:
                u.thread.start()
            except RuntimeError as exc:
                self._halt()
                raise SpawnFailure(f"cannot start unit {u.name}: {exc}") from exc

    def _halt(self) -> None:
        self.stop.set()
        for u in self.units.values():
            u.wake.set()
        for u in self.units.values():
            if u.thread is not None and u.thread.is_alive():
                u.thread.join()
        self.state = "stopped"

    def _settled(self) -> str | None:
        """'terminated' / 'stuck' when nothing can move, else None."""
        with ExitStack() as stack:
            self._lock_all(stack)
            C = self.config()
            if self._enabled_anywhere(C):
                return None
            return "terminated" if terminated(C) else "stuck"

    def _finish(self, status: str) -> Outcome:
        with ExitStack() as stack:
            self._lock_all(stack)
            C = self.config()
        values = {p.name: show(final_value(p)) for p in C.procs if final_value(p) is not None}
        dump = "" if status == "terminated" else show_config(C)
        self.outcome = Outcome(status, values, len(self.steps), dump)
        return self.outcome


def final_value(p: Proc):
    e = p.expr
    if isinstance(e, StableActive):
        e = e.body
    return e if is_value(e) else None


def spawn_system(program: Program, seed: int | None = None, jitter: bool | None = None) -> System:
    """Create one unit per process and one cell per channel (nothing runs yet)."""
    try:
        return System(program, seed, jitter)
    except (MemoryError, RuntimeError) as exc:
        raise SpawnFailure(str(exc)) from exc


def run(handle: System, timeout: float | None = 10.0) -> Outcome:
    if handle.outcome is not None:
        return handle.outcome
    if timeout is not None and timeout <= 0:
        # no time to run at all: report the initial state as it stands
        return handle._finish(handle._settled() or "timeout")
    handle._start()
    deadline = None if timeout is None else time.monotonic() + timeout
    status = None
    last = -1
    while status is None:
        time.sleep(MONITOR_SECONDS)
        if deadline is not None and time.monotonic() >= deadline:
            status = "timeout"
            break
        if not all(u.idle for u in handle.units.values()):
            continue
        n = len(handle.steps)
        if n == last:
            status = handle._settled()
        last = n
    handle._halt()
    if status == "timeout":
        status = handle._settled() or "timeout"
    return handle._finish(status)


def trace(handle: System) -> list[Record]:
    return sorted(handle.records, key=lambda r: r.seq)


def step_log(handle: System) -> list[Step]:
    return [s for _, s in sorted(handle.steps, key=lambda x: x[0])]


def snapshot(handle: System) -> ConfigLL:
    """Consistent configuration; only while nothing is mid-flight."""
    if handle.state == "spawned":
        return handle.start_config
    with ExitStack() as stack:
        handle._lock_all(stack)
        C = handle.config()
        if handle.state == "running" and handle._enabled_anywhere(C):
            raise NotQuiescent("units still have enabled steps; wait for run() to return")
        return C


def replay_check(handle: System) -> TraceVerdict:
    """Replay the step log sequentially and check refinement plus event labels."""
    v = check_run(handle.start_config, step_log(handle))
    logged = [(r.kind, r.chan, r.time, r.value) for r in trace(handle) if r.kind in ("comm", "rewind")]
    replayed = [(e.kind, e.chan, e.time, show(e.value) if e.value is not None else None) for e in v.events]
    if v.ok and logged != replayed:
        v.violation = RefinementViolation("logged events differ from the sequential replay")
    return v
