"""High-level semantics: atomic communication and backtracking (rules H1-H8).

Configurations are immutable values.  Every rule is a function
``(config, ...) -> (config', event | None)`` that raises ``NotEnabled``
(or a subclass) when its guard fails.  The deterministic policy and the
``hl_enabled`` enumerator sit on top of those functions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterator

from .calculus import (
    UNIT, App, AppArg, Backtrack, Expr, Lam, Program, Recv, Send, Stable, StableActive,
    decompose, is_local_redex, memo_hash, is_stable_entry, is_value, plug, reduce_local, show,
    show_context, subst,
)
from .errors import BadTime, EmptyStack, NotEnabled, Stuck


@memo_hash
@dataclass(frozen=True)
class Frame:
    """Checkpoint pushed on stable-region entry.

    ``cont`` is the context to resume, with its hole in the argument
    position of the ``(stable f) _`` application.
    """

    cont: tuple
    value: Expr
    time: int
    saved: tuple  # ((channel, time), ...) sorted by channel

    def saved_time(self, chan: str) -> int | None:
        for c, t in self.saved:
            if c == chan:
                return t
        return None


@memo_hash
@dataclass(frozen=True)
class Proc:
    name: str
    time: int
    stack: tuple = ()
    expr: Expr = UNIT

    @property
    def top(self) -> Frame | None:
        return self.stack[-1] if self.stack else None

    @property
    def split(self):
        """``(context, redex)``, or None when finished or stuck."""
        try:
            return decompose(self.expr)
        except Stuck:
            return None

    @property
    def stuck(self) -> str | None:
        try:
            decompose(self.expr)
        except Stuck as exc:
            return str(exc)
        return None

    @property
    def redex(self) -> Expr | None:
        d = self.split
        return None if d is None else d[1]

    @property
    def backtracking(self) -> bool:
        return isinstance(self.redex, Backtrack)

    @property
    def done(self) -> bool:
        # A process that has finished its body but still holds its implicit
        # outermost region counts as done; it can still be forced back.
        if is_value(self.expr):
            return not self.stack
        return isinstance(self.expr, StableActive) and is_value(self.expr.body) and len(self.stack) == 1


@dataclass(frozen=True)
class ChannelHL:
    sender: str
    time: int
    receiver: str


@dataclass(frozen=True)
class Event:
    kind: str  # "comm" or "rewind"
    chan: str
    time: int
    value: Expr | None = None

    def __str__(self) -> str:
        if self.kind == "comm":
            return f"comm {self.chan}@{self.time} {show(self.value)}"
        return f"rewind {self.chan}@{self.time}"


@dataclass(frozen=True)
class Step:
    """One rule instance: which rule, which process, which channel, which parameter."""

    rule: str
    proc: str | None = None
    chan: str | None = None
    arg: object = None

    def __str__(self) -> str:
        parts = [self.rule]
        if self.proc is not None:
            parts.append(self.proc)
        if self.chan is not None:
            parts.append(self.chan)
        if self.arg is not None:
            parts.append(str(self.arg))
        return " ".join(parts)


@memo_hash
@dataclass(frozen=True)
class Config:
    channels: tuple  # ((name, channel), ...) sorted by name
    procs: tuple  # (Proc, ...) sorted by name

    def chan(self, name: str):
        for c, ch in self.channels:
            if c == name:
                return ch
        raise KeyError(name)

    def proc(self, name: str) -> Proc:
        for p in self.procs:
            if p.name == name:
                return p
        raise KeyError(name)

    def with_proc(self, p: Proc):
        return replace(self, procs=tuple(p if q.name == p.name else q for q in self.procs))

    def with_chan(self, name: str, ch):
        return replace(self, channels=tuple((c, ch if c == name else x) for c, x in self.channels))

    def channel_names(self) -> list[str]:
        return [c for c, _ in self.channels]

    def channels_of(self, n: str) -> list[str]:
        return [c for c, _ in self.channels if n in self.endpoints(c)]

    def partner(self, chan: str, n: str) -> str:
        s, r = self.endpoints(chan)
        return r if n == s else s

    # overridden per level
    def endpoints(self, chan: str) -> tuple[str, str]:
        raise NotImplementedError

    def chan_time(self, chan: str) -> int:
        raise NotImplementedError

    def snapshot_for(self, n: str) -> tuple:
        return tuple((c, self.chan_time(c)) for c in self.channels_of(n))


@memo_hash
@dataclass(frozen=True)
class ConfigHL(Config):
    def endpoints(self, chan):
        ch = self.chan(chan)
        return ch.sender, ch.receiver

    def chan_time(self, chan):
        return self.chan(chan).time


def outer_region(body: Expr) -> Expr:
    """Initial expression of a process: its body wrapped in the implicit region."""
    return App(Stable(Lam("_", body)), UNIT)


def initial_hl(program: Program) -> ConfigHL:
    chans = tuple((c, ChannelHL(s, 0, r)) for c, (s, r) in sorted(program.channels.items()))
    procs = tuple(Proc(n, 0, (), outer_region(b)) for n, b in sorted(program.processes.items()))
    return ConfigHL(chans, procs)


# ---------------------------------------------------------------------------
# rules


def _split(p: Proc):
    d = p.split
    if d is None:
        raise NotEnabled(f"{p.name} is stuck: {p.stuck}" if p.stuck else f"{p.name} has terminated")
    return d


def h1_local(C: Config, n: str):
    p = C.proc(n)
    ctx, r = _split(p)
    if not is_local_redex(r):
        raise NotEnabled(f"H1: {n} is not at a local redex")
    return C.with_proc(replace(p, expr=plug(ctx, reduce_local(r)))), None


def _h2_parties(C: ConfigHL, chan: str):
    snd, rcv = C.endpoints(chan)
    ps, pr = C.proc(snd), C.proc(rcv)
    ds, dr = ps.split, pr.split
    if ds is None or not isinstance(ds[1], Send) or ds[1].chan != chan:
        raise NotEnabled(f"H2: sender {snd} is not sending on {chan}")
    if dr is None or not isinstance(dr[1], Recv) or dr[1].chan != chan:
        raise NotEnabled(f"H2: receiver {rcv} is not receiving on {chan}")
    return ps, ds, pr, dr


def h2_sync_comm(C: ConfigHL, chan: str, t_new: int):
    ps, (cs, send), pr, (cr, recv) = _h2_parties(C, chan)
    if t_new <= max(ps.time, pr.time):
        raise BadTime(f"H2: {t_new} is not later than both process times ({ps.time}, {pr.time})")
    if t_new <= C.chan_time(chan):
        raise BadTime(f"H2: {t_new} is not later than channel time {C.chan_time(chan)}")
    v = send.arg
    C = C.with_proc(replace(ps, time=t_new, expr=plug(cs, UNIT)))
    C = C.with_proc(replace(pr, time=t_new, expr=plug(cr, subst(recv.body, v, recv.var))))
    C = C.with_chan(chan, replace(C.chan(chan), time=t_new))
    return C, Event("comm", chan, t_new, v)


def push_region(C: Config, p: Proc, t_new: int) -> Proc:
    """Shared body of H3 at both levels; ``C.chan_time`` supplies the snapshot."""
    ctx, r = _split(p)
    if not is_stable_entry(r):
        raise NotEnabled(f"H3: {p.name} is not entering a stable region")
    if t_new <= p.time:
        raise BadTime(f"H3: new time {t_new} must exceed {p.time}")
    lam, v = r.fn.arg, r.arg
    frame = Frame(ctx + (AppArg(r.fn),), v, p.time, C.snapshot_for(p.name))
    body = StableActive(subst(lam.body, v, lam.param))
    return replace(p, time=t_new, stack=p.stack + (frame,), expr=plug(ctx, body))


def h3_enter_stable(C: Config, n: str, t_new: int):
    return C.with_proc(push_region(C, C.proc(n), t_new)), None


def h4_exit_stable(C: Config, n: str):
    p = C.proc(n)
    ctx, r = _split(p)
    if not isinstance(r, StableActive):
        raise NotEnabled(f"H4: {n} is not leaving a stable region")
    if not p.stack:
        raise EmptyStack(f"H4: {n} leaves a region with an empty context stack")
    return C.with_proc(replace(p, stack=p.stack[:-1], expr=plug(ctx, r.body))), None


def h5_spontaneous_backtrack(C: Config, n: str):
    p = C.proc(n)
    if not p.stack:
        raise EmptyStack(f"H5: {n} has no region to return to")
    return C.with_proc(replace(p, expr=Backtrack(p.top.value))), None


def h6_channel_rewind(C: ConfigHL, chan: str, t_back: int):
    for n in C.endpoints(chan):
        if not C.proc(n).backtracking:
            raise NotEnabled(f"H6: {n} is not backtracking")
    tc = C.chan_time(chan)
    if not 0 <= t_back < tc:
        raise BadTime(f"H6: rewind target {t_back} not in [0, {tc})")
    return C.with_chan(chan, replace(C.chan(chan), time=t_back)), Event("rewind", chan, t_back)


def stale_channels(C: Config, p: Proc) -> list[str]:
    """Channels recorded in the top frame later than their current time."""
    top = p.top
    if top is None:
        return []
    return [c for c, t in top.saved if t > C.chan_time(c)]


def frame_consistent(C: Config, p: Proc) -> bool:
    top = p.top
    return top is not None and all(t == C.chan_time(c) for c, t in top.saved)


def h7_pop_frame(C: Config, n: str):
    p = C.proc(n)
    if not p.backtracking:
        raise NotEnabled(f"H7: {n} is not backtracking")
    if not stale_channels(C, p):
        raise NotEnabled(f"H7: top frame of {n} is not ahead of any channel")
    return C.with_proc(replace(p, stack=p.stack[:-1])), None


def resume_region(p: Proc) -> Proc:
    v = p.redex.arg
    top = p.top
    return replace(p, time=top.time, stack=p.stack[:-1], expr=plug(top.cont, v))


def h8_resume_forward(C: Config, n: str):
    p = C.proc(n)
    if not p.backtracking:
        raise NotEnabled(f"H8: {n} is not backtracking")
    if p.top is None:
        raise EmptyStack(f"H8: {n} has no region to resume")
    if not frame_consistent(C, p):
        raise NotEnabled(f"H8: top frame of {n} disagrees with the channel map")
    return C.with_proc(resume_region(p)), None


def apply_hl(C: ConfigHL, step: Step):
    r = step.rule
    if r == "H1":
        return h1_local(C, step.proc)
    if r == "H2":
        return h2_sync_comm(C, step.chan, step.arg)
    if r == "H3":
        return h3_enter_stable(C, step.proc, step.arg)
    if r == "H4":
        return h4_exit_stable(C, step.proc)
    if r == "H5":
        return h5_spontaneous_backtrack(C, step.proc)
    if r == "H6":
        return h6_channel_rewind(C, step.chan, step.arg)
    if r == "H7":
        return h7_pop_frame(C, step.proc)
    if r == "H8":
        return h8_resume_forward(C, step.proc)
    raise ValueError(f"unknown high-level rule {r}")


# ---------------------------------------------------------------------------
# enumeration


@dataclass(frozen=True)
class Instance:
    """An enabled rule with its timestamp parameter domain ``[lo, hi]``.

    ``hi`` is ``None`` for an unbounded domain; both are ``None`` for
    rules without a timestamp parameter.
    """

    rule: str
    proc: str | None = None
    chan: str | None = None
    lo: int | None = None
    hi: int | None = None

    def materialize(self, k: int = 1) -> Iterator[Step]:
        if self.lo is None:
            yield Step(self.rule, self.proc, self.chan)
            return
        hi = self.hi if self.hi is not None else self.lo + k - 1
        for t in range(self.lo, hi + 1):
            yield Step(self.rule, self.proc, self.chan, t)


def hl_enabled(C: ConfigHL) -> list[Instance]:
    out = []
    for p in C.procs:
        d = p.split
        if d is not None:
            r = d[1]
            if is_local_redex(r):
                out.append(Instance("H1", p.name))
            elif is_stable_entry(r):
                out.append(Instance("H3", p.name, lo=p.time + 1))
            elif isinstance(r, StableActive) and p.stack:
                out.append(Instance("H4", p.name))
        if p.stack:
            out.append(Instance("H5", p.name))
        if p.backtracking and stale_channels(C, p):
            out.append(Instance("H7", p.name))
        if p.backtracking and frame_consistent(C, p):
            out.append(Instance("H8", p.name))
    for c in C.channel_names():
        try:
            ps, _, pr, _ = _h2_parties(C, c)
        except NotEnabled:
            pass
        else:
            out.append(Instance("H2", chan=c, lo=max(ps.time, pr.time, C.chan_time(c)) + 1))
        if all(C.proc(n).backtracking for n in C.endpoints(c)) and C.chan_time(c) > 0:
            out.append(Instance("H6", chan=c, lo=0, hi=C.chan_time(c) - 1))
    return out


# ---------------------------------------------------------------------------
# deterministic policy


def rewind_target(C: Config, n: str, chan: str) -> int:
    """Channel time process ``n`` needs in order to resume its top frame."""
    top = C.proc(n).top
    t = top.saved_time(chan) if top is not None else None
    return C.chan_time(chan) if t is None else t


def needs_rewind(C: Config, n: str, chan: str) -> bool:
    p = C.proc(n)
    return p.backtracking and rewind_target(C, n, chan) < C.chan_time(chan)


def deterministic_step(C: ConfigHL, keep_outer: bool = True) -> Step | None:
    """First enabled step under the fixed priority order.

    Backtracking work first (pops, channel rewinds, forced backtracks,
    resumes), then local forward steps, then communication.  Fresh times
    are the smallest legal ones.  With ``keep_outer`` a finished process
    keeps its implicit outermost region so neighbours can still force it
    back.
    """
    for p in C.procs:
        if p.backtracking and stale_channels(C, p):
            return Step("H7", p.name)
    for c in C.channel_names():
        a, b = C.endpoints(c)
        if C.proc(a).backtracking and C.proc(b).backtracking:
            t = min(rewind_target(C, a, c), rewind_target(C, b, c))
            if t < C.chan_time(c):
                return Step("H6", chan=c, arg=t)
    for p in C.procs:
        if p.stack and not p.backtracking:
            if any(needs_rewind(C, C.partner(c, p.name), c) for c in C.channels_of(p.name)):
                return Step("H5", p.name)
    for p in C.procs:
        if p.backtracking and frame_consistent(C, p):
            return Step("H8", p.name)
    for p in C.procs:
        d = p.split
        if d is None:
            continue
        r = d[1]
        if is_local_redex(r):
            return Step("H1", p.name)
        if is_stable_entry(r):
            return Step("H3", p.name, arg=p.time + 1)
        if isinstance(r, StableActive) and p.stack and not (keep_outer and p.done):
            return Step("H4", p.name)
    for c in C.channel_names():
        try:
            ps, _, pr, _ = _h2_parties(C, c)
        except NotEnabled:
            continue
        return Step("H2", chan=c, arg=max(ps.time, pr.time, C.chan_time(c)) + 1)
    return None


@dataclass
class Run:
    configs: list  # configs[0] is the start; configs[i+1] follows steps[i]
    steps: list
    events: list  # Event | None per step

    @property
    def final(self):
        return self.configs[-1]

    def visible(self) -> list[Event]:
        return [e for e in self.events if e is not None]


def run_hl(C: ConfigHL, max_steps: int = 10_000, policy=deterministic_step) -> Run:
    run = Run([C], [], [])
    for _ in range(max_steps):
        step = policy(C)
        if step is None:
            break
        C, ev = apply_hl(C, step)
        run.configs.append(C)
        run.steps.append(step)
        run.events.append(ev)
    return run


# ---------------------------------------------------------------------------
# canonical text


def show_frame(f: Frame) -> str:
    saved = ", ".join(f"{c}:{t}" for c, t in f.saved)
    return f"({show_context(f.cont)}, {show(f.value)}, {f.time}, {{{saved}}})"


def show_proc(p: Proc) -> str:
    lines = [f"proc {p.name} @ {p.time}"]
    lines += [f"  frame {show_frame(f)}" for f in p.stack]
    lines.append(f"  expr {show(p.expr)}")
    if p.stuck:
        lines.append(f"  stuck: {p.stuck}")
    return "\n".join(lines)


def show_config(C: Config) -> str:
    lines = []
    for c, ch in C.channels:
        lines.append(f"chan {c} {show_channel(ch)}")
    lines += [show_proc(p) for p in C.procs]
    return "\n".join(lines)


def show_channel(ch) -> str:
    if isinstance(ch, ChannelHL):
        return f"{ch.sender} -> {ch.receiver} @ {ch.time}"
    return str(ch)
