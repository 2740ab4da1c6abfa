"""Bounded breadth-first exploration of channel and whole-system state spaces.

``explore_protocol`` fires the channel transitions from both ends of a
single cell with every parameter inside the bounds.  ``explore_system``
enumerates low-level interleavings of a program, checks the semantic
invariants on every state and refinement on every edge, and looks for
deadlocks and livelocks.  Both are deterministic: successors are produced
in a fixed order and states are numbered in discovery order.
"""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, field

import networkx as nx

from .calculus import Program, SendActive
from .errors import (
    BoundsTooLarge, NotEnabled, ObligationViolation, RefinementViolation, UnmappableState,
)
from .hl import Config, Step, show_config
from .ll import ConfigLL, apply_ll, initial_ll, ll_candidates, terminated
from .protocol import (
    I, ChannelLL, SENDER_SIDE, TOKEN_MOVES, key_invariant, new_channel,
    sender_infers_sync, t1_fwd_request, t2_fwd_ack, t3_fwd_refuse, t4_back_request,
    t5_back_ack, t6_retract_request, t7_retract_allow, t8_rcv_signal_back,
)
from .refinement import classify_step, map_config

DEFAULT_CAP = 2_000_000


# ---------------------------------------------------------------------------
# semantic invariants


def check_invariants(C: Config) -> list[str]:
    """Violated invariants of ``C`` as human-readable strings (empty = all hold).

    Low-level configurations are checked through their high-level image,
    plus the obligation that a retraction flag implies a pending send.
    """
    out: list[str] = []
    if isinstance(C, ConfigLL):
        for c, ch in C.channels:
            if ch.s.d == I:
                try:
                    r = C.proc(ch.s.n).redex
                except KeyError:
                    r = None
                if not (isinstance(r, SendActive) and r.chan == c):
                    out.append(f"retract flag on {c} but {ch.s.n} is not sending on it")
        try:
            H = map_config(C)
        except UnmappableState as exc:
            return out + [f"unmappable: {exc}"]
    else:
        H = C
    for p in H.procs:
        times = [f.time for f in p.stack]
        if any(a >= b for a, b in zip(times, times[1:])):
            out.append(f"{p.name}: frame times not increasing {times}")
        if times and times[-1] >= p.time:
            out.append(f"{p.name}: top frame time {times[-1]} not below process time {p.time}")
        if p.backtracking:
            continue  # backtracking processes may lag their channels
        for c in H.channels_of(p.name):
            tc = H.chan_time(c)
            if p.time < tc:
                out.append(f"invariant B: {p.name}@{p.time} behind {c}@{tc}")
            if p.top is not None:
                saved = p.top.saved_time(c)
                if saved is not None and tc < saved:
                    out.append(f"invariant A: {c}@{tc} behind {p.name}'s frame time {saved}")
    return out


# ---------------------------------------------------------------------------
# one channel


@dataclass
class Check:
    name: str
    checked: int = 0
    failure: str | None = None
    path: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.failure is None


@dataclass
class ProtocolReport:
    time_bound: int
    values: int
    states: int
    edges: int
    classes: int
    checks: list

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def text(self) -> str:
        lines = [
            f"protocol exploration: time bound {self.time_bound}, values {self.values}",
            f"states: {self.states}",
            f"edges: {self.edges}",
            f"order classes: {self.classes}",
        ]
        for c in self.checks:
            lines.append(f"{c.name}: {'PASS' if c.ok else 'FAIL'} ({c.checked} checked)")
            if not c.ok:
                lines.append(f"  {c.failure}")
                for label, st in c.path:
                    lines.append(f"    {label:12} {st}")
        lines.append(f"result: {'PASS' if self.ok else 'FAIL'}")
        return "\n".join(lines)


def protocol_moves(ch: ChannelLL, time_bound: int, values: int):
    """Every enabled transition of one cell as ``(label, name, successor)``."""
    cands = []
    for t in range(ch.r.t + 1, time_bound + 1):
        for v in range(values):
            cands.append((f"t1 {t} {v}", "t1", lambda t=t, v=v: t1_fwd_request(ch, t, v)))
    for t in range(ch.s.t, time_bound + 1):
        cands.append((f"t2 {t}", "t2", lambda t=t: t2_fwd_ack(ch, t)))
    cands.append(("t3", "t3", lambda: t3_fwd_refuse(ch)))
    for t in range(0, ch.r.t):
        cands.append((f"t4 {t}", "t4", lambda t=t: t4_back_request(ch, t)))
    for fwd in (True, False):
        cands.append((f"t5 {'F' if fwd else 'B'}", "t5", lambda fwd=fwd: t5_back_ack(ch, fwd)))
    cands.append(("t6", "t6", lambda: t6_retract_request(ch)))
    for back in (False, True):
        cands.append((f"t7 {'B' if back else '-'}", "t7", lambda back=back: t7_retract_allow(ch, back)))
    cands.append(("t8", "t8", lambda: t8_rcv_signal_back(ch)))
    out = []
    for label, name, fire in cands:
        try:
            out.append((label, name, fire()))
        except NotEnabled:
            pass
    return out


def order_class(ch: ChannelLL) -> tuple:
    """Channel state with its times replaced by their rank among {0, s.t, r.t}."""
    ranks = {t: i for i, t in enumerate(sorted({0, ch.s.t, ch.r.t}))}
    s, r = ch.s, ch.r
    return (ranks[s.t], s.b, s.d, s.v, ranks[r.t], r.b, r.d, ch.sync)


def _path(parent: dict, key) -> list:
    out = []
    while key is not None:
        prev, label = parent[key]
        out.append((label, key))
        key = prev
    return out[::-1]


def explore_protocol(time_bound: int = 4, values: int = 2, cap: int = DEFAULT_CAP) -> ProtocolReport:
    if time_bound < 1 or values < 1:
        raise ValueError("bounds must be at least 1")
    start = new_channel("snd", "rcv")
    parent = {start: (None, "init")}
    queue = deque([start])
    key = Check("key invariant")
    token = Check("token alternation")
    mono = Check("receiver time monotone except t5")
    infer = Check("sender inference stable while it holds the token")
    edges = 0

    def fail(check: Check, msg: str, st: ChannelLL, label: str | None = None, nxt=None):
        if check.failure is None:
            check.failure = msg
            check.path = _path(parent, st)
            if nxt is not None:
                check.path.append((label, nxt))

    while queue:
        ch = queue.popleft()
        key.checked += 1
        if not key_invariant(ch):
            fail(key, f"key invariant broken at {ch}", ch)
        for label, name, nxt in protocol_moves(ch, time_bound, values):
            edges += 1
            token.checked += 1
            mover_had = ch.sender_has_token if name in SENDER_SIDE else not ch.sender_has_token
            if name in TOKEN_MOVES:
                passed = nxt.sender_has_token != ch.sender_has_token
                if not (mover_had and passed):
                    fail(token, f"{name} does not pass the token from its owner", ch, label, nxt)
            elif nxt.sender_has_token != ch.sender_has_token:
                fail(token, f"{name} moved the token", ch, label, nxt)
            mono.checked += 1
            if name != "t5" and nxt.r.t < ch.r.t:
                fail(mono, f"{name} lowered the receiver time", ch, label, nxt)
            if ch.sender_has_token and nxt.sender_has_token:
                infer.checked += 1
                if sender_infers_sync(ch) != sender_infers_sync(nxt):
                    fail(infer, f"{name} changed what the sender infers", ch, label, nxt)
            if nxt not in parent:
                parent[nxt] = (ch, label)
                if len(parent) > cap:
                    raise BoundsTooLarge(f"more than {cap} protocol states")
                queue.append(nxt)
    classes = len({order_class(c) for c in parent})
    return ProtocolReport(time_bound, values, len(parent), edges, classes, [key, token, mono, infer])


# ---------------------------------------------------------------------------
# whole system


@dataclass
class Finding:
    kind: str
    message: str
    path: list  # steps from the initial configuration
    config: Config | None = None

    def text(self) -> str:
        lines = [f"{self.kind}: {self.message}"]
        if self.path:
            lines.append("  path: " + "; ".join(str(s) for s in self.path))
        if self.config is not None:
            lines += ["  " + l for l in show_config(self.config).splitlines()]
        return "\n".join(lines)


@dataclass
class SystemReport:
    depth: int
    k: int
    states: int = 0
    edges: int = 0
    max_depth: int = 0
    terminated: int = 0
    frontier: int = 0
    sync_states: int = 0
    classification: Counter = field(default_factory=Counter)
    findings: list = field(default_factory=list)
    deadlocks: list = field(default_factory=list)
    livelocks: list = field(default_factory=list)

    def count(self, kind: str) -> int:
        return sum(1 for f in self.findings if f.kind == kind)

    @property
    def ok(self) -> bool:
        return not self.findings and not self.deadlocks and not self.livelocks

    def text(self, limit: int = 5) -> str:
        lines = [
            f"system exploration: depth {self.depth}, k {self.k}",
            f"states: {self.states}",
            f"edges: {self.edges}",
            f"deepest level: {self.max_depth}",
            f"terminated states: {self.terminated}",
            f"frontier states: {self.frontier}",
        ]
        for kind in ("invariant", "refinement", "obligation", "sync-inference"):
            lines.append(f"{kind} violations: {self.count(kind)}")
        lines.append(f"sync-inference states checked: {self.sync_states}")
        lines.append(f"deadlocks: {len(self.deadlocks)}")
        lines.append(f"livelocks: {len(self.livelocks)}")
        lines.append("classification:")
        for k in sorted(self.classification):
            lines.append(f"  {k}: {self.classification[k]}")
        for f in (self.findings + self.deadlocks + self.livelocks)[:limit]:
            lines.append(f.text())
        if self.depth == 0:
            lines.append("warning: depth 0 explores only the initial state")
        lines.append(f"result: {'PASS' if self.ok else 'FAIL'}")
        return "\n".join(lines)


def sync_inference(C: ConfigLL) -> list[tuple[str, str | None]]:
    """For senders holding the token after a retraction request, check L3/L10.

    Returns ``(channel, problem-or-None)`` per qualifying channel.
    """
    out = []
    for c, ch in C.channels:
        if ch.s.d != I or not ch.sender_has_token:
            continue
        try:
            r = C.proc(ch.s.n).redex
        except KeyError:
            continue
        if not (isinstance(r, SendActive) and r.chan == c):
            continue
        l3 = _enabled(C, Step("L3", ch.s.n, c))
        l10 = _enabled(C, Step("L10", ch.s.n, c))
        guess = sender_infers_sync(ch)
        problem = None
        if l3 == l10:
            problem = f"on {c}: L3 {'and' if l3 else 'nor'} L10 enabled"
        elif guess != l3:
            problem = f"on {c}: sender infers sync={guess} but L3 enabled={l3}"
        elif guess != ch.sync:
            problem = f"on {c}: sender infers sync={guess} but sync={ch.sync}"
        out.append((c, problem))
    return out


def _enabled(C: ConfigLL, step: Step) -> bool:
    try:
        apply_ll(C, step)
        return True
    except NotEnabled:
        return False


def _steps_to(parent: list, i: int) -> list:
    out = []
    while parent[i] is not None:
        i, step = parent[i]
        out.append(step)
    return out[::-1]


def explore_system(program: Program, depth: int = 40, k: int = 1, cap: int = 500_000,
                   keep_outer: bool = True, refinement: bool = True) -> SystemReport:
    """BFS over low-level configurations of ``program`` up to ``depth`` steps."""
    if depth < 0 or k < 1:
        raise ValueError("depth must be >= 0 and k >= 1")
    rep = SystemReport(depth, k)
    # states are numbered in discovery order; the graph works on the numbers
    states = [initial_ll(program)]
    ids = {states[0]: 0}
    parent: list = [None]
    level = [0]
    graph = nx.DiGraph()
    graph.add_node(0)
    frontier, done = set(), set()

    def note(kind, msg, i, step=None):
        path = _steps_to(parent, i) + ([step] if step is not None else [])
        rep.findings.append(Finding(kind, msg, path, states[i]))

    i = 0
    while i < len(states):
        C, d = states[i], level[i]
        rep.max_depth = max(rep.max_depth, d)
        for msg in check_invariants(C):
            note("invariant", msg, i)
        for _, problem in sync_inference(C):
            rep.sync_states += 1
            if problem is not None:
                note("sync-inference", problem, i)
        if terminated(C):
            done.add(i)
        if d >= depth:
            frontier.add(i)
            i += 1
            continue
        succs = 0
        for step in ll_candidates(C, k, keep_outer):
            try:
                nxt, ev = apply_ll(C, step)
            except NotEnabled:
                continue
            except ObligationViolation as exc:
                note("obligation", str(exc), i, step)
                continue
            if nxt == C:
                continue
            succs += 1
            rep.edges += 1
            if refinement:
                try:
                    rep.classification[str(classify_step(C, step, nxt, ev))] += 1
                except RefinementViolation as exc:
                    note("refinement", str(exc), i, step)
            j = ids.get(nxt)
            if j is None:
                j = ids[nxt] = len(states)
                if j >= cap:
                    raise BoundsTooLarge(f"more than {cap} system states; lower --depth or --k")
                states.append(nxt)
                parent.append((i, step))
                level.append(d + 1)
            graph.add_edge(i, j)
        if succs == 0 and i not in done:
            rep.deadlocks.append(Finding("deadlock", "no step enabled before termination",
                                         _steps_to(parent, i), C))
        i += 1
    rep.states = len(states)
    rep.terminated = len(done)
    rep.frontier = len(frontier)
    rep.livelocks = _livelocks(graph, states, parent, frontier, done)
    return rep


def _livelocks(graph: nx.DiGraph, states: list, parent: list, frontier: set, done: set) -> list:
    """Closed cycles: strongly connected components nothing leaves and that never finish."""
    cond = nx.condensation(graph)
    out = []
    for comp in cond.nodes:
        if cond.out_degree(comp):
            continue
        members = cond.nodes[comp]["members"]
        if len(members) == 1:
            (only,) = members
            if not graph.has_edge(only, only):
                continue
        if members & frontier or members & done:
            continue
        first = min(members)
        out.append(Finding("livelock", f"{len(members)} states cycle without terminating",
                           _steps_to(parent, first), states[first]))
    out.sort(key=lambda f: len(f.path))
    return out
