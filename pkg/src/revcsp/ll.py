"""Low-level semantics: every step touches one process and its own channel halves.

Rules L1-L10 drive the channel protocol; H1, H3, H4 and H7 are reused
unchanged with the receiver's timestamp as the channel time, and H5/H8
carry the extra side conditions of the distributed setting.  ``L10R`` is
the sender's exit from ``send_`` after its request was refused (L4).  The
rule set has no such step, and without it a refused sender could
never leave ``send_``.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace

from .calculus import (
    UNIT, Backtrack, Program, Recv, Send, SendActive, StableActive, memo_hash, plug, subst,
)
from .errors import NotEnabled, ObligationViolation, WrongEndpoint
from .hl import (
    Config, Event, Proc, Run, Step, frame_consistent, h1_local, h3_enter_stable,
    h4_exit_stable, h7_pop_frame, outer_region, resume_region, rewind_target,
    stale_channels,
)
from .protocol import (
    B, F, I, ChannelLL, fault, new_channel, register_fault, t1_fwd_request,
    t2_fwd_ack, t3_fwd_refuse, t4_back_request, t5_back_ack, t6_retract_request,
    t7_retract_allow,
)

register_fault("l3_no_time_guard", "L3 completes a send without checking s.t <= r.t")
register_fault("l1_loose_guard", "L1 only requires the offered time to exceed r.t")


@memo_hash
@dataclass(frozen=True)
class ConfigLL(Config):
    def endpoints(self, chan):
        ch = self.chan(chan)
        return ch.s.n, ch.r.n

    def chan_time(self, chan):
        return self.chan(chan).r.t


def initial_ll(program: Program) -> ConfigLL:
    chans = tuple((c, new_channel(s, r)) for c, (s, r) in sorted(program.channels.items()))
    procs = tuple(Proc(n, 0, (), outer_region(b)) for n, b in sorted(program.processes.items()))
    return ConfigLL(chans, procs)


# ---------------------------------------------------------------------------
# helpers


def _at(C: ConfigLL, n: str, kind, chan: str | None = None):
    p = C.proc(n)
    d = p.split
    if d is None or not isinstance(d[1], kind):
        raise NotEnabled(f"{n} is not at a {kind.__name__} redex")
    if chan is not None and getattr(d[1], "chan", chan) != chan:
        raise NotEnabled(f"{n} is acting on {d[1].chan}, not {chan}")
    return p, d[0], d[1]


def _as_sender(C: ConfigLL, n: str, chan: str) -> ChannelLL:
    ch = C.chan(chan)
    if ch.s.n != n:
        raise WrongEndpoint(f"{n} is not the sender on {chan}")
    return ch


def _as_receiver(C: ConfigLL, n: str, chan: str) -> ChannelLL:
    ch = C.chan(chan)
    if ch.r.n != n:
        raise WrongEndpoint(f"{n} is not the receiver on {chan}")
    return ch


def _backtracking(C: ConfigLL, n: str) -> Proc:
    p = C.proc(n)
    if not p.backtracking:
        raise NotEnabled(f"{n} is not backtracking")
    return p


# ---------------------------------------------------------------------------
# forward communication


def l1_send_init(C: ConfigLL, n: str, chan: str, t_new: int):
    p, ctx, r = _at(C, n, Send, chan)
    ch = _as_sender(C, n, chan)
    # The offered time must also exceed the sender's own clock, otherwise the
    # matching atomic step would not move the sender's time forward.
    if not fault("l1_loose_guard") and t_new <= p.time:
        raise NotEnabled(f"L1: offered time {t_new} not later than {n}@{p.time}")
    ch = t1_fwd_request(ch, t_new, r.arg)
    C = C.with_chan(chan, ch).with_proc(replace(p, expr=plug(ctx, SendActive(chan, r.arg))))
    return C, None


def l2_recv_ack(C: ConfigLL, n: str, chan: str, t_new: int):
    p, ctx, r = _at(C, n, Recv, chan)
    ch = _as_receiver(C, n, chan)
    if t_new <= p.time:
        raise NotEnabled(f"L2: new time {t_new} not later than {n}@{p.time}")
    v = ch.s.v
    ch = t2_fwd_ack(ch, t_new)
    p = replace(p, time=t_new, expr=plug(ctx, subst(r.body, v, r.var)))
    return C.with_chan(chan, ch).with_proc(p), Event("comm", chan, t_new, v)


def l3_send_complete(C: ConfigLL, n: str, chan: str):
    p, ctx, _ = _at(C, n, SendActive, chan)
    ch = _as_sender(C, n, chan)
    if not ch.sender_has_token:
        raise NotEnabled("L3: sender lacks the token")
    if ch.s.d == B:
        raise NotEnabled("L3: channel is in backward mode")
    if not fault("l3_no_time_guard") and not ch.s.t <= ch.r.t:
        raise NotEnabled("L3: request was not acknowledged (s.t > r.t)")
    C = C.with_proc(replace(p, time=ch.r.t, expr=plug(ctx, UNIT)))
    return C.with_chan(chan, _settle(ch)), None


def _settle(ch: ChannelLL) -> ChannelLL:
    # The sender drops a stale retraction flag once it leaves send_.
    return replace(ch, s=replace(ch.s, d=F)) if ch.s.d == I else ch


# ---------------------------------------------------------------------------
# backward communication


def l4_fwd_refuse(C: ConfigLL, n: str, chan: str):
    _backtracking(C, n)
    ch = _as_receiver(C, n, chan)
    if ch.r.t <= 0:
        raise NotEnabled("L4: receiver time is 0")
    return C.with_chan(chan, t3_fwd_refuse(ch)), None


def l5_back_init(C: ConfigLL, n: str, chan: str, t_new: int):
    _backtracking(C, n)
    ch = _as_sender(C, n, chan)
    return C.with_chan(chan, t4_back_request(ch, t_new)), None


def l6_back_ack(C: ConfigLL, n: str, chan: str, resume_forward: bool):
    _backtracking(C, n)
    ch = _as_receiver(C, n, chan)
    before = ch.r.t
    ch = t5_back_ack(ch, resume_forward)
    if not ch.r.t < before:
        raise ObligationViolation(f"L6: rewind on {chan} to {ch.r.t} does not precede {before}")
    return C.with_chan(chan, ch), Event("rewind", chan, ch.r.t)


def l7_rcv_signal(C: ConfigLL, n: str, chan: str):
    _backtracking(C, n)
    ch = _as_receiver(C, n, chan)
    if not ch.sender_has_token:
        raise NotEnabled("L7: receiver holds the token")
    if ch.r.d != F:
        raise NotEnabled("L7: backward request already raised")
    if ch.r.t <= 0:
        raise NotEnabled("L7: receiver time is 0")
    return C.with_chan(chan, replace(ch, r=replace(ch.r, d=B))), None


def l8_retract_request(C: ConfigLL, n: str, chan: str):
    _at(C, n, SendActive, chan)
    ch = _as_sender(C, n, chan)
    return C.with_chan(chan, t6_retract_request(ch)), None


def l9_retract_allow(C: ConfigLL, n: str, chan: str, request_back: bool):
    ch = _as_receiver(C, n, chan)
    if request_back and ch.r.t <= 0:
        raise NotEnabled("L9: cannot ask for a rewind below time 0")
    new = t7_retract_allow(ch, request_back)
    if not ch.s.t > ch.r.t:
        raise ObligationViolation(f"L9: retraction on {chan} with s.t={ch.s.t} <= r.t={ch.r.t}")
    try:
        sender = C.proc(ch.s.n)
    except KeyError:  # partial view inside a runtime unit
        sender = None
    if sender is not None and not isinstance(sender.redex, SendActive):
        raise ObligationViolation(f"L9: {ch.s.n} asked to retract on {chan} but is not sending")
    return C.with_chan(chan, new), None


def l10_retract_complete(C: ConfigLL, n: str, chan: str):
    p, ctx, r = _at(C, n, SendActive, chan)
    ch = _as_sender(C, n, chan)
    if not ch.sender_has_token:
        raise NotEnabled("L10: sender lacks the token")
    if ch.s.d != I:
        raise NotEnabled("L10: no retraction was requested")
    if not ch.s.t > ch.r.t:
        raise NotEnabled("L10: receiver completed the request (s.t <= r.t)")
    C = C.with_proc(replace(p, expr=plug(ctx, Send(chan, r.value))))
    return C.with_chan(chan, _settle(ch)), None


def l10r_refused_reset(C: ConfigLL, n: str, chan: str):
    p, ctx, r = _at(C, n, SendActive, chan)
    ch = _as_sender(C, n, chan)
    if not ch.sender_has_token:
        raise NotEnabled("L10R: sender lacks the token")
    if ch.s.d != F:
        raise NotEnabled("L10R: request was not a plain forward one")
    if not ch.s.t > ch.r.t:
        raise NotEnabled("L10R: request was accepted (s.t <= r.t)")
    return C.with_proc(replace(p, expr=plug(ctx, Send(chan, r.value)))), None


# ---------------------------------------------------------------------------
# adopted high-level rules


def ll_spontaneous_backtrack(C: ConfigLL, n: str):
    p = C.proc(n)
    if not p.stack:
        raise NotEnabled(f"{n} has no region to return to")
    if isinstance(p.redex, SendActive):
        raise NotEnabled(f"{n} has an outstanding send request")
    return C.with_proc(replace(p, expr=Backtrack(p.top.value))), None


def quiescent_for_resume(C: ConfigLL, p: Proc) -> bool:
    if not frame_consistent(C, p):
        return False
    for c in C.channels_of(p.name):
        ch = C.chan(c)
        if ch.s.n == p.name and not ch.sender_has_token:
            return False
        if ch.r.n == p.name and ch.r.d != F:
            return False
    return True


def ll_resume_forward(C: ConfigLL, n: str):
    p = _backtracking(C, n)
    if p.top is None:
        raise NotEnabled(f"{n} has no region to resume")
    if not quiescent_for_resume(C, p):
        raise NotEnabled(f"{n}: channels not quiescent at the top frame's times")
    return C.with_proc(resume_region(p)), None


def ll_local_group(C: ConfigLL, n: str, t_new: int | None = None):
    """Whichever of H1, H3, H4, H7 applies to ``n``."""
    p = C.proc(n)
    d = p.split
    if d is None:
        raise NotEnabled(f"{n} has terminated")
    r = d[1]
    if isinstance(r, StableActive):
        return h4_exit_stable(C, n)
    if isinstance(r, Backtrack):
        return h7_pop_frame(C, n)
    try:
        return h1_local(C, n)
    except NotEnabled:
        return h3_enter_stable(C, n, p.time + 1 if t_new is None else t_new)


_RULES = {
    "L1": lambda C, s: l1_send_init(C, s.proc, s.chan, s.arg),
    "L2": lambda C, s: l2_recv_ack(C, s.proc, s.chan, s.arg),
    "L3": lambda C, s: l3_send_complete(C, s.proc, s.chan),
    "L4": lambda C, s: l4_fwd_refuse(C, s.proc, s.chan),
    "L5": lambda C, s: l5_back_init(C, s.proc, s.chan, s.arg),
    "L6": lambda C, s: l6_back_ack(C, s.proc, s.chan, s.arg),
    "L7": lambda C, s: l7_rcv_signal(C, s.proc, s.chan),
    "L8": lambda C, s: l8_retract_request(C, s.proc, s.chan),
    "L9": lambda C, s: l9_retract_allow(C, s.proc, s.chan, s.arg),
    "L10": lambda C, s: l10_retract_complete(C, s.proc, s.chan),
    "L10R": lambda C, s: l10r_refused_reset(C, s.proc, s.chan),
    "H1": lambda C, s: h1_local(C, s.proc),
    "H3": lambda C, s: h3_enter_stable(C, s.proc, s.arg),
    "H4": lambda C, s: h4_exit_stable(C, s.proc),
    "H5": lambda C, s: ll_spontaneous_backtrack(C, s.proc),
    "H7": lambda C, s: h7_pop_frame(C, s.proc),
    "H8": lambda C, s: ll_resume_forward(C, s.proc),
}
LL_RULES = tuple(_RULES)


def apply_ll(C: ConfigLL, step: Step):
    try:
        fn = _RULES[step.rule]
    except KeyError:
        raise ValueError(f"unknown low-level rule {step.rule}") from None
    return fn(C, step)


def try_apply(C: ConfigLL, step: Step):
    try:
        return apply_ll(C, step)
    except NotEnabled:
        return None


# ---------------------------------------------------------------------------
# enumeration (explorer mode: every rule instance, fresh times in +1..+k)


def ll_candidates(C: ConfigLL, k: int = 1, keep_outer: bool = True) -> list[Step]:
    """Every potentially enabled rule instance, in canonical order.

    Guards are checked by the caller through ``try_apply``.
    """
    out: list[Step] = []
    for p in C.procs:
        n = p.name
        d = p.split
        r = d[1] if d is not None else None
        chans = C.channels_of(n)
        if r is not None:
            if isinstance(r, StableActive):
                if p.stack and not (keep_outer and p.done):
                    out.append(Step("H4", n))
            elif isinstance(r, Send):
                ch = C.chan(r.chan)
                lo = max(ch.r.t, p.time) + 1
                out += [Step("L1", n, r.chan, t) for t in range(lo, lo + k)]
            elif isinstance(r, Recv):
                ch = C.chan(r.chan)
                lo = max(ch.s.t, p.time + 1)
                out += [Step("L2", n, r.chan, t) for t in range(lo, lo + k)]
            elif isinstance(r, SendActive):
                out += [Step(x, n, r.chan) for x in ("L3", "L10", "L10R", "L8")]
            elif isinstance(r, Backtrack):
                out += [Step("H7", n), Step("H8", n)]
                for c in chans:
                    ch = C.chan(c)
                    if ch.s.n == n:
                        out += [Step("L5", n, c, t) for t in range(ch.r.t)]
                    else:
                        out += [Step("L4", n, c), Step("L6", n, c, True),
                                Step("L6", n, c, False), Step("L7", n, c)]
            else:
                try:
                    h1_local(C, n)
                    out.append(Step("H1", n))
                except NotEnabled:
                    out += [Step("H3", n, arg=t) for t in range(p.time + 1, p.time + 1 + k)]
        if p.stack and not isinstance(r, SendActive) and p.expr != Backtrack(p.top.value):
            out.append(Step("H5", n))
        for c in chans:
            if C.chan(c).r.n == n:
                out += [Step("L9", n, c, False), Step("L9", n, c, True)]
    return out


def ll_successors(C: ConfigLL, k: int = 1, keep_outer: bool = True):
    """``[(step, config', event)]`` for every enabled instance."""
    out = []
    for s in ll_candidates(C, k, keep_outer):
        res = try_apply(C, s)
        if res is not None and res[0] != C:
            out.append((s, res[0], res[1]))
    return out


# ---------------------------------------------------------------------------
# policy (runtime and deterministic stepping)


def signaled(C: ConfigLL, n: str, chan: str) -> bool:
    """Does the partner on ``chan`` visibly want to backtrack?"""
    ch = C.chan(chan)
    if ch.s.n == n:
        return ch.sender_has_token and ch.r.d == B
    return not ch.sender_has_token and ch.s.d == B


def _retreat_time(p: Proc, chan: str, below: int) -> int:
    times = [t for f in p.stack for c, t in f.saved if c == chan and t < below]
    return max(times, default=0)


def policy_groups(C: ConfigLL, n: str) -> list[list[Step]]:
    """Candidate steps for ``n`` in priority groups (earlier groups win).

    Within a group the deterministic policy takes the first enabled step;
    a seeded runtime may pick any of them.
    """
    p = C.proc(n)
    chans = C.channels_of(n)
    sends = [c for c in chans if C.chan(c).s.n == n]
    recvs = [c for c in chans if C.chan(c).r.n == n]
    d = p.split
    r = d[1] if d is not None else None
    groups: list[list[Step]] = []

    retract = []
    for c in recvs:
        ch = C.chan(c)
        if not ch.sender_has_token and ch.s.d == I:
            back = p.backtracking and rewind_target(C, n, c) < ch.r.t
            retract.append(Step("L9", n, c, back))
            if isinstance(r, Recv) and r.chan == c:
                retract.append(Step("L2", n, c, max(ch.s.t, p.time + 1)))
    groups.append(retract)
    if r is None:
        return groups

    sig = [c for c in chans if signaled(C, n, c)]
    if isinstance(r, Backtrack):
        groups.append([Step("H7", n)] if stale_channels(C, p) else [])
        back = []
        for c in sends:
            ch = C.chan(c)
            if not ch.sender_has_token:
                continue
            tgt = rewind_target(C, n, c)
            if tgt < ch.r.t:
                back.append(Step("L5", n, c, tgt))
            elif ch.r.d == B and ch.r.t > 0:
                back.append(Step("L5", n, c, _retreat_time(p, c, ch.r.t)))
        for c in recvs:
            ch = C.chan(c)
            tgt = rewind_target(C, n, c)
            if not ch.sender_has_token and ch.s.d == B:
                back.append(Step("L6", n, c, ch.s.t <= tgt))
            elif tgt < ch.r.t:
                if not ch.sender_has_token and ch.s.d == F:
                    back.append(Step("L4", n, c))
                elif ch.sender_has_token and ch.r.d == F:
                    back.append(Step("L7", n, c))
        groups.append(back)
        groups.append([Step("H8", n)])
        return groups

    if isinstance(r, Send):
        if sig:
            groups.append([Step("H5", n)])
        ch = C.chan(r.chan)
        groups.append([Step("L1", n, r.chan, max(ch.r.t, p.time) + 1)])
    elif isinstance(r, SendActive):
        groups.append([Step(x, n, r.chan) for x in ("L3", "L10", "L10R")])
        if any(c != r.chan for c in sig):
            groups.append([Step("L8", n, r.chan)])
    elif isinstance(r, Recv):
        ch = C.chan(r.chan)
        groups.append([Step("L2", n, r.chan, max(ch.s.t, p.time + 1))])
        if sig:
            groups.append([Step("H5", n)])
    elif isinstance(r, StableActive):
        if p.done:
            if sig:
                groups.append([Step("H5", n)])
        else:
            groups.append([Step("H4", n)])
    else:
        groups.append([Step("H1", n), Step("H3", n, arg=p.time + 1)])
    return groups


def choose(C: ConfigLL, n: str, rng: random.Random | None = None):
    """Pick and fire the policy's step for ``n``: ``(step, config', event)`` or None."""
    for group in policy_groups(C, n):
        enabled = []
        for s in group:
            res = try_apply(C, s)
            if res is not None:
                enabled.append((s, *res))
                if rng is None:
                    return enabled[0]
        if enabled:
            return rng.choice(enabled)
    return None


def run_ll(C: ConfigLL, max_steps: int = 10_000, rng: random.Random | None = None) -> Run:
    """Round-robin deterministic (or seeded) scheduler over the policy."""
    run = Run([C], [], [])
    while len(run.steps) < max_steps:
        moved = False
        for name in [p.name for p in C.procs]:
            res = choose(C, name, rng)
            if res is None:
                continue
            step, C, ev = res
            run.configs.append(C)
            run.steps.append(step)
            run.events.append(ev)
            moved = True
            if len(run.steps) >= max_steps:
                break
        if not moved:
            break
    return run


def replay(C: ConfigLL, steps) -> Run:
    run = Run([C], [], [])
    for s in steps:
        C, ev = apply_ll(C, s)
        run.configs.append(C)
        run.steps.append(s)
        run.events.append(ev)
    return run


def terminated(C: ConfigLL) -> bool:
    return all(p.done for p in C.procs)
