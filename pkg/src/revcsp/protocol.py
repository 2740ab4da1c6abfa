"""Two-phase reversible channel cell and its guarded transitions.

A cell is two single-writer halves.  The sender owns ``s`` (time, token
bit, direction F/B/I, pending value); the receiver owns ``r`` (time, token
bit, direction F/B).  The sender holds the token when the bits agree.
``sync`` is a verification-only shadow bit kept by the receiver: true
after it acknowledges a forward or backward request, false after it
refuses one or lets a request be retracted.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, replace

from .calculus import memo_hash
from .errors import NotEnabled

F, B, I = "F", "B", "I"

# Names of deliberately broken transitions, toggled by tests and the CLI.
FAULTS = {
    "t2_no_sync": "t2 forgets to set sync",
    "t5_clear_sync": "t5 clears sync instead of setting it",
    "t7_keep_sync": "t7 leaves sync untouched",
}
_active_faults: set[str] = set()


@contextlib.contextmanager
def injected(*names: str):
    unknown = set(names) - set(FAULTS) - set(_EXTRA_FAULTS)
    if unknown:
        raise ValueError(f"unknown fault(s): {', '.join(sorted(unknown))}")
    added = set(names) - _active_faults
    _active_faults.update(added)
    try:
        yield
    finally:
        _active_faults.difference_update(added)


def fault(name: str) -> bool:
    return name in _active_faults


# other modules register their own fault names here
_EXTRA_FAULTS: dict[str, str] = {}


def register_fault(name: str, doc: str) -> None:
    _EXTRA_FAULTS[name] = doc


def all_faults() -> dict[str, str]:
    return {**FAULTS, **_EXTRA_FAULTS}


@dataclass(frozen=True)
class SenderHalf:
    n: str
    t: int
    b: bool
    d: str
    v: object = None


@dataclass(frozen=True)
class ReceiverHalf:
    n: str
    t: int
    b: bool
    d: str


@memo_hash
@dataclass(frozen=True)
class ChannelLL:
    s: SenderHalf
    r: ReceiverHalf
    sync: bool = True

    @property
    def sender_has_token(self) -> bool:
        return self.s.b == self.r.b

    def __str__(self) -> str:
        s, r = self.s, self.r
        return (f"s=({s.n},{s.t},{int(s.b)},{s.d},{_show_value(s.v)}) "
                f"r=({r.n},{r.t},{int(r.b)},{r.d}) sync={int(self.sync)}")


def _show_value(v) -> str:
    if v is None:
        return "-"
    from .calculus import Expr, show
    return show(v) if isinstance(v, Expr) else str(v)


def new_channel(sender: str, receiver: str) -> ChannelLL:
    # s.t = r.t with the sender holding the token, so the key invariant
    # forces sync to start true.
    return ChannelLL(SenderHalf(sender, 0, False, F, None), ReceiverHalf(receiver, 0, False, F), True)


def _need(cond: bool, what: str) -> None:
    if not cond:
        raise NotEnabled(what)


# sender side ---------------------------------------------------------------


def t1_fwd_request(ch: ChannelLL, t_new: int, v) -> ChannelLL:
    _need(ch.sender_has_token, "t1: sender lacks the token")
    _need(ch.r.d == F, "t1: receiver is not accepting forward requests")
    _need(t_new > ch.r.t, "t1: offered time must exceed the receiver's time")
    return replace(ch, s=replace(ch.s, t=t_new, b=not ch.s.b, d=F, v=v))


def t4_back_request(ch: ChannelLL, t_new: int) -> ChannelLL:
    _need(ch.sender_has_token, "t4: sender lacks the token")
    _need(0 <= t_new < ch.r.t, "t4: rewind target must precede the receiver's time")
    return replace(ch, s=replace(ch.s, t=t_new, b=not ch.s.b, d=B))


def t6_retract_request(ch: ChannelLL) -> ChannelLL:
    _need(not ch.sender_has_token, "t6: no outstanding request")
    _need(ch.s.d == F, "t6: outstanding request is not a forward one")
    return replace(ch, s=replace(ch.s, d=I))


# receiver side -------------------------------------------------------------


def t2_fwd_ack(ch: ChannelLL, t_new: int) -> ChannelLL:
    _need(not ch.sender_has_token, "t2: no outstanding request")
    _need(ch.s.d in (F, I), "t2: outstanding request is not a forward one")
    _need(ch.r.d == F, "t2: receiver is not accepting forward requests")
    _need(t_new >= ch.s.t, "t2: acknowledged time below the offered time")
    sync = ch.sync if fault("t2_no_sync") else True
    return replace(ch, r=replace(ch.r, t=t_new, b=not ch.r.b), sync=sync)


def t3_fwd_refuse(ch: ChannelLL) -> ChannelLL:
    _need(not ch.sender_has_token, "t3: no outstanding request")
    _need(ch.s.d == F, "t3: outstanding request is not a forward one")
    return replace(ch, r=replace(ch.r, b=not ch.r.b, d=B), sync=False)


def t5_back_ack(ch: ChannelLL, resume_forward: bool) -> ChannelLL:
    _need(not ch.sender_has_token, "t5: no outstanding request")
    _need(ch.s.d == B, "t5: outstanding request is not a backward one")
    _need(resume_forward or ch.s.t > 0, "t5: cannot ask for a rewind below time 0")
    sync = not fault("t5_clear_sync")
    return replace(ch, r=replace(ch.r, t=ch.s.t, b=not ch.r.b, d=F if resume_forward else B), sync=sync)


def t7_retract_allow(ch: ChannelLL, also_request_back: bool) -> ChannelLL:
    _need(not ch.sender_has_token, "t7: no outstanding request")
    _need(ch.s.d == I, "t7: no retraction was requested")
    d = B if also_request_back else ch.r.d
    sync = ch.sync if fault("t7_keep_sync") else False
    return replace(ch, r=replace(ch.r, b=not ch.r.b, d=d), sync=sync)


def t8_rcv_signal_back(ch: ChannelLL) -> ChannelLL:
    _need(ch.sender_has_token, "t8: receiver holds the token")
    _need(ch.r.t > 0, "t8: nothing to unwind at time 0")
    return replace(ch, r=replace(ch.r, d=B))


def sender_infers_sync(ch: ChannelLL) -> bool:
    """What the sender concludes, from visible state alone, about its last request."""
    _need(ch.sender_has_token, "sender lacks the token")
    return ch.s.t <= ch.r.t


def key_invariant(ch: ChannelLL) -> bool:
    return not ch.sender_has_token or ((ch.s.t <= ch.r.t) == ch.sync)


# metadata used by the explorer
SENDER_SIDE = {"t1", "t4", "t6"}
RECEIVER_SIDE = {"t2", "t3", "t5", "t7", "t8"}
TOKEN_MOVES = {"t1", "t2", "t3", "t4", "t5", "t7"}
