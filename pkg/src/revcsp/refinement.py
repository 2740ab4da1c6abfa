"""Refinement mapping from low-level to high-level configurations.

``map_config`` drops the protocol fields (channel time = receiver time)
and resolves each in-progress ``send_`` to either the unstarted send or
its completion, depending on whether the sender can already see the
acknowledgement.  ``classify_step`` then checks that one low-level step is
either a stutter under the mapping or exactly one legal high-level step
with the same event label.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

from .calculus import UNIT, Program, Send, SendActive, plug
from .errors import NotEnabled, RefinementViolation, RevCSPError, UnmappableState
from .hl import ChannelHL, ConfigHL, Proc, Step, apply_hl, show_config
from .ll import ConfigLL, apply_ll, choose, initial_ll, terminated
from .protocol import B

# low-level rule -> high-level rule, or None for a stutter
RULE_MAP = {
    "L1": None, "L3": None, "L4": None, "L5": None, "L7": None,
    "L8": None, "L9": None, "L10": None, "L10R": None,
    "L2": "H2", "L6": "H6",
    "H1": "H1", "H3": "H3", "H4": "H4", "H5": "H5", "H7": "H7", "H8": "H8",
}


def _map_proc(C: ConfigLL, p: Proc) -> Proc:
    d = p.split
    if d is None or not isinstance(d[1], SendActive):
        return p
    ctx, r = d
    try:
        ch = C.chan(r.chan)
    except KeyError:
        raise UnmappableState(f"{p.name} sends on unknown channel {r.chan}") from None
    if ch.s.n != p.name:
        raise UnmappableState(f"{p.name} is in send_ on {r.chan} but is not its sender")
    if ch.s.d == B:
        raise UnmappableState(f"{p.name} is in send_ on {r.chan} while the channel is in backward mode")
    if ch.s.v != r.value:
        raise UnmappableState(f"{p.name} is in send_ on {r.chan} but the channel carries another value")
    if not ch.sender_has_token or ch.s.t > ch.r.t:
        return replace(p, expr=plug(ctx, Send(r.chan, r.value)))
    # the receiver completed the handshake: the sender is already past it
    return replace(p, time=ch.r.t, expr=plug(ctx, UNIT))


def map_config(C: ConfigLL) -> ConfigHL:
    chans = tuple((c, ChannelHL(ch.s.n, ch.r.t, ch.r.n)) for c, ch in C.channels)
    return ConfigHL(chans, tuple(_map_proc(C, p) for p in C.procs))


def hl_image_step(step: Step, after: ConfigLL) -> Step | None:
    """The high-level step a low-level step should map to (None = stutter)."""
    hl_rule = RULE_MAP[step.rule]
    if hl_rule is None:
        return None
    if hl_rule == "H2":
        return Step("H2", chan=step.chan, arg=after.chan(step.chan).r.t)
    if hl_rule == "H6":
        return Step("H6", chan=step.chan, arg=after.chan(step.chan).r.t)
    if hl_rule == "H3":
        return Step("H3", step.proc, arg=after.proc(step.proc).time)
    return Step(hl_rule, step.proc)


@dataclass(frozen=True)
class Classified:
    step: Step
    image: Step | None  # None: stutter

    def __str__(self) -> str:
        return f"{self.step.rule} => {self.image.rule if self.image else 'stutter'}"


def classify_step(before: ConfigLL, step: Step, after: ConfigLL, event=None) -> Classified:
    """Check one low-level edge against the high-level semantics."""
    if step.rule not in RULE_MAP:
        raise RefinementViolation(f"no mapping for rule {step.rule}", step, before, after)
    try:
        img, img2 = map_config(before), map_config(after)
    except UnmappableState as exc:
        raise RefinementViolation(f"{step}: {exc}", step, before, after) from None
    target = hl_image_step(step, after)
    if target is None:
        if img != img2:
            raise RefinementViolation(f"{step} should stutter but changes the image", step, before, after)
        if event is not None:
            raise RefinementViolation(f"{step} stutters but emits {event}", step, before, after)
        return Classified(step, None)
    try:
        expect, hl_event = apply_hl(img, target)
    except NotEnabled as exc:
        raise RefinementViolation(f"{step} maps to {target}, which is not enabled: {exc}",
                                  step, before, after) from None
    if expect != img2:
        raise RefinementViolation(f"{step} maps to {target} but the images disagree", step, before, after)
    if hl_event != event:
        raise RefinementViolation(f"{step}: event {event} differs from {hl_event}", step, before, after)
    return Classified(step, target)


@dataclass
class TraceVerdict:
    classified: list = field(default_factory=list)
    events: list = field(default_factory=list)
    configs: list = field(default_factory=list)
    violation: RefinementViolation | None = None
    terminated: bool = False

    @property
    def ok(self) -> bool:
        return self.violation is None

    @property
    def stutters(self) -> int:
        return sum(1 for c in self.classified if c.image is None)

    @property
    def real_steps(self) -> int:
        return sum(1 for c in self.classified if c.image is not None)

    def report(self) -> str:
        lines = [str(c) for c in self.classified]
        if self.violation is not None:
            lines.append(f"VIOLATION: {self.violation}")
            if self.violation.before is not None:
                lines.append(show_config(self.violation.before))
        else:
            lines.append(f"ok: {self.real_steps} mapped steps, {self.stutters} stutters")
        return "\n".join(lines)


def check_run(C: ConfigLL, steps, max_steps: int = 10_000, rng: random.Random | None = None) -> TraceVerdict:
    """Run ``steps`` (or the policy when ``steps`` is None) and classify every edge."""
    v = TraceVerdict(configs=[C])
    it = iter(steps) if steps is not None else None
    names = [p.name for p in C.procs]
    idle_rounds, turn = 0, 0
    while len(v.classified) < max_steps:
        if it is not None:
            step = next(it, None)
            if step is None:
                break
            try:
                after, ev = apply_ll(C, step)
            except RevCSPError as exc:
                v.violation = RefinementViolation(f"{step} cannot fire: {exc}", step, C, None)
                break
        else:
            res = choose(C, names[turn % len(names)], rng) if names else None
            turn += 1
            if res is None:
                idle_rounds += 1
                if idle_rounds >= len(names):
                    break
                continue
            idle_rounds = 0
            step, after, ev = res
        try:
            v.classified.append(classify_step(C, step, after, ev))
        except RefinementViolation as exc:
            exc.path = [c.step for c in v.classified] + [step]
            v.violation = exc
            break
        if ev is not None:
            v.events.append(ev)
        C = after
        v.configs.append(C)
    v.terminated = terminated(C)
    return v


def check_trace(program: Program, schedule=None, max_steps: int = 10_000) -> TraceVerdict:
    """Run ``program`` at the low level and check refinement along the way.

    ``schedule`` is a list of ``Step``; ``None`` runs the deterministic policy.
    """
    return check_run(initial_ll(program), schedule, max_steps)


def minimize(C: ConfigLL, path: list) -> list:
    """Greedily drop stutter steps from a violating path while it still violates."""
    def violates(steps):
        v = check_run(C, steps)
        # the last step must fire and then fail the check; a step that
        # cannot fire at all is not the same counterexample
        return (v.violation is not None and v.violation.after is not None
                and len(v.classified) == len(steps) - 1)

    path = list(path)
    i = 0
    while i < len(path) - 1:
        if RULE_MAP.get(path[i].rule, "x") is None:
            cand = path[:i] + path[i + 1:]
            if violates(cand):
                path = cand
                continue
        i += 1
    return path
