import pytest

from revcsp.calculus import UNIT, Backtrack
from revcsp.errors import RefinementViolation, UnmappableState
from revcsp.hl import Proc, Step
from revcsp.ll import apply_ll
from revcsp.protocol import B, ChannelLL, SenderHalf, injected
from revcsp.refinement import (
    RULE_MAP, check_run, check_trace, classify_step, hl_image_step, map_config, minimize,
)

import scenarios as sc


def test_rule_map_is_total_over_low_level_rules():
    from revcsp.ll import LL_RULES
    assert set(LL_RULES) == set(RULE_MAP)
    assert RULE_MAP["L2"] == "H2" and RULE_MAP["L6"] == "H6"
    assert {r for r, h in RULE_MAP.items() if h is None} == {
        "L1", "L3", "L4", "L5", "L7", "L8", "L9", "L10", "L10R"}


def test_image_of_idle_channel_is_receiver_time():
    H = map_config(sc.handshake_ll())
    assert H == sc.handshake_hl()


def test_pending_send_maps_to_unstarted_send():
    C, _ = apply_ll(sc.handshake_ll(), Step("L1", "n1", "l", 6))
    assert map_config(C) == sc.handshake_hl()


def test_acknowledged_send_maps_to_completion():
    C, _ = apply_ll(sc.handshake_ll(), Step("L1", "n1", "l", 6))
    C, _ = apply_ll(C, Step("L2", "n2", "l", 6))
    n1 = map_config(C).proc("n1")
    assert n1.time == 6 and n1.expr == UNIT


def test_send_in_backward_mode_is_unmappable():
    C, _ = apply_ll(sc.handshake_ll(), Step("L1", "n1", "l", 6))
    ch = C.chan("l")
    C = C.with_chan("l", ChannelLL(SenderHalf("n1", 1, ch.s.b, B, ch.s.v), ch.r, ch.sync))
    with pytest.raises(UnmappableState):
        map_config(C)


def test_handshake_classification():
    C0 = sc.handshake_ll()
    C1, e1 = apply_ll(C0, Step("L1", "n1", "l", 6))
    C2, e2 = apply_ll(C1, Step("L2", "n2", "l", 6))
    C3, e3 = apply_ll(C2, Step("L3", "n1", "l"))
    got = [str(classify_step(a, s, b, e)) for a, s, b, e in [
        (C0, Step("L1", "n1", "l", 6), C1, e1),
        (C1, Step("L2", "n2", "l", 6), C2, e2),
        (C2, Step("L3", "n1", "l"), C3, e3),
    ]]
    assert got == ["L1 => stutter", "L2 => H2", "L3 => stutter"]


def test_image_step_parameters():
    C, _ = apply_ll(sc.handshake_ll(), Step("L1", "n1", "l", 6))
    C, _ = apply_ll(C, Step("L2", "n2", "l", 6))
    assert hl_image_step(Step("L2", "n2", "l", 6), C) == Step("H2", chan="l", arg=6)
    assert hl_image_step(Step("L9", "n2", "l", False), C) is None


def test_skipped_acknowledgement_is_caught():
    # with the time guard removed, the sender completes a refused request
    C = sc.handshake_ll()
    C = C.with_proc(Proc("n2", 4, (), Backtrack(UNIT)))
    steps = [Step("L1", "n1", "l", 6), Step("L4", "n2", "l"), Step("L3", "n1", "l")]
    assert check_run(C, steps).violation is not None  # L3 is simply not enabled
    with injected("l3_no_time_guard"):
        v = check_run(C, steps)
    assert not v.ok
    assert isinstance(v.violation, RefinementViolation)
    assert v.violation.step == Step("L3", "n1", "l")
    assert v.violation.path == steps
    assert "VIOLATION" in v.report()


def test_minimize_keeps_needed_steps():
    C = sc.handshake_ll().with_proc(Proc("n2", 4, (), Backtrack(UNIT)))
    steps = [Step("L1", "n1", "l", 6), Step("L4", "n2", "l"), Step("L3", "n1", "l")]
    with injected("l3_no_time_guard"):
        short = minimize(C, steps)
    assert short == steps  # every step is needed to reach the bad L3


def test_walkthrough_refines():
    v = check_run(sc.walkthrough_ll(), None)
    assert v.ok, v.report()
    assert [str(e) for e in v.events] == ["rewind l@5", "rewind l@2"]


def test_retry_policy_trace_refines(retry):
    v = check_trace(retry)
    assert v.ok, v.report()
    assert v.terminated
    assert [str(e) for e in v.events] == [
        "comm c@4 2", "comm c@6 2", "rewind c@4", "rewind c@0", "comm c@4 2", "comm c@6 2"]
    assert v.real_steps > 0 and v.stutters > 0


def test_chain3_policy_trace_refines(chain3):
    v = check_trace(chain3)
    assert v.ok, v.report()
    assert v.terminated


def test_schedule_with_disabled_step_is_reported(retry):
    v = check_trace(retry, [Step("L2", "p2", "c", 1)])
    assert not v.ok and "cannot fire" in str(v.violation)


def test_unmapped_rule_is_a_violation():
    C = sc.handshake_ll()
    with pytest.raises(RefinementViolation):
        classify_step(C, Step("L99", "n1"), C)
