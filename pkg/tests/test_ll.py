import random

import pytest

from revcsp.calculus import UNIT, Backtrack, Int, Send, SendActive, show
from revcsp.errors import NotEnabled, ObligationViolation
from revcsp.hl import Proc, Step
from revcsp.ll import (
    LL_RULES, ConfigLL, apply_ll, choose, initial_ll, ll_candidates, policy_groups, replay,
    run_ll, terminated, try_apply,
)
from revcsp.protocol import B, F, I, ChannelLL, ReceiverHalf, SenderHalf, injected
from revcsp.runtime import final_value

import scenarios as sc


def _fire(C, *steps):
    evs = []
    for s in steps:
        C, ev = apply_ll(C, s)
        evs.append(ev)
    return C, evs


# -- forward handshake --------------------------------------------------------


def test_handshake_in_three_steps():
    C, evs = _fire(sc.handshake_ll(),
                   Step("L1", "n1", "l", 6), Step("L2", "n2", "l", 6), Step("L3", "n1", "l"))
    assert [str(e) for e in evs if e] == ["comm l@6 10"]
    assert C.proc("n1").time == 6 and C.proc("n1").expr == UNIT
    assert C.proc("n2").time == 6 and C.proc("n2").expr == sc.plus(Int(10), Int(1))


def test_send_init_marks_process_as_sending():
    C, _ = apply_ll(sc.handshake_ll(), Step("L1", "n1", "l", 6))
    assert C.proc("n1").expr == SendActive("l", Int(10))
    with pytest.raises(NotEnabled):
        apply_ll(C, Step("L3", "n1", "l"))  # no answer yet


def test_send_init_needs_a_time_past_the_sender():
    # 4 is past the channel (3) but not past n1@5
    assert try_apply(sc.handshake_ll(), Step("L1", "n1", "l", 4)) is None
    with injected("l1_loose_guard"):
        assert try_apply(sc.handshake_ll(), Step("L1", "n1", "l", 4)) is not None


def test_receiver_time_must_advance():
    C, _ = apply_ll(sc.handshake_ll(), Step("L1", "n1", "l", 6))
    assert try_apply(C, Step("L2", "n2", "l", 4)) is None
    assert try_apply(C, Step("L2", "n2", "l", 5)) is None  # below the offered 6


def test_policy_picks_smallest_fresh_times():
    C = sc.handshake_ll()
    step, C, _ = choose(C, "n1")
    assert step == Step("L1", "n1", "l", 6)
    step, C, ev = choose(C, "n2")
    assert step == Step("L2", "n2", "l", 6) and str(ev) == "comm l@6 10"


# -- retraction -----------------------------------------------------------------


def _pending():
    C, _ = apply_ll(sc.handshake_ll(), Step("L1", "n1", "l", 6))
    return apply_ll(C, Step("L8", "n1", "l"))[0]


def test_retraction_allowed_then_reset():
    C, _ = _fire(_pending(), Step("L9", "n2", "l", False), Step("L10", "n1", "l"))
    assert C.proc("n1").expr == Send("l", Int(10))
    assert C.chan("l").s.d == F and not C.chan("l").sync


def test_retraction_raced_by_acceptance():
    C, evs = _fire(_pending(), Step("L2", "n2", "l", 6))
    assert str(evs[0]) == "comm l@6 10"
    assert try_apply(C, Step("L10", "n1", "l")) is None
    C, _ = apply_ll(C, Step("L3", "n1", "l"))
    assert C.proc("n1").expr == UNIT and C.chan("l").s.d == F


def test_refused_request_is_reset():
    C = sc.handshake_ll()
    n2 = C.proc("n2")
    C = C.with_proc(Proc("n2", 4, n2.stack, Backtrack(UNIT)))
    C, _ = _fire(C, Step("L1", "n1", "l", 6), Step("L4", "n2", "l"), Step("L10R", "n1", "l"))
    assert C.proc("n1").expr == Send("l", Int(10))
    assert C.chan("l").r.d == B


def test_retract_allow_requires_a_sending_partner():
    ch = ChannelLL(SenderHalf("n1", 6, True, I, Int(10)), ReceiverHalf("n2", 3, False, F), True)
    C = sc.handshake_ll().with_chan("l", ch)
    with pytest.raises(ObligationViolation):
        apply_ll(C, Step("L9", "n2", "l", False))


# -- backward ---------------------------------------------------------------------


def test_walkthrough_low_level_rewinds_the_channel_to_2():
    run = run_ll(sc.walkthrough_ll())
    assert [str(e) for e in run.visible()] == ["rewind l@5", "rewind l@2"]
    assert run.steps[:4] == [Step("L5", "n1", "l", 5), Step("L6", "n2", "l", False),
                             Step("L5", "n1", "l", 2), Step("L6", "n2", "l", True)]
    assert "H8" in [s.rule for s in run.steps]


def test_back_ack_must_move_backwards():
    ch = ChannelLL(SenderHalf("n1", 8, True, B, Int(0)), ReceiverHalf("n2", 8, False, F), True)
    C = sc.walkthrough_ll().with_chan("l", ch)
    with pytest.raises(ObligationViolation):
        apply_ll(C, Step("L6", "n2", "l", True))


def test_backward_rules_need_a_backtracking_process():
    with pytest.raises(NotEnabled):
        apply_ll(sc.handshake_ll(), Step("L5", "n1", "l", 1))
    with pytest.raises(NotEnabled):
        apply_ll(sc.handshake_ll(), Step("L7", "n2", "l"))


def test_no_spontaneous_backtrack_mid_send():
    C = sc.region_exit_hl()
    f = C.proc("n1").stack
    ch = ChannelLL(SenderHalf("n1", 9, True, F, Int(1)), ReceiverHalf("n2", 8, False, F), True)
    C = ConfigLL((("l", ch),), (Proc("n1", 8, f, SendActive("l", Int(1))), Proc("n2", 8, (), Int(0))))
    assert try_apply(C, Step("H5", "n1")) is None


# -- whole programs -------------------------------------------------------------------


def test_retry_round_robin_terminates(retry):
    run = run_ll(initial_ll(retry))
    assert terminated(run.final)
    assert {p.name: show(final_value(p)) for p in run.final.procs} == {"p1": "1", "p2": "4"}
    events = [str(e) for e in run.visible()]
    assert events.count("comm c@4 2") == 2 and events.count("comm c@6 2") == 2
    assert any(e.startswith("rewind") for e in events)


def test_replay_reproduces_run(retry):
    run = run_ll(initial_ll(retry), rng=random.Random(7))
    again = replay(initial_ll(retry), run.steps)
    assert again.final == run.final and again.events == run.events


def test_candidates_are_known_rules(chain3):
    C = initial_ll(chain3)
    for _ in range(30):
        for s in ll_candidates(C):
            assert s.rule in LL_RULES
        res = None
        for n in ("p1", "p2", "p3"):
            res = choose(C, n)
            if res:
                break
        if res is None:
            break
        C = res[1]


def test_policy_groups_for_finished_process(retry):
    run = run_ll(initial_ll(retry))
    for p in run.final.procs:
        assert all(try_apply(run.final, s) is None for g in policy_groups(run.final, p.name) for s in g)


def test_unknown_rule():
    with pytest.raises(ValueError):
        apply_ll(sc.handshake_ll(), Step("L11", "n1", "l"))
