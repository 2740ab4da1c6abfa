import pytest

from revcsp.calculus import parse_program
from revcsp.errors import NotQuiescent
from revcsp.ll import initial_ll
from revcsp.runtime import Record, replay_check, run, snapshot, spawn_system, step_log, trace

MISMATCHED = "(system (chan c p q) (proc p (send c 1)) (proc q 0))"


def _comms(h):
    return [(r.kind, r.chan, r.time, r.value) for r in trace(h) if r.kind in ("comm", "rewind")]


def test_retry_runs_to_completion(retry):
    h = spawn_system(retry)
    out = run(h, timeout=10)
    assert out.status == "terminated"
    assert out.values == {"p1": "1", "p2": "4"}
    assert out.steps == len(step_log(h))
    comms = [c for c in _comms(h) if c[0] == "comm"]
    assert comms == [("comm", "c", 4, "2"), ("comm", "c", 6, "2")] * 2
    assert replay_check(h).ok


def test_trace_is_ordered_by_sequence_number(retry):
    h = spawn_system(retry, seed=3)
    run(h)
    seqs = [r.seq for r in trace(h)]
    assert seqs == sorted(seqs) and len(set(seqs)) == len(seqs)


def test_seeded_runs_replay(retry):
    for seed in range(10):
        h = spawn_system(retry, seed=seed)
        assert run(h).status == "terminated"
        v = replay_check(h)
        assert v.ok, v.report()
        assert h.audit == []


def test_chain3(chain3):
    h = spawn_system(chain3, seed=1)
    out = run(h)
    assert out.status == "terminated" and out.values["p3"] == "2"
    assert replay_check(h).ok


def test_mismatched_program_is_stuck():
    h = spawn_system(parse_program(MISMATCHED))
    out = run(h, timeout=5)
    assert out.status == "stuck"
    assert "send-active" in out.dump


def test_zero_timeout_does_not_start():
    h = spawn_system(parse_program(MISMATCHED))
    out = run(h, timeout=0)
    assert out.status == "timeout" and out.steps == 0
    assert all(u.thread is None for u in h.units.values())


def test_empty_system_terminates_immediately():
    out = run(spawn_system(parse_program("(system)")), timeout=1)
    assert out.status == "terminated" and out.steps == 0


def test_snapshot_before_and_after(retry):
    h = spawn_system(retry)
    assert snapshot(h) == initial_ll(retry)
    run(h)
    C = snapshot(h)
    assert all(p.done for p in C.procs)


def test_snapshot_refuses_mid_run(retry):
    h = spawn_system(retry)
    h.state = "running"  # pretend the units are live
    with pytest.raises(NotQuiescent):
        snapshot(h)


def test_run_is_idempotent(retry):
    h = spawn_system(retry)
    a = run(h)
    assert run(h) is a


def test_record_line():
    assert Record(3, "comm", "c", 4, "2", "p2").line() == "3\tcomm\tc\t4\t2\tp2"
    assert Record(0, "enter", None, 1, None, "p").line() == "0\tenter\t-\t1\t-\tp"
