"""Hand-built configurations for the worked examples used across the tests."""

from revcsp.calculus import (
    UNIT, App, AppArg, Backtrack, Int, Lam, Prim, Recv, Send, Stable, StableActive, Var,
    decompose, parse_expr,
)
from revcsp.hl import ChannelHL, ConfigHL, Frame, Proc
from revcsp.ll import ConfigLL
from revcsp.protocol import F, ChannelLL, ReceiverHalf, SenderHalf


def plus(a, b):
    return App(App(Prim("+"), a), b)


# -- handshake: n1@5 sends 10, n2@4 receives, channel at 3 ----------------------


def handshake_hl() -> ConfigHL:
    return ConfigHL(
        (("l", ChannelHL("n1", 3, "n2")),),
        (Proc("n1", 5, (), Send("l", Int(10))),
         Proc("n2", 4, (), Recv("x", "l", plus(Var("x"), Int(1))))),
    )


def handshake_ll() -> ConfigLL:
    ch = ChannelLL(SenderHalf("n1", 3, False, F), ReceiverHalf("n2", 3, False, F), True)
    return ConfigLL((("l", ch),), handshake_hl().procs)


# -- stable entry: n1@5 at 7 + (stable f) v, channel at 2 ----------------------

F_REGION = Lam("y", plus(Var("y"), Int(1)))
V_REGION = Int(3)


def region_entry_hl() -> ConfigHL:
    return ConfigHL(
        (("l", ChannelHL("n1", 2, "n2")),),
        (Proc("n1", 5, (), plus(Int(7), App(Stable(F_REGION), V_REGION))),
         Proc("n2", 2, (), Int(0))),
    )


def region_frame() -> Frame:
    ctx, r = decompose(region_entry_hl().proc("n1").expr)
    return Frame(ctx + (AppArg(r.fn),), V_REGION, 5, (("l", 2),))


def region_exit_hl() -> ConfigHL:
    """After the region talked on l (now at 8) and is about to return 100."""
    return ConfigHL(
        (("l", ChannelHL("n1", 8, "n2")),),
        (Proc("n1", 8, (region_frame(),), plus(Int(7), StableActive(Int(100)))),
         Proc("n2", 8, (), Int(0))),
    )


# -- backtracking walkthrough ------------------------------------------------------
#
# n1 talked on l at 2, stepped to 3, entered region 1, talked at 5, stepped
# to 7, entered region 2, talked at 8, stepped to 9 and hit (backtrack 100).
# n2 sits at 13; for the channel rewind both ends must be backtracking, so
# n2 is given a region whose snapshot of l is 2.

F1 = Lam("a", Var("a"))
F2 = Lam("b", Var("b"))


def _frames():
    inner = plus(Int(2), App(Stable(F2), Int(0)))
    outer = plus(Int(1), StableActive(inner))
    ctx2, r2 = decompose(outer)
    ctx1, r1 = decompose(plus(Int(1), App(Stable(F1), Int(0))))
    f1 = Frame(ctx1 + (AppArg(r1.fn),), Int(11), 3, (("l", 2),))
    f2 = Frame(ctx2 + (AppArg(r2.fn),), Int(22), 7, (("l", 5),))
    return f1, f2


def walkthrough_expr():
    e3 = plus(Int(3), Backtrack(Int(100)))
    return plus(Int(1), StableActive(plus(Int(2), StableActive(e3))))


def walkthrough_n2() -> Proc:
    frame = Frame((AppArg(Stable(Lam("q", Var("q")))),), UNIT, 1, (("l", 2),))
    return Proc("n2", 13, (frame,), Backtrack(UNIT))


def walkthrough_hl() -> ConfigHL:
    f1, f2 = _frames()
    return ConfigHL(
        (("l", ChannelHL("n1", 8, "n2")),),
        (Proc("n1", 9, (f1, f2), walkthrough_expr()), walkthrough_n2()),
    )


def walkthrough_resumed_n1() -> Proc:
    """What the walkthrough ends with: n1@3 running E1[(stable f1) 100]."""
    return Proc("n1", 3, (), plus(Int(1), App(Stable(F1), Int(100))))


def walkthrough_ll() -> ConfigLL:
    ch = ChannelLL(SenderHalf("n1", 8, False, F, Int(0)), ReceiverHalf("n2", 8, False, F), True)
    return ConfigLL((("l", ch),), walkthrough_hl().procs)


__all__ = [n for n in dir() if not n.startswith("_")] + ["parse_expr"]
