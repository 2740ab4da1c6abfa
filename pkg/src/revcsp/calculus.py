"""Core calculus: syntax, values, evaluation contexts, substitution, parsing.

Programs are written as s-expressions::

    (system
      (chan c p1 p2)
      (proc p1 (send c 2))
      (proc p2 (recv x c (+ x 1))))

Besides the core forms the reader accepts a little sugar that desugars
into core syntax: ``(let x e1 e2)``, ``(seq e1 e2 ...)`` and
``(if c a b)``.  ``>=`` returns a Church boolean, so ``if`` is just
application of the condition to two thunks.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

from .errors import ParseError, Stuck


# ---------------------------------------------------------------------------
# expressions


class Expr:
    # Terms are compared and hashed constantly by the explorer, so each
    # node remembers its hash after the first computation.
    __slots__ = ("_hash",)

    def __str__(self) -> str:
        return show(self)


class _Memo:
    __slots__ = ("_hash",)


def memo_hash(cls):
    compute = cls.__hash__

    def __hash__(self):
        try:
            return self._hash
        except AttributeError:
            h = compute(self)
            object.__setattr__(self, "_hash", h)
            return h

    cls.__hash__ = __hash__
    return cls


@memo_hash
@dataclass(frozen=True, slots=True)
class Unit(Expr):
    pass


@memo_hash
@dataclass(frozen=True, slots=True)
class Int(Expr):
    n: int


@memo_hash
@dataclass(frozen=True, slots=True)
class Prim(Expr):
    op: str


@memo_hash
@dataclass(frozen=True, slots=True)
class Var(Expr):
    name: str


@memo_hash
@dataclass(frozen=True, slots=True)
class Lam(Expr):
    param: str
    body: Expr


@memo_hash
@dataclass(frozen=True, slots=True)
class App(Expr):
    fn: Expr
    arg: Expr


@memo_hash
@dataclass(frozen=True, slots=True)
class Send(Expr):
    chan: str
    arg: Expr


@memo_hash
@dataclass(frozen=True, slots=True)
class Recv(Expr):
    var: str
    chan: str
    body: Expr


@memo_hash
@dataclass(frozen=True, slots=True)
class Stable(Expr):
    arg: Expr


@memo_hash
@dataclass(frozen=True, slots=True)
class Backtrack(Expr):
    arg: Expr


# internal forms: never produced by the parser
@memo_hash
@dataclass(frozen=True, slots=True)
class StableActive(Expr):
    body: Expr


@memo_hash
@dataclass(frozen=True, slots=True)
class SendActive(Expr):
    chan: str
    value: Expr


UNIT = Unit()
PRIMS = ("+", "-", ">=")
TRUE = Lam("t", Lam("f", Var("t")))
FALSE = Lam("t", Lam("f", Var("f")))


def is_value(e: Expr) -> bool:
    if isinstance(e, (Unit, Int, Prim, Lam)):
        return True
    if isinstance(e, Stable):
        return isinstance(e.arg, Lam)
    # a primitive applied to one argument waits for the second
    if isinstance(e, App):
        return isinstance(e.fn, Prim) and is_value(e.arg)
    return False


def is_internal(e: Expr) -> bool:
    return any(isinstance(x, (StableActive, SendActive)) for x in subterms(e))


def subterms(e: Expr):
    stack = [e]
    while stack:
        x = stack.pop()
        yield x
        if isinstance(x, Lam):
            stack.append(x.body)
        elif isinstance(x, App):
            stack += [x.fn, x.arg]
        elif isinstance(x, (Send, Stable, Backtrack)):
            stack.append(x.arg)
        elif isinstance(x, Recv):
            stack.append(x.body)
        elif isinstance(x, StableActive):
            stack.append(x.body)
        elif isinstance(x, SendActive):
            stack.append(x.value)


def free_vars(e: Expr) -> frozenset[str]:
    if isinstance(e, Var):
        return frozenset([e.name])
    if isinstance(e, Lam):
        return free_vars(e.body) - {e.param}
    if isinstance(e, Recv):
        return free_vars(e.body) - {e.var}
    if isinstance(e, App):
        return free_vars(e.fn) | free_vars(e.arg)
    if isinstance(e, (Send, Stable, Backtrack)):
        return free_vars(e.arg)
    if isinstance(e, StableActive):
        return free_vars(e.body)
    if isinstance(e, SendActive):
        return free_vars(e.value)
    return frozenset()


# ---------------------------------------------------------------------------
# substitution

_fresh = itertools.count(1)


def fresh_name(base: str) -> str:
    return f"{base.split('%')[0]}%{next(_fresh)}"


def _rename_binder(x: str, body: Expr, avoid: frozenset[str]) -> tuple[str, Expr]:
    if x not in avoid:
        return x, body
    z = fresh_name(x)
    while z in avoid or z in free_vars(body):
        z = fresh_name(x)
    return z, subst(body, Var(z), x)


def subst(e: Expr, v: Expr, x: str) -> Expr:
    """Capture-avoiding ``e[v/x]``."""
    if isinstance(e, Var):
        return v if e.name == x else e
    if isinstance(e, (Unit, Int, Prim)):
        return e
    if isinstance(e, Lam):
        if e.param == x or x not in free_vars(e.body):
            return e
        param, body = _rename_binder(e.param, e.body, free_vars(v))
        return Lam(param, subst(body, v, x))
    if isinstance(e, Recv):
        if e.var == x or x not in free_vars(e.body):
            return e
        var, body = _rename_binder(e.var, e.body, free_vars(v))
        return Recv(var, e.chan, subst(body, v, x))
    if isinstance(e, App):
        return App(subst(e.fn, v, x), subst(e.arg, v, x))
    if isinstance(e, Send):
        return Send(e.chan, subst(e.arg, v, x))
    if isinstance(e, Stable):
        return Stable(subst(e.arg, v, x))
    if isinstance(e, Backtrack):
        return Backtrack(subst(e.arg, v, x))
    if isinstance(e, StableActive):
        return StableActive(subst(e.body, v, x))
    if isinstance(e, SendActive):
        return SendActive(e.chan, subst(e.value, v, x))
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# evaluation contexts
#
# A context is a tuple of frames, outermost first.  Each frame records the
# syntactic position of the hole one level down.


@memo_hash
@dataclass(frozen=True, slots=True)
class AppFn(_Memo):  # E e
    arg: Expr


@memo_hash
@dataclass(frozen=True, slots=True)
class AppArg(_Memo):  # v E
    fn: Expr


@memo_hash
@dataclass(frozen=True, slots=True)
class SendArg(_Memo):  # send l E
    chan: str


@memo_hash
@dataclass(frozen=True, slots=True)
class StableArg(_Memo):  # stable E
    pass


@memo_hash
@dataclass(frozen=True, slots=True)
class ActiveBody(_Memo):  # stable_ E
    pass


@memo_hash
@dataclass(frozen=True, slots=True)
class BacktrackArg(_Memo):  # backtrack E
    pass


Frame = Union[AppFn, AppArg, SendArg, StableArg, ActiveBody, BacktrackArg]
Context = tuple  # tuple[Frame, ...]
HOLE: Context = ()


def plug_frame(f: Frame, e: Expr) -> Expr:
    if isinstance(f, AppFn):
        return App(e, f.arg)
    if isinstance(f, AppArg):
        return App(f.fn, e)
    if isinstance(f, SendArg):
        return Send(f.chan, e)
    if isinstance(f, StableArg):
        return Stable(e)
    if isinstance(f, ActiveBody):
        return StableActive(e)
    if isinstance(f, BacktrackArg):
        return Backtrack(e)
    raise TypeError(f"not a context frame: {f!r}")


def plug(ctx: Context, e: Expr) -> Expr:
    for f in reversed(ctx):
        e = plug_frame(f, e)
    return e


@lru_cache(maxsize=1 << 16)
def decompose(e: Expr) -> tuple[Context, Expr] | None:
    """Split a closed expression into ``(E, redex)``; ``None`` for values.

    Raises ``Stuck`` when the next step is a run-time type error.
    """
    frames: list = []
    while True:
        if is_value(e):
            if not frames:
                return None
            raise AssertionError("descended into a value")  # pragma: no cover
        if isinstance(e, App):
            if not is_value(e.fn):
                frames.append(AppFn(e.arg))
                e = e.fn
                continue
            if not is_value(e.arg):
                frames.append(AppArg(e.fn))
                e = e.arg
                continue
            _check_app(e)
            return tuple(frames), e
        if isinstance(e, Send):
            if not is_value(e.arg):
                frames.append(SendArg(e.chan))
                e = e.arg
                continue
            return tuple(frames), e
        if isinstance(e, Stable):
            if not is_value(e.arg):
                frames.append(StableArg())
                e = e.arg
                continue
            raise Stuck(f"stable of a non-function: {show(e)}")
        if isinstance(e, StableActive):
            if not is_value(e.body):
                frames.append(ActiveBody())
                e = e.body
                continue
            return tuple(frames), e
        if isinstance(e, Backtrack):
            if not is_value(e.arg):
                frames.append(BacktrackArg())
                e = e.arg
                continue
            return tuple(frames), e
        if isinstance(e, (Recv, SendActive)):
            return tuple(frames), e
        if isinstance(e, Var):
            raise Stuck(f"free variable {e.name}")
        raise TypeError(f"not an expression: {e!r}")


def _check_app(e: App) -> None:
    f, a = e.fn, e.arg
    if isinstance(f, Lam):
        return
    if isinstance(f, Stable) and isinstance(f.arg, Lam):
        return
    if isinstance(f, App) and isinstance(f.fn, Prim):
        x = f.arg
        if isinstance(x, Int) and isinstance(a, Int):
            return
        raise Stuck(f"primitive {f.fn.op} applied to non-integers: {show(e)}")
    raise Stuck(f"cannot apply {show(f)}")


def is_local_redex(r: Expr) -> bool:
    """β-redex or saturated primitive application."""
    return isinstance(r, App) and (
        isinstance(r.fn, Lam) or (isinstance(r.fn, App) and isinstance(r.fn.fn, Prim))
    )


def is_stable_entry(r: Expr) -> bool:
    return isinstance(r, App) and isinstance(r.fn, Stable)


def reduce_local(r: Expr) -> Expr:
    if isinstance(r, App) and isinstance(r.fn, Lam):
        return subst(r.fn.body, r.arg, r.fn.param)
    if isinstance(r, App) and isinstance(r.fn, App) and isinstance(r.fn.fn, Prim):
        return apply_prim(r.fn.fn.op, r.fn.arg, r.arg)
    raise Stuck(f"not a local redex: {show(r)}")


def apply_prim(op: str, a: Expr, b: Expr) -> Expr:
    if not (isinstance(a, Int) and isinstance(b, Int)):
        raise Stuck(f"{op} expects integers")
    if op == "+":
        return Int(a.n + b.n)
    if op == "-":
        return Int(a.n - b.n)
    if op == ">=":
        return TRUE if a.n >= b.n else FALSE
    raise Stuck(f"unknown primitive {op}")


# ---------------------------------------------------------------------------
# printing


def show(e: Expr) -> str:
    if isinstance(e, Unit):
        return "unit"
    if isinstance(e, Int):
        return str(e.n)
    if isinstance(e, Prim):
        return e.op
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Lam):
        return f"(lam {e.param} {show(e.body)})"
    if isinstance(e, App):
        if isinstance(e.fn, App) and isinstance(e.fn.fn, Prim):
            return f"({e.fn.fn.op} {show(e.fn.arg)} {show(e.arg)})"
        return f"(app {show(e.fn)} {show(e.arg)})"
    if isinstance(e, Send):
        return f"(send {e.chan} {show(e.arg)})"
    if isinstance(e, Recv):
        return f"(recv {e.var} {e.chan} {show(e.body)})"
    if isinstance(e, Stable):
        return f"(stable {show(e.arg)})"
    if isinstance(e, Backtrack):
        return f"(backtrack {show(e.arg)})"
    if isinstance(e, StableActive):
        return f"(stable-active {show(e.body)})"
    if isinstance(e, SendActive):
        return f"(send-active {e.chan} {show(e.value)})"
    raise TypeError(f"not an expression: {e!r}")


def show_context(ctx: Context) -> str:
    return show(plug(ctx, Var("[]")))


# ---------------------------------------------------------------------------
# reader

INTERNAL_KEYWORDS = {"stable-active", "send-active"}
KEYWORDS = {
    "lam", "app", "send", "recv", "stable", "backtrack", "unit",
    "let", "seq", "if", "system", "par", "chan", "proc",
} | INTERNAL_KEYWORDS | set(PRIMS)

_TOKEN = re.compile(r"\s+|;[^\n]*|\(|\)|[^\s();]+")
_INT = re.compile(r"-?\d+$")


@dataclass(frozen=True)
class Tok:
    text: str
    line: int
    col: int


@dataclass
class SList:
    items: list
    line: int
    col: int


def tokenize(text: str) -> list[Tok]:
    toks, line, col, pos = [], 1, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:  # pragma: no cover - the pattern matches any character
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        s = m.group()
        if not s.isspace() and not s.startswith(";"):
            toks.append(Tok(s, line, col))
        nl = s.count("\n")
        if nl:
            line += nl
            col = len(s) - s.rfind("\n")
        else:
            col += len(s)
        pos = m.end()
    return toks


def read_sexprs(text: str) -> list:
    toks = tokenize(text)
    out, stack = [], []
    for t in toks:
        if t.text == "(":
            stack.append(SList([], t.line, t.col))
        elif t.text == ")":
            if not stack:
                raise ParseError("unbalanced ')'", t.line, t.col)
            node = stack.pop()
            (stack[-1].items if stack else out).append(node)
        else:
            (stack[-1].items if stack else out).append(t)
    if stack:
        s = stack[-1]
        raise ParseError("unclosed '('", s.line, s.col)
    return out


def _pos(node) -> tuple[int, int]:
    return node.line, node.col


def _symbol(node, what: str) -> str:
    if not isinstance(node, Tok) or _INT.match(node.text) or node.text in KEYWORDS:
        raise ParseError(f"expected {what}", *_pos(node))
    if "%" in node.text:
        raise ParseError("'%' is reserved for generated names", *_pos(node))
    return node.text


def _arity(node: SList, n: int, form: str) -> None:
    if len(node.items) != n:
        raise ParseError(f"{form} takes {n - 1} argument(s), got {len(node.items) - 1}", *_pos(node))


def to_expr(node, names=None) -> Expr:
    """Convert one s-expression to an ``Expr``; ``names`` numbers sugar binders."""
    if names is None:
        names = itertools.count(1)
    if isinstance(node, Tok):
        s = node.text
        if s in INTERNAL_KEYWORDS:
            raise ParseError(f"internal form {s!r} is not allowed in programs", *_pos(node))
        if _INT.match(s):
            return Int(int(s))
        if s == "unit":
            return UNIT
        if s in PRIMS:
            return Prim(s)
        if s in KEYWORDS:
            raise ParseError(f"unexpected keyword {s!r}", *_pos(node))
        return Var(_symbol(node, "variable"))
    items = node.items
    if not items:
        return UNIT
    head = items[0]
    h = head.text if isinstance(head, Tok) else None
    if h in INTERNAL_KEYWORDS:
        raise ParseError(f"internal form {h!r} is not allowed in programs", *_pos(head))
    if h == "lam":
        _arity(node, 3, "lam")
        return Lam(_symbol(items[1], "parameter name"), to_expr(items[2], names))
    if h == "app":
        if len(items) < 3:
            raise ParseError("app needs a function and at least one argument", *_pos(node))
        e = to_expr(items[1], names)
        for a in items[2:]:
            e = App(e, to_expr(a, names))
        return e
    if h == "send":
        _arity(node, 3, "send")
        return Send(_symbol(items[1], "channel name"), to_expr(items[2], names))
    if h == "recv":
        _arity(node, 4, "recv")
        return Recv(_symbol(items[1], "variable"), _symbol(items[2], "channel name"), to_expr(items[3], names))
    if h == "stable":
        _arity(node, 2, "stable")
        return Stable(to_expr(items[1], names))
    if h == "backtrack":
        _arity(node, 2, "backtrack")
        return Backtrack(to_expr(items[1], names))
    if h in PRIMS:
        _arity(node, 3, h)
        return App(App(Prim(h), to_expr(items[1], names)), to_expr(items[2], names))
    if h == "let":
        _arity(node, 4, "let")
        return App(Lam(_symbol(items[1], "variable"), to_expr(items[3], names)), to_expr(items[2], names))
    if h == "seq":
        if len(items) < 2:
            raise ParseError("seq needs at least one expression", *_pos(node))
        e = to_expr(items[-1], names)
        for a in reversed(items[1:-1]):
            e = App(Lam(f"_%{next(names)}", e), to_expr(a, names))
        return e
    if h == "if":
        _arity(node, 4, "if")
        k = f"_%{next(names)}"
        thunk_a, thunk_b = Lam(k, to_expr(items[2], names)), Lam(k, to_expr(items[3], names))
        return App(App(App(to_expr(items[1], names), thunk_a), thunk_b), UNIT)
    if h in KEYWORDS:
        raise ParseError(f"{h!r} is not an expression form", *_pos(head))
    raise ParseError("expected an expression form; use (app f x) for application", *_pos(node))


def parse_expr(text: str) -> Expr:
    """Parse a single expression (handy in tests and at the REPL)."""
    top = read_sexprs(text)
    if len(top) != 1:
        raise ParseError(f"expected one expression, found {len(top)}", 1, 1)
    return to_expr(top[0])


@dataclass(frozen=True)
class Program:
    processes: dict  # name -> Expr, in declaration order
    channels: dict  # name -> (sender, receiver)

    def channels_of(self, proc: str) -> list[str]:
        return sorted(c for c, (s, r) in self.channels.items() if proc in (s, r))


def _used_channels(e: Expr) -> list[tuple[str, str]]:
    out = []
    for x in subterms(e):
        if isinstance(x, Send):
            out.append(("send", x.chan))
        elif isinstance(x, Recv):
            out.append(("recv", x.chan))
    return out


def parse_program(text: str) -> Program:
    top = read_sexprs(text)
    if len(top) != 1 or not isinstance(top[0], SList) or not top[0].items:
        raise ParseError("a program is a single (system ...) form", 1, 1)
    root = top[0]
    head = root.items[0]
    if not isinstance(head, Tok) or head.text not in ("system", "par"):
        raise ParseError("program must start with (system ...)", *_pos(root))
    procs: dict[str, Expr] = {}
    chans: dict[str, tuple[str, str]] = {}
    chan_nodes = {}
    for decl in root.items[1:]:
        if not isinstance(decl, SList) or not decl.items or not isinstance(decl.items[0], Tok):
            raise ParseError("expected (chan ...) or (proc ...)", *_pos(decl))
        kind = decl.items[0].text
        if kind == "chan":
            _arity(decl, 4, "chan")
            name = _symbol(decl.items[1], "channel name")
            if name in chans:
                raise ParseError(f"duplicate channel {name!r}", *_pos(decl))
            s, r = _symbol(decl.items[2], "sender name"), _symbol(decl.items[3], "receiver name")
            if s == r:
                raise ParseError(f"channel {name!r} connects {s!r} to itself", *_pos(decl))
            chans[name] = (s, r)
            chan_nodes[name] = decl
        elif kind == "proc":
            _arity(decl, 3, "proc")
            name = _symbol(decl.items[1], "process name")
            if name in procs:
                raise ParseError(f"duplicate process {name!r}", *_pos(decl))
            body = to_expr(decl.items[2], itertools.count(1))
            fv = free_vars(body)
            if fv:
                raise ParseError(f"unbound variable(s) in {name}: {', '.join(sorted(fv))}", *_pos(decl))
            procs[name] = (body, decl)
        else:
            raise ParseError(f"unknown declaration {kind!r}", *_pos(decl))
    for name, (s, r) in chans.items():
        for end in (s, r):
            if end not in procs:
                raise ParseError(f"channel {name!r} names unknown process {end!r}", *_pos(chan_nodes[name]))
    for pname, (body, decl) in procs.items():
        for kind, c in _used_channels(body):
            if c not in chans:
                raise ParseError(f"{pname} uses undeclared channel {c!r}", *_pos(decl))
            owner = chans[c][0] if kind == "send" else chans[c][1]
            if owner != pname:
                raise ParseError(f"{pname} cannot {kind} on {c!r}: that end belongs to {owner}", *_pos(decl))
    return Program({n: b for n, (b, _) in procs.items()}, chans)
