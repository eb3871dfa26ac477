"""Core IR: values (which include types), expressions, effect rows, contexts.

All nodes are immutable.  Names carry a globally unique integer so that every
pass can generate fresh binders without consulting scopes.  The traversal
helpers (free variables, substitution, alpha-equivalence) are driven by a
per-class schema describing which fields are binders and what they scope over.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, fields
from typing import Callable, Iterable, Union


# ---------------------------------------------------------------------------
# names

@dataclass(frozen=True, slots=True)
class Name:
    text: str
    uid: int

    def __str__(self) -> str:
        return f"{self.text}.{self.uid}"

    def __repr__(self) -> str:
        return f"Name({self.text}.{self.uid})"


_counter = itertools.count(1)
_counter_lock = threading.Lock()
_reserved_floor = 0


def fresh(text: str = "v") -> Name:
    """A new name whose uid has never been handed out before."""
    with _counter_lock:
        uid = next(_counter)
        while uid <= _reserved_floor:
            uid = next(_counter)
    return Name(text, uid)


def refresh(name: Name) -> Name:
    return fresh(name.text)


def reserve(uid: int) -> None:
    """Make sure later fresh names never collide with an externally read uid."""
    global _reserved_floor
    with _counter_lock:
        if uid > _reserved_floor:
            _reserved_floor = uid


# ---------------------------------------------------------------------------
# node base

class Node:
    __slots__ = ()

    # field-name -> tuple of binder field names whose scope covers that field
    _scopes: dict = {}
    # binder fields (hold a Name)
    _binders: tuple = ()
    # sub-term fields (hold a Node, or a tuple of Nodes when listed in _seqs)
    _terms: tuple = ()
    _seqs: tuple = ()


class Value(Node):
    __slots__ = ()


class Expr(Node):
    __slots__ = ()


def _node(binders=(), terms=(), seqs=(), scopes=None):
    def wrap(cls):
        cls = dataclass(frozen=True, slots=True)(cls)
        cls._binders = tuple(binders)
        cls._terms = tuple(terms)
        cls._seqs = tuple(seqs)
        cls._scopes = dict(scopes or {})
        cls._field_names = tuple(f.name for f in fields(cls))
        return cls

    return wrap


# ---------------------------------------------------------------------------
# values

@_node(terms=())
class Var(Value):
    name: Name


@_node()
class Lit(Value):
    kind: str  # 'Float' | 'Int' | 'Unit'
    val: object


UNIT = None  # set below


@_node()
class BaseType(Value):
    kind: str  # 'Type' | 'Unit' | 'Int' | 'Float'


@_node(terms=("size",))
class FinType(Value):
    size: Value


@_node(terms=("region",))
class Effect(Node):
    kind: str  # 'State' | 'Accum'
    region: Value


@_node(terms=("entries",), seqs=("entries",))
class EffectRow(Node):
    entries: tuple = ()

    @property
    def pure(self) -> bool:
        return not self.entries


PURE = EffectRow(())


@_node(binders=("binder",), terms=("dom", "effects", "cod"),
       scopes={"effects": ("binder",), "cod": ("binder",)})
class ArrowType(Value):
    binder: Name
    dom: Value
    effects: EffectRow
    cod: Value


@_node(terms=("dom", "cod"))
class ArrayType(Value):
    dom: Value
    cod: Value


@_node(terms=("left", "right"))
class PairType(Value):
    left: Value
    right: Value


@_node(terms=("left", "right"))
class EitherType(Value):
    left: Value
    right: Value


@_node(terms=("region", "payload"))
class RefType(Value):
    region: Value
    payload: Value


@_node(binders=("binder",), terms=("annot", "body"), scopes={"body": ("binder",)})
class Lam(Value):
    binder: Name
    annot: Value
    body: Expr


@_node(binders=("binder",), terms=("annot", "body"), scopes={"body": ("binder",)})
class View(Value):
    binder: Name
    annot: Value
    body: Expr


@_node(terms=("left", "right"))
class Pair(Value):
    left: Value
    right: Value


@_node(terms=("other", "payload"))
class InjLeft(Value):
    other: Value  # the type of the Right alternative
    payload: Value


@_node(terms=("other", "payload"))
class InjRight(Value):
    other: Value  # the type of the Left alternative
    payload: Value


@_node(terms=("scrut", "left_fn", "right_fn"))
class ValueCase(Value):
    scrut: Value
    left_fn: Value
    right_fn: Value


@_node(terms=("size",))
class FinLit(Value):
    ordinal: int
    size: Value

    def __post_init__(self):
        if isinstance(self.size, Lit) and not (0 <= self.ordinal < self.size.val):
            from .errors import OutOfBounds

            raise OutOfBounds(self.ordinal, self.size.val)


class Meta(Value):
    """An inference hole.  Mutable, compared by identity."""

    __slots__ = ("uid", "solution", "hint", "loc")
    _binders = ()
    _terms = ()
    _seqs = ()
    _scopes = {}

    def __init__(self, hint: str = "?", loc=None):
        self.uid = next(_counter)
        self.solution: Value | None = None
        self.hint = hint
        self.loc = loc

    def __repr__(self):
        return f"Meta({self.hint}{self.uid}={self.solution!r})"


UNIT = Lit("Unit", ())
TYPE = BaseType("Type")
UNIT_T = BaseType("Unit")
INT_T = BaseType("Int")
FLOAT_T = BaseType("Float")
BOOL_T = EitherType(UNIT_T, UNIT_T)


def float_lit(x: float) -> Lit:
    return Lit("Float", float(x))


def int_lit(n: int) -> Lit:
    return Lit("Int", int(n))


# ---------------------------------------------------------------------------
# expressions

@_node(terms=("val",))
class Ret(Expr):
    val: Value


@_node(binders=("binder",), terms=("annot", "bound", "body"), scopes={"body": ("binder",)})
class Let(Expr):
    binder: Name
    annot: Value | None
    bound: Expr
    body: Expr


@_node(terms=("fn", "arg"))
class App(Expr):
    fn: Value
    arg: Value


@_node(terms=("arr", "idx"))
class Index(Expr):
    arr: Value
    idx: Value


@_node(binders=("binder",), terms=("annot", "body"), scopes={"body": ("binder",)})
class For(Expr):
    binder: Name
    annot: Value
    body: Expr


@_node(terms=("val",))
class Fst(Expr):
    val: Value


@_node(terms=("val",))
class Snd(Expr):
    val: Value


@_node(binders=("lb", "rb"), terms=("scrut", "lbody", "rbody"),
       scopes={"lbody": ("lb",), "rbody": ("rb",)})
class Case(Expr):
    scrut: Value
    lb: Name
    lbody: Expr
    rb: Name
    rbody: Expr


@_node(terms=("ref", "idx"))
class Slice(Expr):
    ref: Value
    idx: Value


@_node(binders=("region", "ref"), terms=("ref_annot", "body"),
       scopes={"ref_annot": ("region",), "body": ("region", "ref")})
class Action(Node):
    region: Name
    ref: Name
    ref_annot: Value  # payload type of the reference
    body: Expr


@_node(terms=("init", "action"))
class RunState(Expr):
    init: Value
    action: Action


@_node(terms=("ref",))
class Get(Expr):
    ref: Value


@_node(terms=("ref", "val"))
class Put(Expr):
    ref: Value
    val: Value


@_node(terms=("action",))
class RunAccum(Expr):
    action: Action


@_node(terms=("ref", "val"))
class Accumulate(Expr):
    ref: Value
    val: Value


@_node(terms=("left", "right"))
class Add(Expr):
    left: Value
    right: Value


@_node(terms=("left", "right"))
class Mul(Expr):
    left: Value
    right: Value


@_node(terms=("fn", "point"))
class Linearize(Expr):
    fn: Value
    point: Value


@_node(terms=("fn", "ct"))
class Transpose(Expr):
    fn: Value
    ct: Value


# op -> number of value arguments.  Index-set primitives take the set's type
# as their first argument.
PRIM_ARITY = {
    "lt": 2, "gt": 2, "le": 2, "ge": 2, "eq": 2,
    "sub": 2, "neg": 1, "itof": 1, "recip": 1,
    "ordinal": 2, "fromOrdinal": 2, "size": 1, "reverse": 2,
}
PRIM_OPS = tuple(PRIM_ARITY)


@_node(terms=("args",), seqs=("args",))
class Prim(Expr):
    """Scalar and index-set primitives the calculus leaves to a library."""

    op: str
    args: tuple


Term = Union[Value, Expr, Node]


# ---------------------------------------------------------------------------
# generic traversal

def children(node: Node) -> Iterable[Node]:
    for f in node._terms:
        c = getattr(node, f)
        if f in node._seqs:
            yield from c
        elif c is not None:
            yield c


def rebuild(node: Node, **changes) -> Node:
    vals = [changes.get(f, getattr(node, f)) for f in node._field_names]
    return type(node)(*vals)


def free_vars(t: Term) -> set:
    out: set = set()
    _fv(t, frozenset(), out)
    return out


def _fv(t, bound, out):
    if isinstance(t, Var):
        if t.name not in bound:
            out.add(t.name)
        return
    if isinstance(t, Meta):
        if t.solution is not None:
            _fv(t.solution, bound, out)
        return
    if t is None:
        return
    scopes = t._scopes
    for f in t._terms:
        c = getattr(t, f)
        if c is None:
            continue
        b = bound
        sc = scopes.get(f)
        if sc:
            b = bound | {getattr(t, x) for x in sc}
        if f in t._seqs:
            for ci in c:
                _fv(ci, b, out)
        else:
            _fv(c, b, out)


def mentions(t: Term, names) -> bool:
    names = set(names)
    return bool(names) and not names.isdisjoint(free_vars(t))


def subst(t: Term, binder: Name, replacement: Value) -> Term:
    return subst_map(t, {binder: replacement})


def subst_map(t: Term, m: dict) -> Term:
    """Capture-avoiding simultaneous substitution of values for names."""
    if not m or t is None:
        return t
    repl_fv: set = set()
    for v in m.values():
        repl_fv |= free_vars(v)
    return _subst(t, m, repl_fv)


def _subst(t, m, repl_fv):
    if isinstance(t, Var):
        return m.get(t.name, t)
    if isinstance(t, Meta):
        if t.solution is not None:
            return _subst(t.solution, m, repl_fv)
        return t
    if t is None or not t._terms:
        return t
    if not t._binders:
        changes = {}
        for f in t._terms:
            c = getattr(t, f)
            if c is None:
                continue
            if f in t._seqs:
                nc = tuple(_subst(ci, m, repl_fv) for ci in c)
                if any(a is not b for a, b in zip(nc, c)):
                    changes[f] = nc
            else:
                nc = _subst(c, m, repl_fv)
                if nc is not c:
                    changes[f] = nc
        return rebuild(t, **changes) if changes else t
    # binder-carrying node: rename binders that would capture, drop shadowed ones
    renames = {}
    changes = {}
    for bf in t._binders:
        b = getattr(t, bf)
        if b in repl_fv:
            nb = refresh(b)
            renames[bf] = nb
            changes[bf] = nb
    for f in t._terms:
        c = getattr(t, f)
        if c is None:
            continue
        sc = t._scopes.get(f, ())
        mm = m
        fv = repl_fv
        if sc:
            mm = dict(m)
            for bf in sc:
                b = getattr(t, bf)
                mm.pop(b, None)
                if bf in renames:
                    mm[b] = Var(renames[bf])
            if bf_renamed := [renames[bf] for bf in sc if bf in renames]:
                fv = repl_fv | set(bf_renamed)
        if not mm:
            continue
        if f in t._seqs:
            changes[f] = tuple(_subst(ci, mm, fv) for ci in c)
        else:
            nc = _subst(c, mm, fv)
            if nc is not c:
                changes[f] = nc
    return rebuild(t, **changes) if changes else t


def rename_binders(t: Term) -> Term:
    """Give every binder in ``t`` a fresh uid (free names untouched)."""
    return _freshen(t, {})


def _freshen(t, m):
    if isinstance(t, Var):
        return m.get(t.name, t)
    if isinstance(t, Meta):
        return _freshen(t.solution, m) if t.solution is not None else t
    if t is None or not t._terms:
        return t
    changes = {}
    new_b = {}
    for bf in t._binders:
        b = getattr(t, bf)
        nb = refresh(b)
        new_b[bf] = nb
        changes[bf] = nb
    for f in t._terms:
        c = getattr(t, f)
        if c is None:
            continue
        sc = t._scopes.get(f, ())
        mm = m
        if sc:
            mm = dict(m)
            for bf in sc:
                mm[getattr(t, bf)] = Var(new_b[bf])
        if f in t._seqs:
            changes[f] = tuple(_freshen(ci, mm) for ci in c)
        else:
            changes[f] = _freshen(c, mm)
    return rebuild(t, **changes)


def alpha_eq(a: Term, b: Term, on_meta: Callable | None = None) -> bool:
    """Structural equality modulo binder renaming.

    ``on_meta(meta, other)`` is consulted when an unsolved Meta meets a term; it
    returns whether the two may be considered equal (the typechecker uses it to
    solve holes).
    """
    return _aeq(a, b, {}, {}, on_meta)


_alpha_keys = itertools.count(1)


def _aeq(a, b, ma, mb, on_meta):
    if isinstance(a, Meta) and a.solution is not None:
        return _aeq(a.solution, b, ma, mb, on_meta)
    if isinstance(b, Meta) and b.solution is not None:
        return _aeq(a, b.solution, ma, mb, on_meta)
    if isinstance(a, Meta) or isinstance(b, Meta):
        if a is b:
            return True
        if on_meta is None:
            return False
        if isinstance(a, Meta):
            return on_meta(a, _rename_back(b, mb))
        return on_meta(b, _rename_back(a, ma))
    if a is b and not ma and not mb:
        return True
    if type(a) is not type(b):
        return False
    if a is None:
        return True
    if isinstance(a, Var):
        na = ma.get(a.name, a.name)
        nb = mb.get(b.name, b.name)
        return na == nb
    if not a._terms:
        return a == b
    for f in a._field_names:
        if f in a._binders or f in a._terms:
            continue
        if getattr(a, f) != getattr(b, f):
            return False
    for f in a._terms:
        ca, cb = getattr(a, f), getattr(b, f)
        sc = a._scopes.get(f, ())
        na, nb = ma, mb
        if sc:
            na, nb = dict(ma), dict(mb)
            for bf in sc:
                # map both binders to a shared key
                key = Name("#", -next(_alpha_keys))
                na[getattr(a, bf)] = key
                nb[getattr(b, bf)] = key
        if f in a._seqs:
            if len(ca) != len(cb):
                return False
            if not all(_aeq(x, y, na, nb, on_meta) for x, y in zip(ca, cb)):
                return False
        elif (ca is None) != (cb is None):
            return False
        elif ca is not None and not _aeq(ca, cb, na, nb, on_meta):
            return False
    return True


def _rename_back(t, m):
    # binders bound on the way down map to synthetic keys; a Meta solved under
    # binders must not capture them, so only closed-over-binder terms are solvable
    if not m:
        return t
    inner = set(m.keys())
    if mentions(t, inner):
        return _Unsolvable
    return t


class _UnsolvableT(Value):
    __slots__ = ()
    _terms = ()
    _binders = ()


_Unsolvable = _UnsolvableT()


def zonk(t: Term, on_unsolved: Callable | None = None) -> Term:
    """Replace solved metas by their solutions throughout ``t``."""
    if isinstance(t, Meta):
        if t.solution is not None:
            return zonk(t.solution, on_unsolved)
        if on_unsolved is not None:
            return on_unsolved(t)
        return t
    if t is None or not t._terms:
        return t
    changes = {}
    for f in t._terms:
        c = getattr(t, f)
        if c is None:
            continue
        if f in t._seqs:
            nc = tuple(zonk(ci, on_unsolved) for ci in c)
            if any(x is not y for x, y in zip(nc, c)):
                changes[f] = nc
        else:
            nc = zonk(c, on_unsolved)
            if nc is not c:
                changes[f] = nc
    return rebuild(t, **changes) if changes else t


def has_meta(t: Term) -> bool:
    if isinstance(t, Meta):
        return t.solution is None or has_meta(t.solution)
    if t is None:
        return False
    return any(has_meta(c) for c in children(t))


def walk(t: Term):
    """Pre-order iterator over every node in ``t``."""
    stack = [t]
    while stack:
        n = stack.pop()
        if n is None:
            continue
        if isinstance(n, Meta):
            if n.solution is not None:
                stack.append(n.solution)
            continue
        yield n
        stack.extend(reversed(list(children(n))))


def count_nodes(t: Term) -> int:
    return sum(1 for _ in walk(t))


# ---------------------------------------------------------------------------
# contexts

@dataclass(frozen=True, slots=True)
class Context:
    """A chain of let bindings with a hole at the end."""

    bindings: tuple = ()  # of (Name, annot or None, Expr)

    def fill(self, result: Expr) -> Expr:
        out = result
        for name, annot, bound in reversed(self.bindings):
            out = Let(name, annot, bound, out)
        return out

    def compose(self, other: "Context") -> "Context":
        return Context(self.bindings + other.bindings)

    def binders(self) -> list:
        return [(n, a) for n, a, _ in self.bindings]

    def __len__(self):
        return len(self.bindings)


EMPTY_CONTEXT = Context(())


def context_fill(ctx: Context, result: Expr) -> Expr:
    return ctx.fill(result)


def context_compose(a: Context, b: Context) -> Context:
    return a.compose(b)


def split_lets(e: Expr) -> tuple[Context, Expr]:
    """Peel the leading let chain off a block."""
    bs = []
    while isinstance(e, Let):
        bs.append((e.binder, e.annot, e.bound))
        e = e.body
    return Context(tuple(bs)), e


# ---------------------------------------------------------------------------
# small constructors

def pair_type_of(tys: list) -> Value:
    """Right-nested pair type; Unit when empty."""
    if not tys:
        return UNIT_T
    out = tys[-1]
    for t in reversed(tys[:-1]):
        out = PairType(t, out)
    return out


def tuple_value(vals: list) -> Value:
    if not vals:
        return UNIT
    out = vals[-1]
    for v in reversed(vals[:-1]):
        out = Pair(v, out)
    return out


def arrow(dom: Value, cod: Value, effects: EffectRow = PURE, binder: Name | None = None) -> ArrowType:
    return ArrowType(binder or fresh("_"), dom, effects, cod)


def is_value_expr(e: Expr) -> bool:
    return isinstance(e, Ret)
