"""Interpreter for core and simplified IR.

Expressions are compiled once into Python closures over a mutable frame (a dict
from ``Name`` to runtime value) and then run.  Runtime values are:

* ``float`` / ``int`` / ``()`` for scalars and Unit, and plain ints for ``Fin n`` members
* tuples for pairs and ``Sum`` for Either values
* ``Table`` for materialized arrays and ``ViewVal`` for lazy ones
* Python callables for lambdas
* ``RefVal`` for references, addressing a ``Cell`` through a path of index members
* index-set descriptors (and a few tags) for types

``for`` runs its body in the element order of the index set.  With
``chunks > 1`` the interpreter splits eligible loops (those touching no state
from outside the loop) into contiguous chunks with private accumulators and
folds the partial sums back in chunk order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from . import core_ir as ir
from .core_ir import Name
from .errors import EscapedRef, InternalError, NonVSpaceResult, StateInParallel
from .index_sets import EitherSet, FinSet, IndexSet, PairSet, Sum, UNIT_SET

# ---------------------------------------------------------------------------
# runtime values


class Table:
    """A materialized array: a descriptor plus its elements in enumerate order."""

    __slots__ = ("desc", "elems")

    def __init__(self, desc: IndexSet, elems: list):
        self.desc = desc
        self.elems = elems

    def at(self, i):
        if type(self.desc) is FinSet:
            return self.elems[i]
        return self.elems[self.desc.ordinal(i)]

    def __eq__(self, other):
        return isinstance(other, Table) and self.desc == other.desc and self.elems == other.elems

    def __repr__(self):
        return f"Table({self.desc!r}, {self.elems!r})"


class ViewVal:
    """A lazy array: indexing runs the body for that member."""

    __slots__ = ("desc", "fn")

    def __init__(self, desc: IndexSet, fn):
        self.desc = desc
        self.fn = fn

    def at(self, i):
        return self.fn(i)

    @property
    def elems(self):
        return [self.fn(m) for m in self.desc.enumerate()]

    def __repr__(self):
        return f"ViewVal({self.desc!r})"


class Cell:
    __slots__ = ("value", "alive")

    def __init__(self, value):
        self.value = value
        self.alive = True


@dataclass(frozen=True, slots=True)
class RefVal:
    cell: Cell
    path: tuple = ()


@dataclass
class WorkCount:
    arithmetic: int = 0
    accum_updates: int = 0
    cells: int = 0
    nodes: int = 0

    def as_tuple(self):
        return (self.arithmetic, self.accum_updates, self.cells)


TRUE = Sum(False, ())
FALSE = Sum(True, ())

FLOAT_R, INT_R, TYPE_R, REF_R, ARROW_R = "Float", "Int", "Type", "Ref", "Arrow"


def materialize(v):
    """A deep copy with every view forced into a table."""
    t = type(v)
    if t is Table or t is ViewVal:
        return Table(v.desc, [materialize(x) for x in v.elems])
    if t is tuple:
        return tuple(materialize(x) for x in v)
    if t is Sum:
        return Sum(v.is_left, materialize(v.payload))
    return v


def vadd(a, b):
    ta = type(a)
    if ta is float or ta is int:
        return a + b
    if ta is tuple:
        return tuple(vadd(x, y) for x, y in zip(a, b))
    if ta is Table or ta is ViewVal:
        return Table(a.desc, [vadd(x, y) for x, y in zip(a.elems, b.elems)])
    raise NonVSpaceResult(f"cannot add values of this kind: {a!r}")


def vadd_inplace(a, b):
    if type(a) is Table:
        elems = a.elems
        for k, y in enumerate(b.elems):
            elems[k] = vadd_inplace(elems[k], y)
        return a
    return vadd(a, b)


def zeros_like(v):
    t = type(v)
    if t is float:
        return 0.0
    if t is int:
        return 0
    if t is tuple:
        return tuple(zeros_like(x) for x in v)
    if t is Table or t is ViewVal:
        return Table(v.desc, [zeros_like(x) for x in v.elems])
    raise NonVSpaceResult(f"no zero for {v!r}")


def zeros(rep):
    if rep == FLOAT_R:
        return 0.0
    if rep == INT_R:
        return 0
    if rep is UNIT_SET or type(rep).__name__ == "UnitSet":
        return ()
    if isinstance(rep, PairSet):
        return (zeros(rep.left), zeros(rep.right))
    if isinstance(rep, tuple):
        if rep[0] == "Pair":
            return (zeros(rep[1]), zeros(rep[2]))
        if rep[0] == "Arr":
            return Table(rep[1], [zeros(rep[2]) for _ in range(rep[1].size)])
    raise NonVSpaceResult(f"type has no vector-space zero: {rep!r}")


# ---------------------------------------------------------------------------
# types at runtime


def type_rep(ty, env):
    match ty:
        case ir.Meta() if ty.solution is not None:
            return type_rep(ty.solution, env)
        case ir.BaseType("Float"):
            return FLOAT_R
        case ir.BaseType("Int"):
            return INT_R
        case ir.BaseType("Unit"):
            return UNIT_SET
        case ir.BaseType(_):
            return TYPE_R
        case ir.FinType(size):
            n = size.val if isinstance(size, ir.Lit) else env[size.name]
            return FinSet(n)
        case ir.PairType(a, b):
            ra, rb = type_rep(a, env), type_rep(b, env)
            if isinstance(ra, IndexSet) and isinstance(rb, IndexSet):
                return PairSet(ra, rb)
            return ("Pair", ra, rb)
        case ir.EitherType(a, b):
            ra, rb = type_rep(a, env), type_rep(b, env)
            if isinstance(ra, IndexSet) and isinstance(rb, IndexSet):
                return EitherSet(ra, rb)
            return ("Either", ra, rb)
        case ir.ArrayType(d, c):
            return ("Arr", type_rep(d, env), type_rep(c, env))
        case ir.RefType():
            return REF_R
        case ir.ArrowType():
            return ARROW_R
        case ir.Var(name):
            return env[name]
    raise InternalError(f"not a type: {ty!r}")


# ---------------------------------------------------------------------------
# compilation


def _bool(b):
    return TRUE if b else FALSE


def _recip(x):
    if x == 0:
        return math.copysign(math.inf, x) if isinstance(x, float) else math.inf
    return 1.0 / x


class Interpreter:
    def __init__(self, chunks: int = 1):
        if chunks < 1:
            raise ValueError("chunks must be at least 1")
        self.chunks = chunks
        self.work = WorkCount()
        self.accum_cells: list = []  # active accumulator cells, innermost last
        self.redirect: dict = {}  # accumulator cell -> private chunk cell
        self.in_parallel = False

    # -- entry points ------------------------------------------------------
    def run(self, e: ir.Expr, env: dict | None = None):
        return self.compile_expr(e)(dict(env or {}))

    # -- values ------------------------------------------------------------
    def compile_value(self, v):
        match v:
            case ir.Var(name):
                return lambda env: env[name]
            case ir.Lit("Unit", _):
                return lambda env: ()
            case ir.Lit(_, val):
                return lambda env: val
            case ir.FinLit(k, _):
                return lambda env: k
            case ir.Pair(a, b):
                fa, fb = self.compile_value(a), self.compile_value(b)
                return lambda env: (fa(env), fb(env))
            case ir.InjLeft(_, p):
                fp = self.compile_value(p)
                return lambda env: Sum(True, fp(env))
            case ir.InjRight(_, p):
                fp = self.compile_value(p)
                return lambda env: Sum(False, fp(env))
            case ir.ValueCase(s, f, g):
                fs, ff, fg = self.compile_value(s), self.compile_value(f), self.compile_value(g)

                def vcase(env):
                    sv = fs(env)
                    return (ff if sv.is_left else fg)(env)(sv.payload)
                return vcase
            case ir.Lam(b, _, body):
                return self._closure(v, b, body)
            case ir.View(b, annot, body):
                mk = self._closure(v, b, body)
                ft = self.compile_type(annot)
                return lambda env: ViewVal(ft(env), mk(env))
            case ir.Meta():
                if v.solution is not None:
                    return self.compile_value(v.solution)
                raise InternalError("unsolved type hole reached the evaluator")
            case (ir.BaseType() | ir.FinType() | ir.PairType() | ir.EitherType() | ir.ArrayType()
                  | ir.RefType() | ir.ArrowType()):
                return self.compile_type(v)
        raise InternalError(f"cannot evaluate value {v!r}")

    def compile_type(self, ty):
        if not ir.free_vars(ty):
            rep = type_rep(ty, {})
            return lambda env: rep
        return lambda env: type_rep(ty, env)

    def _closure(self, node, b: Name, body):
        fvs = tuple(ir.free_vars(node))
        fbody = self.compile_expr(body)

        def make(env):
            captured = {n: env[n] for n in fvs}

            def f(x):
                frame = dict(captured)
                frame[b] = x
                return fbody(frame)
            return f
        return make

    # -- expressions -------------------------------------------------------
    def compile_expr(self, e):
        if isinstance(e, ir.Let):
            return self._compile_block(e)
        f = self._compile_expr(e)
        work = self.work

        def counted(env):
            work.nodes += 1
            return f(env)
        return counted

    def _compile_block(self, e):
        steps = []
        while isinstance(e, ir.Let):
            steps.append((e.binder, self._compile_expr(e.bound)))
            e = e.body
        steps = tuple(steps)
        final = self._compile_expr(e)
        work = self.work
        n = len(steps) + 1

        def block(env):
            work.nodes += n
            for name, f in steps:
                env[name] = f(env)
            return final(env)
        return block

    def _compile_expr(self, e):
        work = self.work
        match e:
            case ir.Ret(v):
                return self.compile_value(v)
            case ir.Let():
                return self._compile_block(e)
            case ir.App(f, x):
                ff, fx = self.compile_value(f), self.compile_value(x)
                return lambda env: ff(env)(fx(env))
            case ir.Index(a, i):
                fa, fi = self.compile_value(a), self.compile_value(i)

                def index(env):
                    arr = fa(env)
                    if type(arr) is Table:
                        if type(arr.desc) is FinSet:
                            return arr.elems[fi(env)]
                        return arr.elems[arr.desc.ordinal(fi(env))]
                    return arr.fn(fi(env))
                return index
            case ir.For(b, annot, body):
                return self._compile_for(e, b, annot, body)
            case ir.Fst(v):
                fv = self.compile_value(v)
                return lambda env: fv(env)[0]
            case ir.Snd(v):
                fv = self.compile_value(v)
                return lambda env: fv(env)[1]
            case ir.Case(s, lb, lbody, rb, rbody):
                fs = self.compile_value(s)
                fl, fr = self.compile_expr(lbody), self.compile_expr(rbody)

                def case(env):
                    sv = fs(env)
                    if sv.is_left:
                        env[lb] = sv.payload
                        return fl(env)
                    env[rb] = sv.payload
                    return fr(env)
                return case
            case ir.Slice(r, i):
                fr, fi = self.compile_value(r), self.compile_value(i)

                def slice_(env):
                    ref = fr(env)
                    return RefVal(ref.cell, ref.path + (fi(env),))
                return slice_
            case ir.RunState(init, act):
                finit = self.compile_value(init)
                fbody = self.compile_expr(act.body)
                h, r = act.region, act.ref

                def run_state(env):
                    cell = Cell(materialize(finit(env)))
                    work.cells += 1
                    env[h] = REF_R
                    env[r] = RefVal(cell)
                    try:
                        ans = fbody(env)
                    finally:
                        cell.alive = False
                    return (ans, cell.value)
                return run_state
            case ir.RunAccum(act):
                ftype = self.compile_type(act.ref_annot)
                fbody = self.compile_expr(act.body)
                h, r = act.region, act.ref
                stack = self.accum_cells

                def run_accum(env):
                    cell = Cell(zeros(ftype(env)))
                    work.cells += 1
                    env[h] = REF_R
                    env[r] = RefVal(cell)
                    stack.append(cell)
                    try:
                        ans = fbody(env)
                    finally:
                        stack.pop()
                        cell.alive = False
                    return (ans, cell.value)
                return run_accum
            case ir.Get(r):
                fr = self.compile_value(r)

                def get(env):
                    ref = fr(env)
                    return materialize(_read(ref))
                return get
            case ir.Put(r, v):
                fr, fv = self.compile_value(r), self.compile_value(v)

                def put(env):
                    ref = fr(env)
                    _write(ref, materialize(fv(env)))
                    return ()
                return put
            case ir.Accumulate(r, v):
                fr, fv = self.compile_value(r), self.compile_value(v)
                redirect = self.redirect

                def accumulate(env):
                    ref = fr(env)
                    x = fv(env)
                    work.arithmetic += 1
                    work.accum_updates += 1
                    if redirect and ref.cell in redirect:
                        ref = RefVal(redirect[ref.cell], ref.path)
                    _accum(ref, x)
                    return ()
                return accumulate
            case ir.Add(a, b):
                fa, fb = self.compile_value(a), self.compile_value(b)

                def add(env):
                    work.arithmetic += 1
                    x = fa(env)
                    if type(x) is float or type(x) is int:
                        return x + fb(env)
                    return vadd(x, fb(env))
                return add
            case ir.Mul(a, b):
                fa, fb = self.compile_value(a), self.compile_value(b)

                def mul(env):
                    work.arithmetic += 1
                    return fa(env) * fb(env)
                return mul
            case ir.Prim(op, args):
                return self._compile_prim(op, [self.compile_value(a) for a in args])
            case ir.Linearize() | ir.Transpose():
                raise InternalError("linearize/transpose must be lowered by simplification before evaluation")
        raise InternalError(f"cannot evaluate expression {e!r}")

    def _compile_prim(self, op, fs):
        work = self.work
        match op:
            case "lt":
                a, b = fs
                return lambda env: _bool(a(env) < b(env))
            case "gt":
                a, b = fs
                return lambda env: _bool(a(env) > b(env))
            case "le":
                a, b = fs
                return lambda env: _bool(a(env) <= b(env))
            case "ge":
                a, b = fs
                return lambda env: _bool(a(env) >= b(env))
            case "eq":
                a, b = fs
                return lambda env: _bool(a(env) == b(env))
            case "sub":
                a, b = fs

                def sub(env):
                    work.arithmetic += 1
                    return a(env) - b(env)
                return sub
            case "neg":
                (a,) = fs

                def neg(env):
                    work.arithmetic += 1
                    return -a(env)
                return neg
            case "recip":
                (a,) = fs

                def recip(env):
                    work.arithmetic += 1
                    return _recip(a(env))
                return recip
            case "itof":
                (a,) = fs
                return lambda env: float(a(env))
            case "ordinal":
                t, i = fs
                return lambda env: t(env).ordinal(i(env))
            case "fromOrdinal":
                t, k = fs
                return lambda env: t(env).from_ordinal(k(env))
            case "size":
                (t,) = fs
                return lambda env: t(env).size
            case "reverse":
                t, i = fs
                return lambda env: t(env).reverse(i(env))
        raise InternalError(f"unknown primitive {op}")

    def _compile_for(self, e, b, annot, body):
        fdesc = self.compile_type(annot)
        fbody = self.compile_expr(body)
        eligible = parallel_eligible(e)

        def for_(env):
            desc = fdesc(env)
            if self.chunks > 1 and eligible and not self.in_parallel and desc.size > 1:
                return self._run_chunked(desc, b, fbody, env, self.chunks)
            out = []
            append = out.append
            for m in desc.enumerate():
                env[b] = m
                append(fbody(env))
            return Table(desc, out)
        return for_

    def _run_chunked(self, desc, b, fbody, env, chunks):
        members = desc.enumerate()
        n = len(members)
        chunks = min(chunks, n)
        bounds = [(k * n) // chunks for k in range(chunks + 1)]
        outer = [c for c in self.accum_cells if c.alive]
        partials = []
        out = []
        self.in_parallel = True
        try:
            for k in range(chunks):
                private = {c: Cell(zeros_like(c.value)) for c in outer}
                self.redirect.clear()
                self.redirect.update(private)
                frame = dict(env)
                for m in members[bounds[k]:bounds[k + 1]]:
                    frame[b] = m
                    out.append(fbody(frame))
                partials.append(private)
        finally:
            self.redirect.clear()
            self.in_parallel = False
        for private in partials:
            for c, p in private.items():
                c.value = vadd_inplace(c.value, p.value)
        return Table(desc, out)


# ---------------------------------------------------------------------------
# reference cells


def _check(ref: RefVal):
    if not ref.cell.alive:
        raise EscapedRef("reference used outside its handler")


def _read(ref: RefVal):
    _check(ref)
    v = ref.cell.value
    for m in ref.path:
        v = v.at(m)
    return v


def _write(ref: RefVal, new):
    _check(ref)
    if not ref.path:
        ref.cell.value = new
        return
    parent = ref.cell.value
    for m in ref.path[:-1]:
        parent = parent.at(m)
    parent.elems[parent.desc.ordinal(ref.path[-1])] = new


def _accum(ref: RefVal, x):
    _check(ref)
    if not ref.path:
        ref.cell.value = vadd_inplace(ref.cell.value, x)
        return
    parent = ref.cell.value
    for m in ref.path[:-1]:
        parent = parent.at(m)
    k = parent.desc.ordinal(ref.path[-1])
    parent.elems[k] = vadd_inplace(parent.elems[k], x)


# ---------------------------------------------------------------------------
# parallel eligibility


def state_uses(e) -> list:
    """``Get``/``Put`` nodes in ``e`` whose reference is not allocated inside ``e``."""
    local: set = set()
    found = []

    def go(t):
        match t:
            case ir.Action(_, r, _, body):
                local.add(r)
                go(body)
                return
            case ir.Let(x, _, ir.Slice(ir.Var(r), _), _) if r in local:
                local.add(x)
            case ir.Get(ir.Var(r)) | ir.Put(ir.Var(r), _) if r not in local:
                found.append(t)
        for c in ir.children(t):
            go(c)

    go(e)
    return found


def has_application(e) -> bool:
    return any(isinstance(t, ir.App) for t in ir.walk(e))


def parallel_eligible(loop) -> bool:
    return isinstance(loop, ir.For) and not state_uses(loop.body) and not has_application(loop.body)


def check_parallel_loop(loop):
    """Static check for chunked evaluation: the body may not touch outside state."""
    if not isinstance(loop, ir.For):
        raise InternalError("parallel evaluation needs a for loop")
    uses = state_uses(loop.body)
    if uses:
        raise StateInParallel("loop uses State effects from outside its body and must run sequentially")
    if has_application(loop.body):
        raise StateInParallel("loop applies a function whose effects are not known statically")


# ---------------------------------------------------------------------------
# public API


def evaluate(e: ir.Expr, env: dict | None = None, chunks: int = 1, work: WorkCount | None = None):
    interp = Interpreter(chunks)
    if work is not None:
        interp.work = work
    if any(isinstance(t, (ir.Linearize, ir.Transpose)) for t in ir.walk(e)):
        # differentiation is a source transformation, so lower it first
        from .simplify import lower

        e = lower(e)
    return interp.run(e, env)


def count_work(e: ir.Expr, env: dict | None = None) -> WorkCount:
    work = WorkCount()
    evaluate(e, env, work=work)
    return work


def eval_parallel_for(loop: ir.Expr, env: dict | None = None, chunks: int = 1):
    """Evaluate a single ``for`` loop in ``chunks`` contiguous chunks."""
    check_parallel_loop(loop)
    interp = Interpreter(chunks)
    return interp.run(loop, env)


# ---------------------------------------------------------------------------
# conversion and display


def to_python(v):
    """Plain nested lists/tuples for tests and JSON output."""
    t = type(v)
    if t is Table or t is ViewVal:
        return [to_python(x) for x in v.elems]
    if t is tuple:
        return tuple(to_python(x) for x in v)
    if t is Sum:
        return {"Left" if v.is_left else "Right": to_python(v.payload)}
    return v


def from_python(v, rep):
    """Runtime value of type ``rep`` from nested Python lists/tuples."""
    if isinstance(rep, tuple) and rep[0] == "Arr":
        return Table(rep[1], [from_python(x, rep[2]) for x in v])
    if isinstance(rep, tuple) and rep[0] == "Pair":
        return (from_python(v[0], rep[1]), from_python(v[1], rep[2]))
    if rep == FLOAT_R:
        return float(v)
    return v


def format_value(v) -> str:
    t = type(v)
    if t is float:
        return f"{v:.6g}"
    if t is bool:
        return str(v)
    if t is int:
        return str(v)
    if t is Table or t is ViewVal:
        return "[" + ", ".join(format_value(x) for x in v.elems) + "]"
    if t is tuple:
        if not v:
            return "()"
        return "(" + ", ".join(format_value(x) for x in v) + ")"
    if t is Sum:
        if v.payload == ():
            return "True" if not v.is_left else "False"
        return f"({'Left' if v.is_left else 'Right'} {format_value(v.payload)})"
    if callable(v):
        return "<function>"
    if isinstance(v, RefVal):
        return "<ref>"
    return str(v)


def to_json(v) -> str:
    def conv(x):
        x = to_python(x)
        if isinstance(x, tuple):
            return [conv(y) for y in x]
        if isinstance(x, list):
            return [conv(y) for y in x]
        if isinstance(x, dict):
            return {k: conv(y) for k, y in x.items()}
        return x
    return json.dumps(conv(v))
