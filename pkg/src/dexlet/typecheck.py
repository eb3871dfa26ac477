"""Typing judgements for values and expressions, plus the constraint judgements.

The checker runs in one of two modes.  In *infer* mode unsolved ``Meta`` holes
(left by the surface language for omitted annotations) are solved by
unification and constraint checks on still-unknown types are skipped.  The
pipeline then zonks the program and runs the *strict* mode, which is the
judgement proper.
"""

from __future__ import annotations

from . import core_ir as ir
from .core_ir import (ArrayType, ArrowType, BaseType, Effect, EffectRow, EitherType, FinType,
                      Lit, Meta, PairType, RefType, Var)
from .errors import (ConstraintError, DexError, DexTypeError, EffectError, UnannotatedBinder,
                     UnboundVariable)
from .index_sets import is_index_set
from .printer import show_value

TYPE = ir.TYPE


# ---------------------------------------------------------------------------
# constraints

def _prune(t):
    while isinstance(t, Meta) and t.solution is not None:
        t = t.solution
    return t


def check_constraint(kind: str, ty) -> bool:
    ty = _prune(ty)
    if kind == "IdxSet":
        return is_index_set(ty)
    if kind == "Data":
        match ty:
            case BaseType("Unit" | "Int" | "Float") | FinType(_):
                return True
            case ArrayType(_, cod):
                return check_constraint("Data", cod)
            case PairType(a, b) | EitherType(a, b):
                return check_constraint("Data", a) and check_constraint("Data", b)
        return False
    if kind == "VSpace":
        match ty:
            # Unit is admitted because it is the tangent space of Int
            case BaseType("Float" | "Unit"):
                return True
            case PairType(a, b):
                return check_constraint("VSpace", a) and check_constraint("VSpace", b)
            case ArrayType(_, cod):
                return check_constraint("VSpace", cod)
        return False
    raise ValueError(kind)


# ---------------------------------------------------------------------------
# capabilities

class Capability:
    """The effects an expression may perform.

    ``entries`` are the effects granted at this level; requests not found here
    go to ``parent``.  An *inferring* capability (a lambda body) grants any
    request and records it; a *lenient* one grants everything silently.
    """

    def __init__(self, entries=(), parent=None, inferring=False, lenient=False):
        self.entries = tuple(entries)
        self.parent = parent
        self.inferring = inferring
        self.lenient = lenient
        self.used: list = []

    @property
    def row(self) -> EffectRow:
        return EffectRow(self.entries)

    def require(self, kind: str, region) -> None:
        for e in self.entries:
            if e.kind == kind and ir.alpha_eq(e.region, region):
                return
        if self.parent is not None:
            self.parent.require(kind, region)
            return
        if self.lenient:
            return
        if self.inferring:
            if not any(e.kind == kind and ir.alpha_eq(e.region, region) for e in self.used):
                self.used.append(Effect(kind, region))
            return
        raise EffectError(f"effect {kind} {show_value(region)} is not available here"
                          + ("" if self.entries else " (expression must be pure)"))

    def inferred_row(self) -> EffectRow:
        return EffectRow(tuple(sorted(self.used, key=lambda e: (e.kind, show_value(e.region)))))


PURE_CAP = Capability()


# ---------------------------------------------------------------------------
# checker

class Checker:
    def __init__(self, infer: bool = False, spans: dict | None = None):
        self.infer = infer
        self.spans = spans or {}

    # -- helpers -----------------------------------------------------------
    def _locate(self, err: DexError, node) -> None:
        if err.loc is None and id(node) in self.spans:
            err.loc = self.spans[id(node)]

    def unify(self, expected, found, what: str = "") -> None:
        if ir.alpha_eq(expected, found, self._solve if self.infer else None):
            return
        where = f" in {what}" if what else ""
        raise DexTypeError(f"type mismatch{where}: expected {show_value(ir.zonk(expected))},"
                           f" found {show_value(ir.zonk(found))}")

    def _solve(self, m: Meta, t) -> bool:
        if t is ir._Unsolvable:
            return False
        t = _prune(t)
        if t is m:
            return True
        if _occurs(m, t):
            return False
        m.solution = t
        return True

    def constraint(self, kind: str, ty) -> None:
        if self.infer and ir.has_meta(ty):
            return
        if not check_constraint(kind, ty):
            raise ConstraintError(kind, ir.zonk(ty))

    def check_type(self, env, t) -> None:
        if isinstance(_prune(t), Meta):
            return
        self.unify(TYPE, self.value(env, t), "type annotation")

    def _as(self, ty, cls, make, what):
        ty = _prune(ty)
        if isinstance(ty, cls):
            return ty
        if isinstance(ty, Meta) and self.infer and make is not None:
            new = make()
            ty.solution = new
            return new
        raise DexTypeError(f"{what}: expected {cls.__name__.replace('Type', '').lower()} type,"
                           f" found {show_value(ir.zonk(ty))}")

    def _region_of(self, env, ref):
        t = self._as(self.value(env, ref), RefType, lambda: RefType(Meta("h"), Meta()), "reference")
        return t

    # -- values ------------------------------------------------------------
    def value(self, env: dict, v) -> ir.Value:
        try:
            return self._value(env, v)
        except DexError as err:
            self._locate(err, v)
            raise

    def _value(self, env, v):
        match v:
            case Var(name):
                if name not in env:
                    raise UnboundVariable(f"unbound variable {name.text}")
                return env[name]
            case Meta():
                if v.solution is not None:
                    return self.value(env, v.solution)
                return TYPE
            case Lit(kind, _):
                return BaseType(kind)
            case BaseType():
                return TYPE
            case FinType(size):
                self.unify(ir.INT_T, self.value(env, size), "Fin size")
                return TYPE
            case ArrowType(b, dom, eff, cod):
                self.check_type(env, dom)
                env2 = {**env, b: dom}
                for e in eff.entries:
                    self.unify(TYPE, self.value(env2, e.region), "effect region")
                self.check_type(env2, cod)
                return TYPE
            case ArrayType(dom, cod):
                self.check_type(env, dom)
                self.constraint("IdxSet", dom)
                self.check_type(env, cod)
                return TYPE
            case PairType(a, b) | EitherType(a, b):
                self.check_type(env, a)
                self.check_type(env, b)
                return TYPE
            case RefType(h, a):
                self.unify(TYPE, self.value(env, h), "reference region")
                self.check_type(env, a)
                return TYPE
            case ir.Lam(b, annot, body):
                self.check_type(env, annot)
                cap = Capability(inferring=True)
                cod = self.expr(cap, {**env, b: annot}, body)
                return ArrowType(b, annot, cap.inferred_row(), cod)
            case ir.View(b, annot, body):
                self.check_type(env, annot)
                self.constraint("IdxSet", annot)
                cod = self.expr(PURE_CAP, {**env, b: annot}, body)
                if b in ir.free_vars(cod):
                    raise DexTypeError("the element type of a view may not depend on its index")
                return ArrayType(annot, cod)
            case ir.Pair(a, b):
                return PairType(self.value(env, a), self.value(env, b))
            case ir.InjLeft(other, x):
                self.check_type(env, other)
                return EitherType(self.value(env, x), other)
            case ir.InjRight(other, x):
                self.check_type(env, other)
                return EitherType(other, self.value(env, x))
            case ir.ValueCase(s, f, g):
                ts = self._as(self.value(env, s), EitherType, lambda: EitherType(Meta(), Meta()), "case scrutinee")
                tf = self._as(self.value(env, f), ArrowType, None, "case branch")
                tg = self._as(self.value(env, g), ArrowType, None, "case branch")
                self.unify(tf.dom, ts.left, "left branch")
                self.unify(tg.dom, ts.right, "right branch")
                if tf.effects.entries or tg.effects.entries:
                    raise EffectError("value-case branches must be pure")
                if tf.binder in ir.free_vars(tf.cod) or tg.binder in ir.free_vars(tg.cod):
                    raise DexTypeError("value-case result type may not depend on the payload")
                self.unify(tf.cod, tg.cod, "case branches")
                return tf.cod
            case ir.FinLit(_, size):
                self.unify(ir.INT_T, self.value(env, size), "Fin literal size")
                return FinType(size)
        raise DexTypeError(f"not a value: {v!r}")

    # -- expressions -------------------------------------------------------
    def expr(self, cap: Capability, env: dict, e) -> ir.Value:
        try:
            return self._expr(cap, env, e)
        except DexError as err:
            self._locate(err, e)
            raise

    def _pre_annotate(self, env, fn, arg_ty) -> None:
        """Solve an unannotated lambda binder from the argument it is given."""
        if self.infer and isinstance(fn, ir.Lam) and isinstance(_prune(fn.annot), Meta):
            self.unify(fn.annot, arg_ty, "argument")

    def _expr(self, cap, env, e):
        match e:
            case ir.Ret(v):
                return self.value(env, v)
            case ir.Let(b, annot, bound, body):
                t1 = self.expr(cap, env, bound)
                if annot is not None:
                    self.check_type(env, annot)
                    self.unify(annot, t1, f"binding of {b.text}")
                    t1 = annot
                t2 = self.expr(cap, {**env, b: t1}, body)
                if b in ir.free_vars(t2):
                    if isinstance(bound, ir.Ret):
                        return ir.subst(t2, b, bound.val)
                    raise DexTypeError(f"result type mentions the local {b.text}, which goes out of scope")
                return t2
            case ir.App(f, x):
                tx = self.value(env, x)
                self._pre_annotate(env, f, tx)
                tf = self._as(self.value(env, f), ArrowType, None, "application")
                self.unify(tf.dom, tx, "argument")
                for eff in tf.effects.entries:
                    cap.require(eff.kind, ir.subst(eff.region, tf.binder, x))
                return ir.subst(tf.cod, tf.binder, x)
            case ir.Index(a, i):
                ti = self.value(env, i)
                ta = self._as(self.value(env, a), ArrayType, lambda: ArrayType(ti, Meta()), "indexing")
                self.unify(ta.dom, ti, "index")
                return ta.cod
            case ir.For(b, annot, body):
                self.check_type(env, annot)
                cod = self.expr(cap, {**env, b: annot}, body)
                self.constraint("IdxSet", annot)
                if b in ir.free_vars(cod):
                    raise DexTypeError("the element type of a table may not depend on its index")
                return ArrayType(annot, cod)
            case ir.Fst(v):
                return self._as(self.value(env, v), PairType, lambda: PairType(Meta(), Meta()), "fst").left
            case ir.Snd(v):
                return self._as(self.value(env, v), PairType, lambda: PairType(Meta(), Meta()), "snd").right
            case ir.Case(s, lb, lbody, rb, rbody):
                ts = self._as(self.value(env, s), EitherType, lambda: EitherType(Meta(), Meta()), "case")
                t1 = self.expr(cap, {**env, lb: ts.left}, lbody)
                t2 = self.expr(cap, {**env, rb: ts.right}, rbody)
                if lb in ir.free_vars(t1) or rb in ir.free_vars(t2):
                    raise DexTypeError("case result type may not depend on the payload")
                self.unify(t1, t2, "case branches")
                return t1
            case ir.Slice(r, i):
                ti = self.value(env, i)
                tr = self._region_of(env, r)
                pay = self._as(tr.payload, ArrayType, lambda: ArrayType(ti, Meta()), "reference slice")
                self.unify(pay.dom, ti, "slice index")
                return RefType(tr.region, pay.cod)
            case ir.RunState(init, act):
                t1 = self.value(env, init)
                self.unify(act.ref_annot, t1, "initial state")
                t2 = self._action(cap, env, act, "State")
                self.constraint("Data", act.ref_annot)
                return PairType(t2, act.ref_annot)
            case ir.RunAccum(act):
                t2 = self._action(cap, env, act, "Accum")
                self.constraint("VSpace", act.ref_annot)
                return PairType(t2, act.ref_annot)
            case ir.Get(r):
                tr = self._region_of(env, r)
                cap.require("State", tr.region)
                return tr.payload
            case ir.Put(r, v):
                tr = self._region_of(env, r)
                cap.require("State", tr.region)
                self.unify(tr.payload, self.value(env, v), "put")
                return ir.UNIT_T
            case ir.Accumulate(r, v):
                tr = self._region_of(env, r)
                cap.require("Accum", tr.region)
                self.unify(tr.payload, self.value(env, v), "accumulation")
                return ir.UNIT_T
            case ir.Add(a, b):
                ta = self.value(env, a)
                self.unify(ta, self.value(env, b), "addition")
                if not (self.infer and ir.has_meta(ta)):
                    if not (ir.alpha_eq(ta, ir.INT_T) or check_constraint("VSpace", ta)):
                        raise ConstraintError("VSpace", ir.zonk(ta))
                return ta
            case ir.Mul(a, b):
                ta = self.value(env, a)
                self.unify(ta, self.value(env, b), "multiplication")
                self._scalar(ta, "multiplication")
                return ta
            case ir.Linearize(f, x):
                tx = self.value(env, x)
                self._pre_annotate(env, f, tx)
                tf = self._pure_arrow(env, f, "linearize")
                self.unify(tf.dom, tx, "linearization point")
                self.constraint("VSpace", tf.dom)
                self.constraint("VSpace", tf.cod)
                return PairType(tf.cod, ir.arrow(tf.dom, tf.cod))
            case ir.Transpose(f, ct):
                tf = self._pure_arrow(env, f, "transpose")
                self.unify(tf.cod, self.value(env, ct), "cotangent")
                self.constraint("VSpace", tf.dom)
                self.constraint("VSpace", tf.cod)
                return tf.dom
            case ir.Prim(op, args):
                return self._prim(env, op, args)
        raise DexTypeError(f"not an expression: {e!r}")

    def _scalar(self, ty, what):
        if self.infer and ir.has_meta(ty):
            return
        if not (ir.alpha_eq(ty, ir.INT_T) or ir.alpha_eq(ty, ir.FLOAT_T)):
            raise DexTypeError(f"{what} needs Int or Float, found {show_value(ir.zonk(ty))}")

    def _pure_arrow(self, env, f, what):
        tf = self._as(self.value(env, f), ArrowType, None, what)
        if tf.effects.entries:
            raise EffectError(f"{what} needs a pure function")
        if tf.binder in ir.free_vars(tf.cod):
            raise DexTypeError(f"{what} needs a non-dependent function")
        return tf

    def _action(self, cap, env, act: ir.Action, kind: str):
        h, r = act.region, act.ref
        env_h = {**env, h: TYPE}
        self.check_type(env_h, act.ref_annot)
        env2 = {**env_h, r: RefType(Var(h), act.ref_annot)}
        inner = Capability((Effect(kind, Var(h)),), parent=cap)
        t2 = self.expr(inner, env2, act.body)
        if {h, r} & ir.free_vars(t2):
            raise EffectError("a reference or its region escapes its handler")
        return t2

    def _prim(self, env, op, args):
        tys = [self.value(env, a) for a in args]
        if op in ("lt", "gt", "le", "ge", "eq"):
            self.unify(tys[0], tys[1], op)
            self._scalar(tys[0], op)
            return ir.BOOL_T
        if op in ("sub", "neg"):
            if op == "sub":
                self.unify(tys[0], tys[1], op)
            self._scalar(tys[0], op)
            return tys[0]
        if op == "itof":
            self.unify(ir.INT_T, tys[0], op)
            return ir.FLOAT_T
        if op == "recip":
            self.unify(ir.FLOAT_T, tys[0], op)
            return ir.FLOAT_T
        if op in ("ordinal", "fromOrdinal", "size", "reverse"):
            self.check_type(env, args[0])
            self.constraint("IdxSet", args[0])
            if op == "size":
                return ir.INT_T
            if op == "fromOrdinal":
                self.unify(ir.INT_T, tys[1], op)
                return args[0]
            self.unify(args[0], tys[1], op)
            return ir.INT_T if op == "ordinal" else args[0]
        raise DexTypeError(f"unknown primitive {op}")


def _occurs(m, t) -> bool:
    if t is m:
        return True
    if isinstance(t, Meta):
        return t.solution is not None and _occurs(m, t.solution)
    if t is None:
        return False
    return any(_occurs(m, c) for c in ir.children(t))


# ---------------------------------------------------------------------------
# module-level API

def check_value(env: dict, v) -> ir.Value:
    return Checker().value(dict(env), v)


def check_expr(cap: Capability | EffectRow | None, env: dict, e) -> ir.Value:
    if cap is None:
        cap = PURE_CAP
    elif isinstance(cap, EffectRow):
        cap = Capability(cap.entries)
    return Checker().expr(cap, dict(env), e)


def type_of(env: dict, e) -> ir.Value:
    """Type of an expression with effects ignored (used by the passes)."""
    c = Checker()
    cap = Capability(lenient=True)
    if isinstance(e, ir.Value):
        return c.value(env, e)
    return c.expr(cap, env, e)


def elaborate(e, env: dict | None = None, spans: dict | None = None, cap=None):
    """Solve inference holes, then check strictly.  Returns (program, type)."""
    env = dict(env or {})
    cap = cap or PURE_CAP
    Checker(infer=True, spans=spans).expr(cap, env, e)

    def unsolved(m: Meta):
        raise UnannotatedBinder(f"cannot infer the type of {m.hint}; add an annotation", m.loc)

    e2 = ir.zonk(e, unsolved)
    if spans is not None:
        _carry_spans(e, e2, spans)
    ty = Checker(infer=False, spans=spans).expr(cap, env, e2)
    return e2, ty


def _carry_spans(old, new, spans):
    """Zonking rebuilds nodes; copy source spans over to the rebuilt tree."""
    stack = [(old, new)]
    while stack:
        a, b = stack.pop()
        if a is None or b is None or isinstance(a, Meta) or isinstance(b, Meta):
            continue
        if a is not b and id(a) in spans and id(b) not in spans:
            spans[id(b)] = spans[id(a)]
        if type(a) is type(b):
            stack.extend(zip(ir.children(a), ir.children(b)))


def check_program(e, env: dict | None = None):
    return Checker().expr(PURE_CAP, dict(env or {}), e)
