"""Linearization and transposition of first-order programs.

Both transformations consume simplified IR and emit core IR, which the
simplifier then lowers again.  ``linearize_reify`` packages a block as a pair of
its primal value and a tangent function of the chosen free variables;
``transpose_top`` turns a structurally linear function body into code that
accumulates the cotangent of its argument.

Tangents are tracked symbolically: a variable whose tangent is known to be zero
maps to ``None`` and zero values are only built when a tangent must be passed
somewhere concrete.
"""

from __future__ import annotations

from . import core_ir as ir
from .core_ir import (Action, Context, Let, Name, Pair, Ret, Var)
from .errors import InternalError, NonVSpaceResult, NotLinear, UnsupportedTangent
from .typecheck import type_of

# ---------------------------------------------------------------------------
# tangent types and zeros


def _prune(t):
    while isinstance(t, ir.Meta) and t.solution is not None:
        t = t.solution
    return t


def tangent_type(ty) -> ir.Value:
    ty = _prune(ty)
    match ty:
        case ir.BaseType("Float"):
            return ir.FLOAT_T
        case ir.BaseType("Int") | ir.BaseType("Unit") | ir.FinType():
            return ir.UNIT_T
        case ir.BaseType("Type"):
            return ir.TYPE
        case ir.ArrayType(d, c):
            return ir.ArrayType(d, tangent_type(c))
        case ir.PairType(a, b):
            return ir.PairType(tangent_type(a), tangent_type(b))
        case ir.EitherType():
            raise UnsupportedTangent(f"sum types have no tangent type: {_show(ty)}")
        case ir.RefType(h, a):
            return ir.RefType(h, tangent_type(a))
    raise NonVSpaceResult(f"no tangent type for {_show(ty)}")


def trivial_tangent(ty) -> bool:
    """True when every tangent of ``ty`` is Unit-like (no Float inside)."""
    ty = _prune(ty)
    match ty:
        case ir.BaseType("Float"):
            return False
        case ir.ArrayType(_, c):
            return trivial_tangent(c)
        case ir.PairType(a, b) | ir.EitherType(a, b):
            return trivial_tangent(a) and trivial_tangent(b)
        case ir.RefType(_, a):
            return trivial_tangent(a)
    return True


def zero_value(ty) -> ir.Value:
    """The additive identity of a vector-space type, as a core value."""
    ty = _prune(ty)
    match ty:
        case ir.BaseType("Float"):
            return ir.float_lit(0.0)
        case ir.BaseType("Unit"):
            return ir.UNIT
        case ir.PairType(a, b):
            return Pair(zero_value(a), zero_value(b))
        case ir.ArrayType(d, c):
            j = ir.fresh("z")
            return ir.View(j, d, Ret(zero_value(c)))
        case ir.EitherType():
            raise UnsupportedTangent(f"sum types have no zero: {_show(ty)}")
    raise NonVSpaceResult(f"type is not a vector space: {_show(ty)}")


def _show(t) -> str:
    from .printer import show_value

    return show_value(t)


def _apps(f: ir.Value, args: list, lets: list) -> ir.Expr:
    """``f a1 ... an`` as a let chain; a Unit argument when ``args`` is empty."""
    if not args:
        return ir.App(f, ir.UNIT)
    cur = f
    for a in args[:-1]:
        g = ir.fresh("ap")
        lets.append((g, None, ir.App(cur, a)))
        cur = Var(g)
    return ir.App(cur, args[-1])


# ---------------------------------------------------------------------------
# linearization


class Linearizer:
    def __init__(self, types: dict):
        self.types = dict(types)

    def type_of_value(self, v):
        if isinstance(v, Var) and self.types.get(v.name) is not None:
            return self.types[v.name]
        return type_of(self.types, Ret(v))

    def tan_type(self, ty, delta):
        """Tangent type with region variables renamed to their tangent regions."""
        tt = tangent_type(ty)
        m = {n: delta[n] for n in ir.free_vars(tt) if delta.get(n) is not None}
        return ir.subst_map(tt, m) if m else tt

    def mat(self, t, ty, delta):
        return t if t is not None else zero_value(self.tan_type(ty, delta))

    # -- values ------------------------------------------------------------
    def dv(self, v, delta):
        """The tangent of value ``v``, or None when it is zero."""
        match v:
            case Var(n):
                return delta.get(n)
            case Pair(a, b):
                ta, tb = self.dv(a, delta), self.dv(b, delta)
                if ta is None and tb is None:
                    return None
                return Pair(self.mat(ta, self.type_of_value(a), delta),
                            self.mat(tb, self.type_of_value(b), delta))
            case ir.View(j, annot, body):
                self.types[j] = annot
                ctx, _, et = self.block(dict(delta), body)
                if et is None:
                    return None
                return ir.View(j, annot, ctx.fill(et))
            case ir.InjLeft(_, p) | ir.InjRight(_, p):
                if self.dv(p, delta) is None:
                    return None
                raise UnsupportedTangent("cannot differentiate through a sum-typed value")
            case ir.Lam() | ir.ValueCase():
                raise InternalError("linearization expects first-order IR")
        return None

    # -- blocks ------------------------------------------------------------
    def block(self, delta: dict, b) -> tuple:
        """Returns (primal context, primal expr, tangent expr or None)."""
        prim: list = []
        tan: list = []
        while isinstance(b, Let):
            ty = b.annot if b.annot is not None else type_of(self.types, b.bound)
            e_ctx, ep, et = self.expr(delta, b.bound)
            prim.extend(e_ctx)
            prim.append((b.binder, ty, ep))
            self.types[b.binder] = ty
            if et is None:
                delta[b.binder] = None
            else:
                t = ir.fresh("d" + b.binder.text)
                tan.append((t, None, et))
                delta[b.binder] = Var(t)
            b = b.body
        e_ctx, ep, et = self.expr(delta, b)
        prim.extend(e_ctx)
        if et is None and tan:
            et = Ret(self.mat(None, type_of(self.types, b), delta))
        if et is not None:
            et = Context(tuple(tan)).fill(et)
        return Context(tuple(prim)), ep, et

    def reify(self, delta: dict, xs: list, b) -> ir.Expr:
        """``E[(primal, \\t1 ... tn. tangent)]`` for tangents of ``xs``."""
        ts = [ir.fresh("t" + x.text) for x in xs]
        inner = {x: Var(t) for x, t in zip(xs, ts)}
        param_types = [self.tan_type(self.types[x], {**delta, **inner}) for x in xs]
        ctx, ep, et = self.block(inner, b)
        p = ir.fresh("prim")
        res_ty = type_of(self.types, ctx.fill(ep)) if et is None else None
        body = et if et is not None else Ret(zero_value(self.tan_type(res_ty, inner)))
        if not ts:
            lam = ir.Lam(ir.fresh("u"), ir.UNIT_T, body)
        else:
            lam = None
            for t, pt in reversed(list(zip(ts, param_types))):
                lam = ir.Lam(t, pt, body if lam is None else Ret(lam))
        return ctx.fill(Let(p, None, ep, Ret(Pair(Var(p), lam))))

    def _tangent_inputs(self, delta, *terms, exclude=()) -> list:
        fv = set()
        for t in terms:
            fv |= ir.free_vars(t)
        fv -= set(exclude)
        return sorted((n for n in fv if delta.get(n) is not None), key=lambda n: n.uid)

    # -- expressions -------------------------------------------------------
    def expr(self, delta, e) -> tuple:
        none: list = []
        dv = lambda v: self.dv(v, delta)  # noqa: E731
        match e:
            case Ret(v):
                t = dv(v)
                return none, e, (Ret(t) if t is not None else None)
            case ir.Add(a, b):
                ta, tb = dv(a), dv(b)
                if ta is None and tb is None:
                    return none, e, None
                if ta is None or tb is None:
                    return none, e, Ret(ta if tb is None else tb)
                return none, e, ir.Add(ta, tb)
            case ir.Mul(a, b):
                ta, tb = dv(a), dv(b)
                if ta is None and tb is None:
                    return none, e, None
                if ta is None:
                    return none, e, ir.Mul(a, tb)
                if tb is None:
                    return none, e, ir.Mul(ta, b)
                u1, u2 = ir.fresh("u"), ir.fresh("u")
                et = Let(u1, None, ir.Mul(a, tb), Let(u2, None, ir.Mul(ta, b), ir.Add(Var(u1), Var(u2))))
                return none, e, et
            case ir.Prim("sub", (a, b)):
                ta, tb = dv(a), dv(b)
                if ta is None and tb is None:
                    return none, e, None
                if tb is None:
                    return none, e, Ret(ta)
                if ta is None:
                    return none, e, ir.Prim("neg", (tb,))
                return none, e, ir.Prim("sub", (ta, tb))
            case ir.Prim("neg", (a,)):
                ta = dv(a)
                return none, e, (ir.Prim("neg", (ta,)) if ta is not None else None)
            case ir.Prim("recip", (a,)):
                ta = dv(a)
                if ta is None:
                    return none, e, None
                r = ir.fresh("rcp")
                self.types[r] = ir.FLOAT_T
                r2, m = ir.fresh("u"), ir.fresh("u")
                et = Let(r2, None, ir.Mul(Var(r), Var(r)),
                         Let(m, None, ir.Mul(ta, Var(r2)), ir.Prim("neg", (Var(m),))))
                return [(r, ir.FLOAT_T, e)], Ret(Var(r)), et
            case ir.Prim():
                return none, e, None
            case ir.Index(a, i):
                ta = dv(a)
                return none, e, (ir.Index(ta, i) if ta is not None else None)
            case ir.Fst(v) | ir.Snd(v):
                t = dv(v)
                if t is None:
                    return none, e, None
                if isinstance(t, Pair):
                    return none, e, Ret(t.left if isinstance(e, ir.Fst) else t.right)
                return none, e, type(e)(t)
            case ir.Slice(r, i):
                tr = dv(r)
                return none, e, (ir.Slice(tr, i) if tr is not None else None)
            case ir.Get(r):
                tr = dv(r)
                return none, e, (ir.Get(tr) if tr is not None else None)
            case ir.Put(r, v):
                tr = dv(r)
                if tr is None:
                    return none, e, None
                return none, e, ir.Put(tr, self.mat(dv(v), self.type_of_value(v), delta))
            case ir.Accumulate(r, v):
                tr = dv(r)
                if tr is None:
                    return none, e, None
                return none, e, ir.Accumulate(tr, self.mat(dv(v), self.type_of_value(v), delta))
            case ir.For(i, annot, body):
                return self.lin_for(delta, e, i, annot, body)
            case ir.RunState(init, act):
                return self.lin_handler(delta, e, init, act)
            case ir.RunAccum(act):
                return self.lin_handler(delta, e, None, act)
            case ir.Case(s, lb, lbody, rb, rbody):
                return self.lin_case(delta, e, s, lb, lbody, rb, rbody)
        raise InternalError(f"cannot linearize {type(e).__name__}; simplify the program first")

    def lin_for(self, delta, e, i, annot, body):
        xs = self._tangent_inputs(delta, body, exclude=(i,))
        if not xs:
            return [], e, None
        self.types[i] = annot
        delta[i] = None
        reified = self.reify(delta, xs, body)
        x = ir.fresh("lin")
        j, k = ir.fresh("j"), ir.fresh("j")
        a, a2, f = ir.fresh("p"), ir.fresh("p"), ir.fresh("f")
        ep = Ret(ir.View(j, annot, Let(a, None, ir.Index(Var(x), Var(j)), ir.Fst(Var(a)))))
        lets = [(a2, None, ir.Index(Var(x), Var(k))), (f, None, ir.Snd(Var(a2)))]
        call = _apps(Var(f), [delta[n] for n in xs], lets)
        et = ir.For(k, annot, Context(tuple(lets)).fill(call))
        return [(x, None, ir.For(i, annot, reified))], ep, et

    def lin_handler(self, delta, e, init, act: Action):
        h, r, annot, body = act.region, act.ref, act.ref_annot, act.body
        state = init is not None
        t_init = self.dv(init, delta) if state else None
        xs = self._tangent_inputs(delta, body, exclude=(h, r))
        if not xs and t_init is None:
            return [], e, None
        self.types[h] = ir.TYPE
        self.types[r] = ir.RefType(Var(h), annot)
        tan_annot = tangent_type(annot)
        reified = self.reify(delta, [h, r] + xs, body)
        p, pa, x_ans, x_lin, x_s = (ir.fresh(s) for s in ("run", "pa", "ans", "lin", "s"))
        new_act = Action(h, r, annot, reified)
        prim_e = ir.RunState(init, new_act) if state else ir.RunAccum(new_act)
        ctx = [(p, None, prim_e), (pa, None, ir.Fst(Var(p))), (x_ans, None, ir.Fst(Var(pa))),
               (x_lin, None, ir.Snd(Var(pa))), (x_s, None, ir.Snd(Var(p)))]
        h2, r2 = ir.fresh("h"), ir.fresh("r")
        lets: list = []
        call = _apps(Var(x_lin), [Var(h2), Var(r2)] + [delta[n] for n in xs], lets)
        t_act = Action(h2, r2, tan_annot, Context(tuple(lets)).fill(call))
        if state:
            et = ir.RunState(self.mat(t_init, self.type_of_value(init), delta), t_act)
        else:
            et = ir.RunAccum(t_act)
        return ctx, Ret(Pair(Var(x_ans), Var(x_s))), et

    def lin_case(self, delta, e, s, lb, lbody, rb, rbody):
        xs = self._tangent_inputs(delta, lbody, rbody, exclude=(lb, rb))
        if not xs:
            return [], e, None
        st = _prune(self.type_of_value(s))
        if not isinstance(st, ir.EitherType):
            raise InternalError("case scrutinee is not a sum")
        for payload in (st.left, st.right):
            if not trivial_tangent(payload):
                raise UnsupportedTangent("cannot differentiate through the payload of a sum type")
        self.types[lb], self.types[rb] = st.left, st.right
        delta[lb] = delta[rb] = None
        e1 = self.reify(delta, xs, lbody)
        e2 = self.reify(delta, xs, rbody)
        z, f = ir.fresh("br"), ir.fresh("f")
        lets = [(f, None, ir.Snd(Var(z)))]
        call = _apps(Var(f), [delta[n] for n in xs], lets)
        return ([(z, None, ir.Case(s, lb, e1, rb, e2))], ir.Fst(Var(z)),
                Context(tuple(lets)).fill(call))


def linearize(delta: dict, types: dict, b) -> tuple:
    """Linearize block ``b``: returns (primal context, primal expr, tangent expr or None)."""
    return Linearizer(types).block(dict(delta), b)


def linearize_reify(types: dict, xs: list, b) -> ir.Expr:
    """``E[(primal, \\t1 ... tn. tangent)]`` for block ``b`` and free variables ``xs``."""
    lz = Linearizer(types)
    return lz.reify({}, list(xs), b)


# ---------------------------------------------------------------------------
# transposition

ACCUM, STATE, READER, LOCAL = "accum", "state", "reader", "local"


class Transposer:
    """Omega maps each linear variable to (kind, value):

    * ``accum``: a data variable; its cotangent is added into the reference
    * ``state``: a state reference of the linear program, now a cotangent state reference
    * ``reader``: an accumulator reference of the linear program; the value is
      the cotangent of the accumulated total
    * ``local``: a scalar let of the linear program read only in the same
      straight-line block; its cotangent contributions are gathered in a list
      and summed without an accumulator
    """

    def __init__(self, types: dict):
        self.types = dict(types)

    def linear(self, omega, t) -> bool:
        return not omega.keys().isdisjoint(ir.free_vars(t))

    def emit(self, out, e, hint="ct") -> Var:
        n = ir.fresh(hint)
        out.append((n, None, e))
        return Var(n)

    def split(self, ct, out):
        if ct is None:
            return None, None
        if isinstance(ct, Pair):
            return ct.left, ct.right
        return self.emit(out, ir.Fst(ct)), self.emit(out, ir.Snd(ct))

    def type_of_value(self, v):
        if isinstance(v, Var) and self.types.get(v.name) is not None:
            return self.types[v.name]
        return type_of(self.types, Ret(v))

    # -- blocks ------------------------------------------------------------
    def block(self, omega, b, ct, out):
        ctx, final = ir.split_lets(b)
        self._lets(omega, list(ctx.bindings), 0, final, ct, out)

    def _lets(self, omega, bs, k, final, ct, out):
        while k < len(bs):
            x, annot, e = bs[k]
            ty = annot if annot is not None else None
            if not self.linear(omega, e):
                out.append((x, None, e))
                self.types[x] = ty if ty is not None else type_of(self.types, e)
                k += 1
                continue
            self.types[x] = ty if ty is not None else type_of(self.types, e)
            match e:
                case ir.Index(Var(y), i) if omega.get(y, (None,))[0] == ACCUM:
                    omega[x] = (ACCUM, self.emit(out, ir.Slice(omega[y][1], i), "r"))
                    k += 1
                    continue
                case ir.Slice(Var(y), i) if y in omega:
                    kind, val = omega[y]
                    if kind == READER:
                        omega[x] = (READER, self.emit(out, ir.Index(val, i)))
                    else:
                        omega[x] = (kind, self.emit(out, ir.Slice(val, i), "r"))
                    k += 1
                    continue
                case Ret(Var(y)) if y in omega and omega[y][0] != LOCAL:
                    omega[x] = omega[y]
                    k += 1
                    continue
            rest = [b for _, _, b in bs[k + 1:]] + [final]
            if _prune(self.types[x]) == ir.FLOAT_T and _shallow(x, rest):
                contribs: list = []
                omega2 = dict(omega)
                omega2[x] = (LOCAL, (contribs, out))
                self._lets(omega2, bs, k + 1, final, ct, out)
                self.expr(omega, e, self.total(contribs, out, "ct" + x.text), out)
                return
            # the cotangent of x is collected from the rest of the block first
            h, r = ir.fresh("h"), ir.fresh("r")
            inner: list = []
            omega2 = dict(omega)
            omega2[x] = (ACCUM, Var(r))
            # locals of this block used in the rest get their contributions
            # back out through the handler's answer
            rest_fvs = set().union(*(ir.free_vars(t) for t in rest))
            outer = [y for y, (kind, _) in omega.items() if kind == LOCAL and y in rest_fvs]
            lists = {y: [] for y in outer}
            for y in outer:
                omega2[y] = (LOCAL, (lists[y], inner))
            self._lets(omega2, bs, k + 1, final, ct, inner)
            sums = [(y, self.total(lists[y], inner, "ct" + y.text)) for y in outer]
            sums = [(y, t) for y, t in sums if t is not None]
            ans = ir.UNIT
            for _, t in reversed(sums):
                ans = t if ans is ir.UNIT else Pair(t, ans)
            body = Context(tuple(inner)).fill(Ret(ans))
            acc = self.emit(out, run_accum(h, r, self.types[x], body), "acc")
            if sums:
                cur = self.emit(out, ir.Fst(acc), "ans")
                for n, (y, _) in enumerate(sums):
                    if n < len(sums) - 1:
                        part = self.emit(out, ir.Fst(cur), "ct" + y.text)
                        cur = self.emit(out, ir.Snd(cur), "ans")
                    else:
                        part = cur
                    omega[y][1][0].append(part)
            t2 = self.emit(out, ir.Snd(acc), "ct" + x.text)
            self.expr(omega, e, t2, out)
            return
        self.expr(omega, final, ct, out)

    def total(self, contribs, out, hint):
        """Sum of the collected cotangent contributions (None when there are none)."""
        t = None
        for c in contribs:
            t = c if t is None else self.emit(out, ir.Add(t, c), hint)
        return t

    # -- expressions -------------------------------------------------------
    def expr(self, omega, e, ct, out):
        lin = self.linear(omega, e)
        if not lin:
            if _has_effects(e):
                self.emit(out, e, "_")
            return
        match e:
            case Ret(v):
                self.value(omega, v, ct, out)
            case ir.Add(a, b):
                self.value(omega, a, ct, out)
                self.value(omega, b, ct, out)
            case ir.Mul(a, b):
                la, lb = self.linear(omega, a), self.linear(omega, b)
                if la and lb:
                    raise NotLinear("both factors of a product depend on the linear input")
                if ct is None:
                    return
                if la:
                    self.value(omega, a, self.emit(out, ir.Mul(ct, b)), out)
                else:
                    self.value(omega, b, self.emit(out, ir.Mul(a, ct)), out)
            case ir.Prim("sub", (a, b)):
                self.value(omega, a, ct, out)
                if ct is not None and self.linear(omega, b):
                    self.value(omega, b, self.emit(out, ir.Prim("neg", (ct,))), out)
            case ir.Prim("neg", (a,)):
                if ct is not None:
                    self.value(omega, a, self.emit(out, ir.Prim("neg", (ct,))), out)
            case ir.Prim(op):
                raise NotLinear(f"primitive {op} is not linear in its input")
            case ir.Index(Var(y), i) if omega.get(y, (None,))[0] == ACCUM:
                if ct is not None:
                    r = self.emit(out, ir.Slice(omega[y][1], i), "r")
                    self.emit(out, ir.Accumulate(r, ct), "_")
            case ir.Fst(Var(y)) | ir.Snd(Var(y)) if omega.get(y, (None,))[0] == ACCUM:
                if ct is not None:
                    pt = _prune(self.type_of_value(Var(y)))
                    if isinstance(e, ir.Fst):
                        upd = Pair(ct, zero_value(pt.right))
                    else:
                        upd = Pair(zero_value(pt.left), ct)
                    self.emit(out, ir.Accumulate(omega[y][1], upd), "_")
            case ir.For(i, annot, body):
                self.t_for(omega, i, annot, body, ct, out)
            case ir.Case(s, lb, lbody, rb, rbody):
                st = _prune(self.type_of_value(s))
                self.types[lb], self.types[rb] = st.left, st.right
                o1: list = []
                o2: list = []
                self.block(dict(omega), lbody, ct, o1)
                self.block(dict(omega), rbody, ct, o2)
                self.emit(out, ir.Case(s, lb, Context(tuple(o1)).fill(Ret(ir.UNIT)),
                                       rb, Context(tuple(o2)).fill(Ret(ir.UNIT))), "_")
            case ir.RunState(init, Action(h, r, annot, body)):
                t_ans, t_s = self.split(ct, out)
                h2, r2 = ir.fresh("h"), ir.fresh("r")
                body = ir.subst(body, h, Var(h2))
                self.types[h2] = ir.TYPE
                self.types[r] = ir.RefType(Var(h2), annot)
                omega2 = dict(omega)
                omega2[r] = (STATE, Var(r2))
                inner: list = []
                self.block(omega2, body, t_ans, inner)
                start = t_s if t_s is not None else zero_value(annot)
                p = self.emit(out, ir.RunState(start, Action(h2, r2, annot,
                                                             Context(tuple(inner)).fill(Ret(ir.UNIT)))), "st")
                ts2 = self.emit(out, ir.Snd(p), "ct")
                self.value(omega, init, ts2, out)
            case ir.RunAccum(Action(h, r, annot, body)):
                t_ans, t_acc = self.split(ct, out)
                self.types[h] = ir.TYPE
                self.types[r] = ir.RefType(Var(h), annot)
                omega2 = dict(omega)
                omega2[r] = (READER, t_acc)
                self.block(omega2, body, t_ans, out)
            case ir.Get(Var(r)) if omega.get(r, (None,))[0] == STATE:
                if ct is not None:
                    ref = omega[r][1]
                    old = self.emit(out, ir.Get(ref))
                    new = self.emit(out, ir.Add(ct, old))
                    self.emit(out, ir.Put(ref, new), "_")
            case ir.Put(Var(r), w) if omega.get(r, (None,))[0] == STATE:
                ref = omega[r][1]
                t2 = self.emit(out, ir.Get(ref))
                self.emit(out, ir.Put(ref, zero_value(self.type_of_value(w))), "_")
                self.value(omega, w, t2, out)
            case ir.Accumulate(Var(r), w) if omega.get(r, (None,))[0] == READER:
                self.value(omega, w, omega[r][1], out)
            case _:
                raise NotLinear(f"cannot transpose {type(e).__name__} in a linear position")

    def t_for(self, omega, i, annot, body, ct, out):
        i2 = ir.fresh(i.text)
        inner: list = []
        ri = self.emit(inner, ir.Prim("reverse", (annot, Var(i2))), i.text)
        self.types[i2] = annot
        self.types[ri.name] = annot
        t2 = self.emit(inner, ir.Index(ct, ri)) if ct is not None else None
        body = ir.rename_binders(ir.subst(body, i, ri))
        self.block(dict(omega), body, t2, inner)
        self.emit(out, ir.For(i2, annot, Context(tuple(inner)).fill(Ret(ir.UNIT))), "_")

    def value(self, omega, v, ct, out):
        match v:
            case Var(x):
                if x not in omega:
                    return
                kind, ref = omega[x]
                if kind == LOCAL:
                    contribs, scope = ref
                    if scope is not out:
                        raise InternalError(f"local cotangent of {x.text} escaped its block")
                    if ct is not None:
                        contribs.append(ct)
                    return
                if kind != ACCUM:
                    raise NotLinear(f"reference {x.text} used as a value in a linear position")
                if ct is not None:
                    self.emit(out, ir.Accumulate(ref, ct), "_")
            case ir.Lit("Float", x):
                if x != 0.0 and ct is not None:
                    raise NotLinear(f"constant {x!r} in a linear position")
            case Pair(a, b):
                if not self.linear(omega, v):
                    return
                ta, tb = self.split(ct, out)
                self.value(omega, a, ta, out)
                self.value(omega, b, tb, out)
            case ir.View(j, annot, body):
                if ct is None or not self.linear(omega, v):
                    return
                j2 = ir.fresh(j.text)
                inner: list = []
                self.types[j2] = annot
                t2 = self.emit(inner, ir.Index(ct, Var(j2)))
                self.block(dict(omega), ir.rename_binders(ir.subst(body, j, Var(j2))), t2, inner)
                self.emit(out, ir.For(j2, annot, Context(tuple(inner)).fill(Ret(ir.UNIT))), "_")
            case ir.Lam() | ir.ValueCase():
                raise InternalError("transposition expects first-order IR")
            case _:
                if self.linear(omega, v):
                    raise NotLinear("unsupported value in a linear position")


def _shallow(x: Name, terms) -> bool:
    """Is ``x`` only used outside nested blocks (loops, branches, handlers, views)?"""
    for t in terms:
        for node in ir.walk(t):
            if isinstance(node, (ir.For, ir.Case, Action, ir.View, ir.Lam)) and x in ir.free_vars(node):
                return False
    return True


def _has_effects(e) -> bool:
    return any(isinstance(t, (ir.Put, ir.Accumulate)) for t in ir.walk(e))


def run_accum(h: Name, r: Name, ty, body) -> ir.Expr:
    """``runAccum`` of ``body``, or the pair ``(ans, v)`` when the body only adds ``v`` once."""
    ctx, final = ir.split_lets(body)
    if isinstance(final, Ret) and not {h, r} & ir.free_vars(final) and ctx.bindings:
        *pure, (_, _, last) = ctx.bindings
        match last:
            case ir.Accumulate(Var(r2), v) if r2 == r:
                if all(not {h, r} & ir.free_vars(b) and not _has_effects(b) for _, _, b in pure):
                    return Context(tuple(pure)).fill(Ret(Pair(final.val, v)))
    return ir.RunAccum(Action(h, r, ty, body))


def transpose(omega: dict, types: dict, b, ct) -> ir.Expr:
    """Transpose block ``b`` at cotangent ``ct``; ``omega`` maps linear variables to (kind, value)."""
    out: list = []
    Transposer(types).block(dict(omega), b, ct, out)
    return Context(tuple(out)).fill(Ret(ir.UNIT))


def transpose_top(types: dict, x: Name, ty, b, ct) -> ir.Expr:
    """``snd (runAccum (h r. T[x -> r](b, ct)))``: the cotangent of ``x``."""
    h, r = ir.fresh("h"), ir.fresh("r")
    body = transpose({x: (ACCUM, Var(r))}, {**types, h: ir.TYPE, r: ir.RefType(Var(h), ty)}, b,
                     None if _is_zero(ct) else ct)
    acc = ir.fresh("acc")
    return Let(acc, None, run_accum(h, r, ty, body), ir.Snd(Var(acc)))


def _is_zero(v) -> bool:
    return isinstance(v, ir.Lit) and v.kind == "Float" and v.val == 0.0


def grad_compose(fn: ir.Value, point: ir.Value) -> ir.Expr:
    """``transpose (snd (linearize fn point)) 1.0`` in core IR."""
    lin, df = ir.fresh("lin"), ir.fresh("df")
    return Let(lin, None, ir.Linearize(fn, point),
               Let(df, None, ir.Snd(Var(lin)), ir.Transpose(Var(df), ir.float_lit(1.0))))
