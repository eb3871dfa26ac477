"""Simplification: lowering core IR to the first-order IR.

``simplify`` turns an expression into a context of let bindings (first-order
computations to run) and a residual value.  Lets are inlined by substitution,
applications and view indexing are beta-reduced, and control constructs whose
result still contains functions are split into a table (or branch, or handler
result) of captured data plus a residual that rebuilds the functions from it.
``linearize`` and ``transpose`` are handed to :mod:`dexlet.autodiff` and the core
IR they emit is simplified again.

After simplification, ``optimize`` runs common-subexpression elimination, loop
fusion and dead-code elimination over the let chains.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import core_ir as ir
from .core_ir import (Action, Context, For, Index, Lam, Let, Name, Pair, Ret, Var, View)
from .errors import InternalError, TelescopeError
from .printer import show_expr, show_value
from .typecheck import type_of


@dataclass
class SimplResult:
    context: Context
    residual: ir.Value

    def fill(self) -> ir.Expr:
        return self.context.fill(Ret(self.residual))


@dataclass
class Dumps:
    """Intermediate programs recorded for ``--dump-ir``."""

    linearized: list = field(default_factory=list)
    transposed: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# capture of context binders


def collect_binders(binders, v, loop_var: Name | None = None) -> list:
    """The binders free in ``v``, in scope order.

    The captured variables are packed into a non-dependent tuple, so none of
    their types may mention another binder of the same context or the loop
    index; such programs need dependent pairs and are rejected.
    """
    fv = ir.free_vars(v)
    names = {n for n, _ in binders}
    if loop_var is not None:
        names.add(loop_var)
    out = []
    for n, ty in binders:
        if n not in fv:
            continue
        if ty is not None:
            bad = ir.free_vars(ty) & names
            if bad:
                dep = sorted(bad, key=lambda x: x.uid)[0]
                raise TelescopeError(
                    f"cannot capture {n.text}: its type {show_value(ty)} depends on {dep.text}, "
                    "which is bound in the same block (dependent captures are not supported)")
        out.append((n, ty))
    return out


def first_order(v) -> bool:
    """True when the value contains no functions, views or value-level cases."""
    return not any(isinstance(t, (Lam, View, ir.ValueCase)) for t in ir.walk(v))


def _destructure(source: ir.Value, names: list, lets: list):
    """Bind ``names`` to the components of the right-nested tuple ``source``."""
    cur = source
    for k, n in enumerate(names):
        if k == len(names) - 1:
            lets.append((n, None, Ret(cur)))
            return
        lets.append((n, None, ir.Fst(cur)))
        rest = ir.fresh("rest")
        lets.append((rest, None, ir.Snd(cur)))
        cur = Var(rest)


def _rebuild_block(source: ir.Value, captured: list, v: ir.Value, extra: dict | None = None) -> ir.Expr:
    """``let (x1, ..., xn) = source in v`` with the captured names refreshed."""
    fresh = [ir.refresh(n) for n, _ in captured]
    m = {n: Var(f) for (n, _), f in zip(captured, fresh)}
    if extra:
        m.update(extra)
    lets: list = []
    _destructure(source, fresh, lets)
    return Context(tuple(lets)).fill(Ret(ir.subst_map(v, m)))


# ---------------------------------------------------------------------------
# the simplifier


class Simplifier:
    def __init__(self, dumps: Dumps | None = None):
        self.sub: dict = {}
        self.dumps = dumps or Dumps()

    # -- helpers -----------------------------------------------------------
    def sv(self, v):
        if not self.sub:
            return v
        fv = ir.free_vars(v)
        m = {k: self.sub[k] for k in fv if k in self.sub}
        if not m:
            return v
        return ir.subst_map(v, m)

    def emit(self, e, tenv, out, hint="t", ty=None) -> Var:
        if ty is None:
            ty = type_of(tenv, e)
        name = ir.fresh(hint)
        out.append((name, ty, e))
        tenv[name] = ty
        return Var(name)

    def block(self, e, tenv, bind: list) -> tuple:
        """Simplify ``e`` in a new scope; ``bind`` lists (old, new, type) binders."""
        tenv = dict(tenv)
        for old, new, ty in bind:
            if old is not None:
                self.sub[old] = Var(new)
            tenv[new] = ty
        out: list = []
        v = self.expr(e, tenv, out)
        return out, v, tenv

    # -- expressions -------------------------------------------------------
    def expr(self, e, tenv, out, hint="t") -> ir.Value:
        match e:
            case Ret(v):
                return self.sv(v)
            case Let(x, _, bound, body):
                v1 = self.expr(bound, tenv, out, hint=x.text)
                self.sub[x] = v1
                return self.expr(body, tenv, out, hint)
            case ir.App(f, a):
                return self.apply(self.sv(f), self.sv(a), tenv, out, hint)
            case Index(a, i):
                av, iv = self.sv(a), self.sv(i)
                if isinstance(av, View):
                    self.sub[av.binder] = iv
                    return self.expr(av.body, tenv, out, hint)
                if isinstance(av, ir.ValueCase):
                    return self.into_case(av, lambda w: Index(w, iv), tenv, out, hint)
                return self.emit(Index(av, iv), tenv, out, hint)
            case For(b, annot, body):
                return self.for_(b, self.sv(annot), body, tenv, out, hint)
            case ir.Fst(v):
                v = self.sv(v)
                if isinstance(v, Pair):
                    return v.left
                if isinstance(v, ir.ValueCase):
                    return self.into_case(v, ir.Fst, tenv, out, hint)
                return self.emit(ir.Fst(v), tenv, out, hint)
            case ir.Snd(v):
                v = self.sv(v)
                if isinstance(v, Pair):
                    return v.right
                if isinstance(v, ir.ValueCase):
                    return self.into_case(v, ir.Snd, tenv, out, hint)
                return self.emit(ir.Snd(v), tenv, out, hint)
            case ir.Case(s, lb, lbody, rb, rbody):
                return self.case(self.sv(s), lb, lbody, rb, rbody, tenv, out, hint)
            case ir.RunState(init, act):
                return self.handler(e, self.sv(init), act, tenv, out, hint)
            case ir.RunAccum(act):
                return self.handler(e, None, act, tenv, out, hint)
            case ir.Prim("fromOrdinal", (ty, k)):
                ty, k = self.sv(ty), self.sv(k)
                if isinstance(ty, ir.FinType) and isinstance(ty.size, ir.Lit) and isinstance(k, ir.Lit):
                    return ir.FinLit(k.val, ty.size)
                return self.emit(ir.Prim("fromOrdinal", (ty, k)), tenv, out, hint)
            case ir.Slice() | ir.Get() | ir.Put() | ir.Accumulate() | ir.Add() | ir.Mul() | ir.Prim():
                vals = {f: self.sv(getattr(e, f)) for f in e._terms if f not in e._seqs}
                for f in e._seqs:
                    vals[f] = tuple(self.sv(x) for x in getattr(e, f))
                return self.emit(ir.rebuild(e, **vals), tenv, out, hint)
            case ir.Linearize(f, point):
                return self.linearize(self.sv(f), self.sv(point), tenv, out, hint)
            case ir.Transpose(f, ct):
                return self.transpose(self.sv(f), self.sv(ct), tenv, out, hint)
        raise InternalError(f"cannot simplify {type(e).__name__}")

    def apply(self, f, a, tenv, out, hint):
        if isinstance(f, Lam):
            self.sub[f.binder] = a
            return self.expr(f.body, tenv, out, hint)
        if isinstance(f, ir.ValueCase):
            return self.into_case(f, lambda w: ir.App(w, a), tenv, out, hint)
        raise InternalError(f"application of a non-function residual: {show_value(f)}")

    def into_case(self, vc, k, tenv, out, hint):
        """Simplify ``k`` applied to each branch of a case-valued residual."""
        x, y, u, w = ir.fresh("l"), ir.fresh("r"), ir.fresh("b"), ir.fresh("b")
        e = ir.Case(vc.scrut,
                    x, Let(u, None, ir.App(vc.left_fn, Var(x)), k(Var(u))),
                    y, Let(w, None, ir.App(vc.right_fn, Var(y)), k(Var(w))))
        saved = self.sub
        self.sub = {}
        try:
            return self.expr(e, tenv, out, hint)
        finally:
            self.sub = saved

    def for_(self, b, annot, body, tenv, out, hint):
        b2 = ir.refresh(b)
        inner, v, _ = self.block(body, tenv, [(b, b2, annot)])
        if first_order(v):
            elem_ty = type_of({**tenv, b2: annot, **{n: t for n, t, _ in inner}}, Ret(v))
            if b2 in ir.free_vars(elem_ty):
                raise TelescopeError("the element type of this table depends on the loop index")
            loop = For(b2, annot, Context(tuple(inner)).fill(Ret(v)))
            return self.emit(loop, tenv, out, hint, ty=ir.ArrayType(annot, elem_ty))
        captured = collect_binders([(n, t) for n, t, _ in inner], v, loop_var=b2)
        tup = ir.tuple_value([Var(n) for n, _ in captured])
        tup_ty = ir.pair_type_of([t for _, t in captured])
        loop = For(b2, annot, Context(tuple(inner)).fill(Ret(tup)))
        y = self.emit(loop, tenv, out, hint, ty=ir.ArrayType(annot, tup_ty))
        j = ir.refresh(b)
        t = ir.fresh("cap")
        body2 = Let(t, None, Index(y, Var(j)), _rebuild_block(Var(t), captured, v, {b2: Var(j)}))
        return View(j, annot, body2)

    def case(self, s, lb, lbody, rb, rbody, tenv, out, hint):
        if isinstance(s, ir.InjLeft):
            self.sub[lb] = s.payload
            return self.expr(lbody, tenv, out, hint)
        if isinstance(s, ir.InjRight):
            self.sub[rb] = s.payload
            return self.expr(rbody, tenv, out, hint)
        st = type_of(tenv, Ret(s))
        if not isinstance(st, ir.EitherType):
            raise InternalError("case scrutinee is not a sum")
        lb2, rb2 = ir.refresh(lb), ir.refresh(rb)
        out1, v1, env1 = self.block(lbody, tenv, [(lb, lb2, st.left)])
        out2, v2, env2 = self.block(rbody, tenv, [(rb, rb2, st.right)])
        if first_order(v1) and first_order(v2):
            ty = type_of(env1, Ret(v1))
            e = ir.Case(s, lb2, Context(tuple(out1)).fill(Ret(v1)), rb2, Context(tuple(out2)).fill(Ret(v2)))
            return self.emit(e, tenv, out, hint, ty=ty)
        cap1 = collect_binders([(lb2, st.left)] + [(n, t) for n, t, _ in out1], v1)
        cap2 = collect_binders([(rb2, st.right)] + [(n, t) for n, t, _ in out2], v2)
        s1 = ir.pair_type_of([t for _, t in cap1])
        s2 = ir.pair_type_of([t for _, t in cap2])
        left = ir.InjLeft(s2, ir.tuple_value([Var(n) for n, _ in cap1]))
        right = ir.InjRight(s1, ir.tuple_value([Var(n) for n, _ in cap2]))
        e = ir.Case(s, lb2, Context(tuple(out1)).fill(Ret(left)), rb2, Context(tuple(out2)).fill(Ret(right)))
        z = self.emit(e, tenv, out, hint, ty=ir.EitherType(s1, s2))
        p1, p2 = ir.fresh("l"), ir.fresh("r")
        f1 = Lam(p1, s1, _rebuild_block(Var(p1), cap1, v1))
        f2 = Lam(p2, s2, _rebuild_block(Var(p2), cap2, v2))
        return ir.ValueCase(z, f1, f2)

    def handler(self, e, init, act: Action, tenv, out, hint):
        kind = "State" if isinstance(e, ir.RunState) else "Accum"
        annot = self.sv(act.ref_annot)
        h2, r2 = ir.refresh(act.region), ir.refresh(act.ref)
        ref_ty = ir.RefType(Var(h2), annot)
        inner, v, env1 = self.block(act.body, tenv, [(act.region, h2, ir.TYPE), (act.ref, r2, ref_ty)])

        def make(result):
            a = Action(h2, r2, annot, Context(tuple(inner)).fill(Ret(result)))
            return ir.RunState(init, a) if kind == "State" else ir.RunAccum(a)

        if first_order(v):
            ty = type_of(env1, Ret(v))
            if ir.free_vars(ty) & {h2, r2}:
                raise InternalError("handler result mentions its region")
            return self.emit(make(v), tenv, out, hint, ty=ir.PairType(ty, annot))
        captured = collect_binders([(r2, ref_ty)] + [(n, t) for n, t, _ in inner], v)
        tup = ir.tuple_value([Var(n) for n, _ in captured])
        tup_ty = ir.pair_type_of([t for _, t in captured])
        p = self.emit(make(tup), tenv, out, hint, ty=ir.PairType(tup_ty, annot))
        caps = self.emit(ir.Fst(p), tenv, out, "cap", ty=tup_ty)
        s = self.emit(ir.Snd(p), tenv, out, "s", ty=annot)
        # bind the captured names in the enclosing context
        names = [ir.refresh(n) for n, _ in captured]
        lets: list = []
        _destructure(caps, names, lets)
        for n, ann, bound in lets:
            val = self.expr(bound, tenv, out, hint=n.text)
            self.sub[n] = val
        m = {old: self.sub[new] for (old, _), new in zip(captured, names)}
        return Pair(ir.subst_map(v, m), s)

    # -- differentiation ---------------------------------------------------
    def _lam_body(self, f, what, tenv):
        if not isinstance(f, Lam):
            raise InternalError(f"{what} of a non-lambda residual: {show_value(f)}")
        x2 = ir.refresh(f.binder)
        inner, v, env1 = self.block(f.body, tenv, [(f.binder, x2, f.annot)])
        return x2, f.annot, Context(tuple(inner)).fill(Ret(v)), env1

    def linearize(self, f, point, tenv, out, hint):
        from . import autodiff

        x, ty, body, env1 = self._lam_body(f, "linearize", tenv)
        core = autodiff.linearize_reify(env1, [x], body)
        self.dumps.linearized.append(core)
        self.sub[x] = point
        return self.expr(core, tenv, out, hint)

    def transpose(self, f, ct, tenv, out, hint):
        from . import autodiff

        x, ty, body, env1 = self._lam_body(f, "transpose", tenv)
        # fusing first lets a reduction transpose straight into its producer loop
        body = optimize(body)
        core = autodiff.transpose_top(env1, x, ty, body, ct)
        self.dumps.transposed.append(core)
        return self.expr(core, tenv, out, hint)

    # -- top level ---------------------------------------------------------
    def materialize(self, v, tenv, out) -> ir.Value:
        """Rewrite a data-typed residual so it contains no views or functions."""
        match v:
            case View(b, annot, body):
                return self.for_(b, annot, body, tenv, out, "result")
            case Pair(a, c):
                return Pair(self.materialize(a, tenv, out), self.materialize(c, tenv, out))
            case ir.InjLeft(t, p):
                return ir.InjLeft(t, self.materialize(p, tenv, out))
            case ir.InjRight(t, p):
                return ir.InjRight(t, self.materialize(p, tenv, out))
            case ir.ValueCase(s, f, g):
                x, y = ir.fresh("l"), ir.fresh("r")
                e = ir.Case(s, x, ir.App(f, Var(x)), y, ir.App(g, Var(y)))
                return self.materialize(self.expr(e, tenv, out, "result"), tenv, out)
        return v


def simplify(e: ir.Expr, env: dict | None = None, dumps: Dumps | None = None) -> SimplResult:
    s = Simplifier(dumps)
    out: list = []
    v = s.expr(e, dict(env or {}), out)
    return SimplResult(Context(tuple(out)), v)


def simplify_data(e: ir.Expr, env: dict | None = None, dumps: Dumps | None = None) -> SimplResult:
    """Simplify a data-typed program all the way to first-order form."""
    s = Simplifier(dumps)
    out: list = []
    tenv = dict(env or {})
    v = s.expr(e, tenv, out)
    if not first_order(v):
        v = s.materialize(v, tenv, out)
    return SimplResult(Context(tuple(out)), v)


def lower(e: ir.Expr, env: dict | None = None, fusion: bool = True) -> ir.Expr:
    """Simplify and optimize, returning an evaluable first-order program."""
    res = simplify_data(e, env)
    return optimize(res.fill(), fusion=fusion)


# ---------------------------------------------------------------------------
# first-order grammar check


def higher_order_nodes(t) -> list:
    """Lam, App and ArrowType nodes anywhere in ``t`` (including annotations)."""
    return [n for n in ir.walk(t) if isinstance(n, (Lam, ir.App, ir.ArrowType))]


# ---------------------------------------------------------------------------
# effects


def outer_effects(e) -> bool:
    """Does ``e`` read or write a reference it did not allocate itself?"""
    local: set = set()

    def go(t) -> bool:
        match t:
            case Action(_, r, _, body):
                local.add(r)
                return go(body)
            case Let(x, _, ir.Slice(Var(r), _), body) if r in local:
                local.add(x)
                return go(body)
            case ir.Get(Var(r)) | ir.Put(Var(r), _) | ir.Accumulate(Var(r), _) if r not in local:
                return True
            case ir.Get(Var()) | ir.Put(Var(), _) | ir.Accumulate(Var(), _):
                pass
            case ir.Get() | ir.Put() | ir.Accumulate() | ir.App():
                return True
        return any(go(c) for c in ir.children(t))

    return go(e)


# ---------------------------------------------------------------------------
# cleanups


def _map_blocks(e, fn):
    """Apply ``fn`` to every nested block (loop bodies, branches, handler bodies, view bodies)."""
    match e:
        case For(b, annot, body):
            return For(b, annot, fn(body))
        case ir.Case(s, lb, lbody, rb, rbody):
            return ir.Case(s, lb, fn(lbody), rb, fn(rbody))
        case ir.RunState(init, Action(h, r, t, body)):
            return ir.RunState(init, Action(h, r, t, fn(body)))
        case ir.RunAccum(Action(h, r, t, body)):
            return ir.RunAccum(Action(h, r, t, fn(body)))
        case Ret(View(b, annot, body)):
            return Ret(View(b, annot, fn(body)))
    return e


def dce(e: ir.Expr) -> ir.Expr:
    """Drop let bindings that are unused and free of outside effects."""
    ctx, final = ir.split_lets(e)
    final = _map_blocks(final, dce)
    live = ir.free_vars(final)
    kept = []
    for name, annot, bound in reversed(ctx.bindings):
        if name not in live and not outer_effects(bound):
            continue
        bound = _map_blocks(bound, dce)
        live |= ir.free_vars(bound)
        if annot is not None:
            live |= ir.free_vars(annot)
        kept.append((name, annot, bound))
    kept.reverse()
    return Context(tuple(kept)).fill(final)


_CSE_KINDS = (Index, ir.Fst, ir.Snd, ir.Add, ir.Mul, ir.Prim, ir.Slice)


def cse(e: ir.Expr, avail: dict | None = None) -> ir.Expr:
    """Reuse earlier bindings of identical pure expressions (scoped by dominance)."""
    avail = dict(avail or {})
    ren: dict = {}
    lets = []
    while isinstance(e, Let):
        bound = ir.subst_map(e.bound, ren) if ren else e.bound
        annot = ir.subst_map(e.annot, ren) if ren and e.annot is not None else e.annot
        if isinstance(bound, _CSE_KINDS):
            key = show_expr(bound)
            if key in avail:
                ren[e.binder] = Var(avail[key])
                e = e.body
                continue
            avail[key] = e.binder
        else:
            bound = _map_blocks(bound, lambda blk, av=dict(avail): cse(blk, av))
        lets.append((e.binder, annot, bound))
        e = e.body
    final = ir.subst_map(e, ren) if ren else e
    final = _map_blocks(final, lambda blk: cse(blk, avail))
    return Context(tuple(lets)).fill(final)


def _uses(name, terms) -> int:
    n = 0
    for t in terms:
        for node in ir.walk(t):
            if isinstance(node, Var) and node.name == name:
                n += 1
    return n


def _fuse_into(consumer: For, y: Name, producer: For):
    """Inline ``producer`` at the single ``let t = y.i`` in the consumer's top-level chain."""
    ctx, final = ir.split_lets(consumer.body)
    bs = list(ctx.bindings)
    for k, (t, annot, bound) in enumerate(bs):
        if isinstance(bound, Index) and bound.arr == Var(y) and bound.idx == Var(consumer.binder):
            before = bs[:k]
            if outer_effects(producer.body) and any(outer_effects(b) for _, _, b in before):
                return None
            fresh_body = ir.rename_binders(ir.subst(producer.body, producer.binder, Var(consumer.binder)))
            pctx, pfinal = ir.split_lets(fresh_body)
            rest = Context(tuple(bs[k + 1:])).fill(final)
            if isinstance(pfinal, Ret):
                rest = ir.subst(rest, t, pfinal.val)
                new_bs = before + list(pctx.bindings)
            else:
                new_bs = before + list(pctx.bindings) + [(t, annot, pfinal)]
            return For(consumer.binder, consumer.annot, Context(tuple(new_bs)).fill(rest))
    return None


def _fuse_target(consumer, y: Name, producer: For):
    """Fuse into ``consumer`` itself or into the one loop inside a handler that reads ``y``."""
    if isinstance(consumer, For):
        if not ir.alpha_eq(consumer.annot, producer.annot):
            return None
        return _fuse_into(consumer, y, producer)
    if not isinstance(consumer, (ir.RunState, ir.RunAccum)) or outer_effects(producer.body):
        return None
    if isinstance(consumer, ir.RunState) and _uses(y, [consumer.init]):
        return None
    act = consumer.action
    ctx, final = ir.split_lets(act.body)
    bs = list(ctx.bindings)
    items = [b for _, _, b in bs] + [final]
    users = [k for k, t in enumerate(items) if _uses(y, [t])]
    if len(users) != 1 or any(a is not None and _uses(y, [a]) for _, a, _ in bs):
        return None
    k = users[0]
    inner = _fuse_target(items[k], y, producer)
    if inner is None:
        return None
    if k < len(bs):
        bs[k] = (bs[k][0], bs[k][1], inner)
    else:
        final = inner
    body = Context(tuple(bs)).fill(final)
    new_act = Action(act.region, act.ref, act.ref_annot, body)
    if isinstance(consumer, ir.RunState):
        return ir.RunState(consumer.init, new_act)
    return ir.RunAccum(new_act)


def fuse(e: ir.Expr) -> ir.Expr:
    """Inline a table built by ``for`` into the single loop that reads it elementwise."""
    ctx, final = ir.split_lets(e)
    bs = [(n, a, _map_blocks(b, fuse)) for n, a, b in ctx.bindings]
    final = _map_blocks(final, fuse)
    changed = True
    while changed:
        changed = False
        for k, (y, _, producer) in enumerate(bs):
            if not isinstance(producer, For):
                continue
            rest_terms = [b for _, _, b in bs[k + 1:]] + [final]
            if _uses(y, rest_terms) != 1:
                continue
            for m in range(k + 1, len(bs)):
                x, annot, consumer = bs[m]
                if _uses(y, [consumer]) == 0:
                    continue
                between = [b for _, _, b in bs[k + 1:m]]
                p_eff = outer_effects(producer.body)
                if p_eff and (any(outer_effects(b) for b in between) or outer_effects(consumer)):
                    break
                fused = _fuse_target(consumer, y, producer)
                if fused is None:
                    break
                bs[m] = (x, annot, fused)
                del bs[k]
                changed = True
                break
            if changed:
                break
    return Context(tuple(bs)).fill(final)


def _fold(bound):
    """``x * 1.0`` and ``x + 0.0`` are ``x`` (up to the sign of a zero)."""
    match bound:
        case ir.Mul(a, ir.Lit("Float", 1.0)) | ir.Mul(ir.Lit("Float", 1.0), a):
            return a
        case ir.Add(a, ir.Lit("Float", 0.0)) | ir.Add(ir.Lit("Float", 0.0), a):
            return a
    return None


def forward_stores(e: ir.Expr) -> ir.Expr:
    """Store-to-load forwarding and dead-store removal on straight-line code.

    After ``put r v``, a later ``get r`` in the same block is ``v`` as long as
    nothing in between mentions ``r`` or a slice of it; a ``put`` that is
    overwritten before anything mentions the reference is dropped.
    """
    ren: dict = {}
    root: dict = {}  # slice name -> the reference it was sliced from
    known: dict = {}  # reference -> value it currently holds
    pending: dict = {}  # reference -> position of a put nobody has observed yet
    out: list = []

    def touch(names):
        for n in names:
            r = root.get(n, n)
            known.pop(r, None)
            pending.pop(r, None)

    while isinstance(e, Let):
        x, annot = e.binder, e.annot
        bound = ir.subst_map(e.bound, ren) if ren else e.bound
        e = e.body
        folded = _fold(bound)
        if folded is not None:
            ren[x] = folded
            continue
        match bound:
            case ir.Get(Var(r)) if r in known:
                ren[x] = known[r]
                continue
            case ir.Put(Var(r), v) if r not in root:
                touch(ir.free_vars(v))
                if r in pending:
                    out[pending[r]] = None
                known[r] = v
                pending[r] = len(out)
                out.append((x, annot, bound))
                continue
            case ir.Slice(Var(r), _):
                root[x] = root.get(r, r)
        bound = _map_blocks(bound, forward_stores)
        if any(isinstance(t, ir.App) for t in ir.walk(bound)):
            known.clear()
            pending.clear()
        touch(ir.free_vars(bound))
        out.append((x, annot, bound))
    final = ir.subst_map(e, ren) if ren else e
    final = _map_blocks(final, forward_stores)
    kept = [b for b in out if b is not None]
    return Context(tuple(kept)).fill(final)


def optimize(e: ir.Expr, fusion: bool = True) -> ir.Expr:
    e = cse(e)
    if fusion:
        e = fuse(e)
    e = forward_stores(e)
    return dce(e)
