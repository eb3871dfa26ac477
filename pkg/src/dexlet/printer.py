"""Canonical printer for the core IR, and a reader for the printed form.

The printed form is whitespace-insensitive: every nested block sits inside
parentheses, so layout is purely cosmetic (one binding per line, two-space
indentation).  Binders print as ``name.uid``.
"""

from __future__ import annotations

import re

from . import core_ir as ir
from .errors import ParseError


# ---------------------------------------------------------------------------
# printing

def show_value(v, ind: int = 0) -> str:
    match v:
        case None:
            return "_"
        case ir.Var(name):
            return str(name)
        case ir.Meta():
            return show_value(v.solution, ind) if v.solution is not None else f"?{v.hint}{v.uid}"
        case ir.Lit("Unit", _):
            return "()"
        case ir.Lit("Float", x):
            return repr(float(x))
        case ir.Lit(_, x):
            return str(x)
        case ir.BaseType(kind):
            return kind
        case ir.FinType(size):
            return f"(Fin {show_value(size, ind)})"
        case ir.ArrowType(b, dom, eff, cod):
            return f"({b} : {show_value(dom, ind)} -> {show_effects(eff)} {show_value(cod, ind)})"
        case ir.ArrayType(dom, cod):
            return f"({show_value(dom, ind)} => {show_value(cod, ind)})"
        case ir.PairType(a, b):
            return f"({show_value(a, ind)} & {show_value(b, ind)})"
        case ir.EitherType(a, b):
            return f"(Either {show_value(a, ind)} {show_value(b, ind)})"
        case ir.RefType(h, a):
            return f"(Ref {show_value(h, ind)} {show_value(a, ind)})"
        case ir.Lam(b, annot, body):
            return f"(\\{b} : {show_value(annot, ind)}. {_nested(body, ind)})"
        case ir.View(b, annot, body):
            return f"(view {b} : {show_value(annot, ind)}. {_nested(body, ind)})"
        case ir.Pair(a, b):
            return f"({show_value(a, ind)}, {show_value(b, ind)})"
        case ir.InjLeft(t, x):
            return f"(Left {show_value(t, ind)} {show_value(x, ind)})"
        case ir.InjRight(t, x):
            return f"(Right {show_value(t, ind)} {show_value(x, ind)})"
        case ir.ValueCase(s, f, g):
            return f"(vcase {show_value(s, ind)} {show_value(f, ind)} {show_value(g, ind)})"
        case ir.FinLit(k, size):
            return f"(@{k} : {show_value(size, ind)})"
    raise TypeError(f"not a value: {v!r}")


def show_effects(row) -> str:
    if row is None:
        return "{}"
    return "{" + ", ".join(f"{e.kind} {show_value(e.region)}" for e in row.entries) + "}"


def _nested(body, ind) -> str:
    """A parenthesised block; inline when it is a single line."""
    text = show_block(body, ind + 2)
    if "\n" not in text and len(text) < 60:
        return f"({text})"
    pad = " " * (ind + 2)
    return "(\n" + pad + text + "\n" + " " * ind + ")"


def show_block(e, ind: int = 0) -> str:
    lines = []
    while isinstance(e, ir.Let):
        ann = f" : {show_value(e.annot, ind)}" if e.annot is not None else ""
        lines.append(f"let {e.binder}{ann} = {show_expr(e.bound, ind)} in")
        e = e.body
    lines.append(show_expr(e, ind))
    return ("\n" + " " * ind).join(lines)


def _action(a: ir.Action, ind) -> str:
    return f"({a.region} {a.ref} : {show_value(a.ref_annot, ind)}. {_nested(a.body, ind)})"


def show_expr(e, ind: int = 0) -> str:
    sv = lambda v: show_value(v, ind)  # noqa: E731
    match e:
        case ir.Ret(v):
            return sv(v)
        case ir.Let():
            return _nested(e, ind)
        case ir.App(f, x):
            return f"app {sv(f)} {sv(x)}"
        case ir.Index(a, i):
            return f"index {sv(a)} {sv(i)}"
        case ir.For(b, annot, body):
            return f"for {b} : {sv(annot)}. {_nested(body, ind)}"
        case ir.Fst(v):
            return f"fst {sv(v)}"
        case ir.Snd(v):
            return f"snd {sv(v)}"
        case ir.Case(s, lb, lbody, rb, rbody):
            return (f"case {sv(s)} (Left {lb}. {_nested(lbody, ind)})"
                    f" (Right {rb}. {_nested(rbody, ind)})")
        case ir.Slice(r, i):
            return f"slice {sv(r)} {sv(i)}"
        case ir.RunState(init, act):
            return f"runState {sv(init)} {_action(act, ind)}"
        case ir.Get(r):
            return f"get {sv(r)}"
        case ir.Put(r, v):
            return f"put {sv(r)} {sv(v)}"
        case ir.RunAccum(act):
            return f"runAccum {_action(act, ind)}"
        case ir.Accumulate(r, v):
            return f"accum {sv(r)} {sv(v)}"
        case ir.Add(a, b):
            return f"add {sv(a)} {sv(b)}"
        case ir.Mul(a, b):
            return f"mul {sv(a)} {sv(b)}"
        case ir.Linearize(f, x):
            return f"linearize {sv(f)} {sv(x)}"
        case ir.Transpose(f, x):
            return f"transpose {sv(f)} {sv(x)}"
        case ir.Prim(op, args):
            return " ".join([f"prim:{op}"] + [sv(a) for a in args])
    raise TypeError(f"not an expression: {e!r}")


def show(t, renumber: bool = False) -> str:
    text = show_value(t) if isinstance(t, ir.Value) else show_block(t)
    return renumber_names(text) if renumber else text


def show_context(ctx: ir.Context, residual, renumber: bool = False) -> str:
    """Context bindings followed by the residual value."""
    lines = []
    for name, annot, bound in ctx.bindings:
        ann = f" : {show_value(annot)}" if annot is not None else ""
        lines.append(f"let {name}{ann} = {show_expr(bound)} in")
    lines.append(show_value(residual))
    text = "\n".join(lines)
    return renumber_names(text) if renumber else text


_NAME_RE = re.compile(r"(?<![\w.])([A-Za-z_][\w']*)\.(\d+)")


def renumber_names(text: str) -> str:
    """Replace uids by their order of first appearance (for golden files)."""
    seen: dict = {}

    def sub(m):
        uid = m.group(2)
        if uid not in seen:
            seen[uid] = len(seen) + 1
        return f"{m.group(1)}.{seen[uid]}"

    return _NAME_RE.sub(sub, text)


# ---------------------------------------------------------------------------
# reading

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<prim>prim:[A-Za-z]+)
  | (?P<name>[A-Za-z_][\w']*\.\d+)
  | (?P<num>-?(?:\d+\.\d*(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+|inf\b|nan\b)|-?\d+)
  | (?P<word>[A-Za-z_][\w']*)
  | (?P<fin>@\d+)
  | (?P<punct>=>|->|[()\\,:.&{}=])
""", re.VERBOSE)

_FLOAT_WORDS = {"inf", "nan", "-inf", "-nan"}


def _tokenize(text: str):
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", _loc(text, pos))
        kind = m.lastgroup
        if kind != "ws":
            toks.append((kind, m.group(), pos))
        pos = m.end()
    toks.append(("eof", "", pos))
    return toks


def _loc(text, pos):
    line = text.count("\n", 0, pos) + 1
    col = pos - (text.rfind("\n", 0, pos) + 1) + 1
    return (line, col)


class _Reader:
    EXPR_WORDS = {"let", "app", "index", "for", "fst", "snd", "case", "slice", "runState",
                  "get", "put", "runAccum", "accum", "add", "mul", "linearize", "transpose"}

    def __init__(self, text):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.names: dict = {}

    def peek(self, k=0):
        return self.toks[self.i + k]

    def next(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def error(self, expected):
        kind, val, pos = self.peek()
        raise ParseError(f"expected {' or '.join(sorted(expected))}, found {val or 'end of input'!r}",
                         _loc(self.text, pos), expected)

    def expect(self, val):
        t = self.peek()
        if t[1] != val:
            self.error({val})
        return self.next()

    def name(self):
        t = self.peek()
        if t[0] != "name":
            self.error({"name"})
        self.next()
        text, uid = t[1].rsplit(".", 1)
        key = (text, int(uid))
        if key not in self.names:
            ir.reserve(int(uid))
            self.names[key] = ir.Name(text, int(uid))
        return self.names[key]

    # values
    def value(self):
        kind, val, _ = self.peek()
        if kind == "name":
            return ir.Var(self.name())
        if kind == "num":
            self.next()
            if re.fullmatch(r"-?\d+", val):
                return ir.int_lit(int(val))
            return ir.float_lit(float(val))
        if kind == "word" and val in ("Type", "Unit", "Int", "Float"):
            self.next()
            return ir.BaseType(val)
        if kind == "word" and val in _FLOAT_WORDS:
            self.next()
            return ir.float_lit(float(val))
        if val == "(":
            return self.compound()
        self.error({"value"})

    def compound(self):
        self.expect("(")
        kind, val, _ = self.peek()
        if val == ")":
            self.next()
            return ir.UNIT
        if val == "Fin":
            self.next()
            out = ir.FinType(self.value())
        elif val == "Either":
            self.next()
            a = self.value()
            out = ir.EitherType(a, self.value())
        elif val == "Ref":
            self.next()
            a = self.value()
            out = ir.RefType(a, self.value())
        elif val in ("Left", "Right"):
            self.next()
            t = self.value()
            x = self.value()
            out = ir.InjLeft(t, x) if val == "Left" else ir.InjRight(t, x)
        elif val == "vcase":
            self.next()
            out = ir.ValueCase(self.value(), self.value(), self.value())
        elif val == "\\" or val == "view":
            self.next()
            b = self.name()
            self.expect(":")
            annot = self.value()
            self.expect(".")
            body = self.paren_block()
            out = ir.Lam(b, annot, body) if val == "\\" else ir.View(b, annot, body)
        elif kind == "fin":
            self.next()
            self.expect(":")
            out = ir.FinLit(int(val[1:]), self.value())
        elif kind == "name" and self.peek(1)[1] == ":":
            b = self.name()
            self.expect(":")
            dom = self.value()
            self.expect("->")
            eff = self.effects()
            out = ir.ArrowType(b, dom, eff, self.value())
        else:
            a = self.value()
            op = self.peek()[1]
            if op == "=>":
                self.next()
                out = ir.ArrayType(a, self.value())
            elif op == "&":
                self.next()
                out = ir.PairType(a, self.value())
            elif op == ",":
                self.next()
                out = ir.Pair(a, self.value())
            else:
                out = a
        self.expect(")")
        return out

    def effects(self):
        self.expect("{")
        entries = []
        while self.peek()[1] != "}":
            kind = self.next()[1]
            if kind not in ("State", "Accum"):
                self.error({"State", "Accum"})
            entries.append(ir.Effect(kind, self.value()))
            if self.peek()[1] == ",":
                self.next()
        self.expect("}")
        return ir.EffectRow(tuple(entries))

    # blocks and expressions
    def paren_block(self):
        self.expect("(")
        b = self.block()
        self.expect(")")
        return b

    def block(self):
        if self.peek()[1] == "let":
            self.next()
            b = self.name()
            annot = None
            if self.peek()[1] == ":":
                self.next()
                annot = self.value()
            self.expect("=")
            bound = self.expr()
            self.expect("in")
            return ir.Let(b, annot, bound, self.block())
        return self.expr()

    def action(self):
        self.expect("(")
        h = self.name()
        r = self.name()
        self.expect(":")
        annot = self.value()
        self.expect(".")
        body = self.paren_block()
        self.expect(")")
        return ir.Action(h, r, annot, body)

    def expr(self):
        kind, val, _ = self.peek()
        if kind == "prim":
            self.next()
            op = val[5:]
            if op not in ir.PRIM_ARITY:
                self.error(set(f"prim:{o}" for o in ir.PRIM_ARITY))
            return ir.Prim(op, tuple(self.value() for _ in range(ir.PRIM_ARITY[op])))
        if kind != "word" or val not in self.EXPR_WORDS:
            if val == "(" and self.peek(1)[1] == "let":
                return self.paren_block()
            return ir.Ret(self.value())
        self.next()
        v = self.value
        match val:
            case "let":
                self.i -= 1
                return self.block()
            case "app":
                return ir.App(v(), v())
            case "index":
                return ir.Index(v(), v())
            case "fst":
                return ir.Fst(v())
            case "snd":
                return ir.Snd(v())
            case "slice":
                return ir.Slice(v(), v())
            case "get":
                return ir.Get(v())
            case "put":
                return ir.Put(v(), v())
            case "accum":
                return ir.Accumulate(v(), v())
            case "add":
                return ir.Add(v(), v())
            case "mul":
                return ir.Mul(v(), v())
            case "linearize":
                return ir.Linearize(v(), v())
            case "transpose":
                return ir.Transpose(v(), v())
            case "for":
                b = self.name()
                self.expect(":")
                annot = v()
                self.expect(".")
                return ir.For(b, annot, self.paren_block())
            case "case":
                s = v()
                self.expect("(")
                self.expect("Left")
                lb = self.name()
                self.expect(".")
                lbody = self.paren_block()
                self.expect(")")
                self.expect("(")
                self.expect("Right")
                rb = self.name()
                self.expect(".")
                rbody = self.paren_block()
                self.expect(")")
                return ir.Case(s, lb, lbody, rb, rbody)
            case "runState":
                init = v()
                return ir.RunState(init, self.action())
            case "runAccum":
                return ir.RunAccum(self.action())
        self.error({"expression"})


def read_block(text: str) -> ir.Expr:
    r = _Reader(text)
    e = r.block()
    if r.peek()[0] != "eof":
        r.error({"end of input"})
    return e


def read_value(text: str) -> ir.Value:
    r = _Reader(text)
    v = r.value()
    if r.peek()[0] != "eof":
        r.error({"end of input"})
    return v
