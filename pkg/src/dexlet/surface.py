"""Surface syntax: lexer with offside-rule layout, parser, and desugaring to core IR.

Programs are a sequence of declarations (``name = expr``, ``def f (x:T) : R = body``)
optionally followed by a final expression; the value of the program is its last
line.  Declarations whose right-hand side is a lambda behave as macros: every
use site gets a fresh copy, which is how the small prelude stays generic.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from . import core_ir as ir
from .core_ir import Meta, Var
from .errors import ParseError, UnboundVariable

# ---------------------------------------------------------------------------
# lexing

_TOKEN_RE = re.compile(r"""
    (?P<float>\d+\.\d+(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+)
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][\w']*)
  | (?P<op>=>|->|:=|\+=|==|<=|>=|[-+*/<>$\\.!,()\[\]{}:=|;@&])
""", re.VERBOSE)

KEYWORDS = {"for", "view", "def", "case", "of", "if", "then", "else"}
_OPEN = {"(": ")", "[": "]", "{": "}"}


@dataclass(slots=True)
class Token:
    kind: str  # int float ident kw op NEWLINE INDENT DEDENT EOF
    text: str
    line: int
    col: int
    spaced: bool = True  # whitespace (or line start) precedes the token

    @property
    def loc(self):
        return (self.line, self.col)


def tokenize(src: str) -> list:
    toks: list = []
    indents = [1]
    depth = 0
    first = True
    for lineno, raw in enumerate(src.split("\n"), start=1):
        line = raw.split("--", 1)[0] if "--" in raw else raw
        if not line.strip():
            continue
        col = len(line) - len(line.lstrip(" \t")) + 1
        if depth == 0:
            if first:
                if col != 1:
                    raise ParseError("program must start at column 1", (lineno, col))
                first = False
            elif col > indents[-1]:
                indents.append(col)
                toks.append(Token("INDENT", "", lineno, col))
            else:
                while col < indents[-1]:
                    indents.pop()
                    toks.append(Token("DEDENT", "", lineno, col))
                if col != indents[-1]:
                    raise ParseError("inconsistent indentation", (lineno, col), {"indentation"})
                toks.append(Token("NEWLINE", "", lineno, col))
        pos = col - 1
        spaced = True
        while pos < len(line):
            ch = line[pos]
            if ch in " \t":
                pos += 1
                spaced = True
                continue
            m = _TOKEN_RE.match(line, pos)
            if not m:
                raise ParseError(f"unexpected character {ch!r}", (lineno, pos + 1))
            kind = m.lastgroup
            text = m.group()
            if kind == "ident" and text in KEYWORDS:
                kind = "kw"
            toks.append(Token(kind, text, lineno, pos + 1, spaced))
            if text in _OPEN:
                depth += 1
            elif text in (")", "]", "}"):
                depth = max(0, depth - 1)
            pos = m.end()
            spaced = False
    last = toks[-1].line + 1 if toks else 1
    while len(indents) > 1:
        indents.pop()
        toks.append(Token("DEDENT", "", last, 1))
    toks.append(Token("EOF", "", last, 1))
    return toks


# ---------------------------------------------------------------------------
# surface AST

@dataclass
class S:
    loc: tuple = field(default=(0, 0), kw_only=True, compare=False)


@dataclass
class SName(S):
    name: str


@dataclass
class SNum(S):
    kind: str  # 'Int' | 'Float'
    val: object


@dataclass
class SUnit(S):
    pass


@dataclass
class SPair(S):
    items: list


@dataclass
class SList(S):
    items: list


@dataclass
class SFinLit(S):
    k: int


@dataclass
class SApp(S):
    fn: S
    args: list


@dataclass
class SBin(S):
    op: str
    left: S
    right: S


@dataclass
class SNeg(S):
    arg: S


@dataclass
class SIndex(S):
    arr: S
    idx: S


@dataclass
class SSlice(S):
    ref: S
    idx: S


@dataclass
class SLam(S):
    params: list  # of (name, type or None)
    body: S


@dataclass
class SFor(S):
    binders: list  # of (name, type or None)
    body: S
    view: bool = False


@dataclass
class SIf(S):
    cond: S
    then: S
    other: S


@dataclass
class SCase(S):
    scrut: S
    lname: str
    lbody: S
    rname: str
    rbody: S


@dataclass
class SBlock(S):
    stmts: list


@dataclass
class SBind(S):
    pattern: object  # str or list of str
    ty: object
    expr: S


@dataclass
class SDef(S):
    name: str
    params: list
    ret: object
    body: S


@dataclass
class SAssign(S):
    op: str  # ':=' | '+='
    lhs: S
    rhs: S


@dataclass
class SExprStmt(S):
    expr: S


# types
@dataclass
class TName(S):
    name: str


@dataclass
class TFin(S):
    size: S


@dataclass
class TArr(S):
    dom: object
    cod: object


@dataclass
class TArrow(S):
    dom: object
    effects: list  # of (kind, region name)
    cod: object


@dataclass
class TPair(S):
    left: object
    right: object


@dataclass
class TEither(S):
    left: object
    right: object


@dataclass
class TRef(S):
    region: object
    payload: object


@dataclass
class TUnit(S):
    pass


@dataclass
class SourceProgram:
    declarations: list  # statements (SBind / SDef / SExprStmt ...)
    text: str = ""

    @property
    def final(self):
        return self.declarations[-1] if self.declarations else None


# ---------------------------------------------------------------------------
# parsing

_ARG_START_KINDS = {"int", "float", "ident"}
_ARG_START_OPS = {"(", "[", "@", "\\"}


class Parser:
    def __init__(self, src: str):
        self.src = src
        self.toks = tokenize(src)
        self.i = 0

    # token helpers
    def peek(self, k=0) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def next(self) -> Token:
        t = self.toks[self.i]
        self.i += 1
        return t

    def at(self, text, kind=None) -> bool:
        t = self.peek()
        return t.text == text and (kind is None or t.kind == kind) and t.kind not in ("NEWLINE", "INDENT", "DEDENT", "EOF")

    def error(self, expected, tok=None):
        tok = tok or self.peek()
        found = tok.text or tok.kind.lower()
        exp = sorted(expected)
        raise ParseError(f"expected {', '.join(exp)}; found {found!r}", tok.loc, exp)

    def expect(self, text) -> Token:
        if not self.at(text):
            self.error({repr(text)})
        return self.next()

    def ident(self) -> Token:
        t = self.peek()
        if t.kind != "ident":
            self.error({"identifier"})
        return self.next()

    # program
    def program(self) -> SourceProgram:
        if self.peek().kind == "EOF":
            raise ParseError("empty program", (1, 1), {"declaration"})
        decls = [self.statement()]
        while self.peek().kind == "NEWLINE" or self.at(";"):
            self.next()
            if self.peek().kind == "EOF":
                break
            decls.append(self.statement())
        if self.peek().kind != "EOF":
            self.error({"newline", "end of input"})
        return SourceProgram(decls, self.src)

    # statements and blocks
    def statement(self):
        t = self.peek()
        loc = t.loc
        if t.kind == "kw" and t.text == "def":
            return self.definition()
        if t.kind == "ident" and (self.peek(1).text == "=" or
                                  (self.peek(1).text == ":" and self.peek(1).kind == "op")):
            name = self.next().text
            ty = None
            if self.at(":"):
                self.next()
                ty = self.type_()
            self.expect("=")
            if isinstance(ty, TName) and ty.name == "Type":
                # a type alias: the right-hand side is read as a type
                return SBind(name, ty, self.type_(), loc=loc)
            return SBind(name, ty, self.body(), loc=loc)
        if t.text == "(" and self._tuple_pattern_ahead():
            self.next()
            names = [self.ident().text]
            while self.at(","):
                self.next()
                names.append(self.ident().text)
            self.expect(")")
            self.expect("=")
            return SBind(names, None, self.body(), loc=loc)
        e = self.expr()
        if self.at(":=") or self.at("+="):
            op = self.next().text
            return SAssign(op, e, self.expr(), loc=loc)
        return SExprStmt(e, loc=loc)

    def _tuple_pattern_ahead(self) -> bool:
        j = self.i + 1
        while self.toks[j].kind == "ident" and self.toks[j + 1].text == ",":
            j += 2
        return self.toks[j].kind == "ident" and self.toks[j + 1].text == ")" and self.toks[j + 2].text == "="

    def definition(self):
        loc = self.next().loc
        name = self.ident().text
        params = []
        while not (self.at("=") or self.at(":")):
            if self.at("("):
                self.next()
                p = self.ident().text
                ty = None
                if self.at(":"):
                    self.next()
                    ty = self.type_()
                self.expect(")")
                params.append((p, ty))
            elif self.peek().kind == "ident":
                params.append((self.next().text, None))
            else:
                self.error({"parameter", "'='", "':'"})
        ret = None
        if self.at(":"):
            self.next()
            ret = self.type_()
        self.expect("=")
        return SDef(name, params, ret, self.body(), loc=loc)

    def body(self):
        """Either an indented block on the following lines or inline statements."""
        t = self.peek()
        if t.kind == "INDENT":
            self.next()
            stmts = [self.statement()]
            while self.peek().kind == "NEWLINE" or self.at(";"):
                self.next()
                stmts.append(self.statement())
            if self.peek().kind != "DEDENT":
                self.error({"newline", "end of block"})
            self.next()
            return SBlock(stmts, loc=t.loc)
        stmts = [self.statement()]
        while self.at(";"):
            self.next()
            stmts.append(self.statement())
        if len(stmts) == 1 and isinstance(stmts[0], SExprStmt):
            return stmts[0].expr
        return SBlock(stmts, loc=t.loc)

    # expressions
    def expr(self):
        t = self.peek()
        if t.kind == "kw" and t.text in ("for", "view"):
            return self.for_expr()
        if t.text == "\\" and t.kind == "op":
            return self.lam()
        if t.kind == "kw" and t.text == "if":
            return self.if_expr()
        if t.kind == "kw" and t.text == "case":
            return self.case_expr()
        left = self.compare()
        if self.at("$"):
            loc = self.next().loc
            return SApp(left, [self.expr()], loc=loc)
        return left

    def binders(self):
        out = []
        while self.peek().kind == "ident":
            name = self.next().text
            ty = None
            if self.at(":"):
                self.next()
                ty = self.type_()
            out.append((name, ty))
        if not out:
            self.error({"binder"})
        self.expect(".")
        return out

    def for_expr(self):
        t = self.next()
        bs = self.binders()
        return SFor(bs, self.body(), view=(t.text == "view"), loc=t.loc)

    def lam(self):
        t = self.next()
        return SLam(self.binders(), self.body(), loc=t.loc)

    def if_expr(self):
        t = self.next()
        c = self.expr()
        self._skip_newline_before("then")
        self.expect("then")
        a = self.body()
        self._skip_newline_before("else")
        self.expect("else")
        b = self.body()
        return SIf(c, a, b, loc=t.loc)

    def _skip_newline_before(self, word):
        if self.peek().kind == "NEWLINE" and self.peek(1).text == word:
            self.next()
        elif self.peek().kind == "INDENT" and self.peek(1).text == word:
            # `then`/`else` on an indented continuation line
            self.next()
            self._pending_dedent = getattr(self, "_pending_dedent", 0) + 1

    def case_expr(self):
        t = self.next()
        scrut = self.expr()
        self.expect("of")
        block = self.peek().kind == "INDENT"
        if block:
            self.next()
        lname, lbody = self.alt("Left")
        if block:
            if self.peek().kind != "NEWLINE":
                self.error({"newline"})
            self.next()
        else:
            self.expect("|")
        rname, rbody = self.alt("Right")
        if block:
            if self.peek().kind != "DEDENT":
                self.error({"end of case block"})
            self.next()
        return SCase(scrut, lname, lbody, rname, rbody, loc=t.loc)

    def alt(self, con):
        t = self.ident()
        if t.text != con:
            self.error({con}, t)
        name = self.ident().text
        self.expect("->")
        return name, self.body()

    def compare(self):
        left = self.arith()
        for op in ("<", ">", "<=", ">=", "=="):
            if self.at(op, "op"):
                loc = self.next().loc
                return SBin(op, left, self.arith(), loc=loc)
        return left

    def arith(self):
        left = self.term()
        while self.at("+", "op") or self.at("-", "op"):
            t = self.next()
            left = SBin(t.text, left, self.term(), loc=t.loc)
        return left

    def term(self):
        left = self.unary()
        while self.at("*", "op") or self.at("/", "op"):
            t = self.next()
            left = SBin(t.text, left, self.unary(), loc=t.loc)
        return left

    def unary(self):
        if self.at("-", "op"):
            t = self.next()
            arg = self.unary()
            if isinstance(arg, SNum):
                return SNum(arg.kind, -arg.val, loc=t.loc)
            return SNeg(arg, loc=t.loc)
        return self.application()

    def _arg_start(self) -> bool:
        t = self.peek()
        if t.kind in _ARG_START_KINDS:
            return True
        return t.kind == "op" and t.text in _ARG_START_OPS

    def application(self):
        head = self.postfix()
        args = []
        while self._arg_start():
            if self.at("\\"):
                args.append(self.lam())
                break
            args.append(self.postfix())
        if args:
            return SApp(head, args, loc=head.loc)
        return head

    def postfix(self):
        e = self.atom()
        while True:
            t = self.peek()
            if t.text == "." and t.kind == "op" and not t.spaced:
                nxt = self.peek(1)
                if nxt.spaced or not (nxt.kind in ("ident", "int") or nxt.text in ("(", "@")):
                    break
                self.next()
                e = SIndex(e, self.atom(), loc=t.loc)
            elif t.text == "!" and t.kind == "op":
                self.next()
                e = SSlice(e, self.atom(), loc=t.loc)
            else:
                break
        return e

    def atom(self):
        t = self.peek()
        if t.kind == "int":
            self.next()
            return SNum("Int", int(t.text), loc=t.loc)
        if t.kind == "float":
            self.next()
            return SNum("Float", float(t.text), loc=t.loc)
        if t.kind == "ident":
            self.next()
            return SName(t.text, loc=t.loc)
        if t.text == "@" and t.kind == "op":
            self.next()
            k = self.peek()
            if k.kind != "int":
                self.error({"ordinal"})
            self.next()
            return SFinLit(int(k.text), loc=t.loc)
        if t.text == "(" and t.kind == "op":
            self.next()
            if self.at(")"):
                self.next()
                return SUnit(loc=t.loc)
            items = [self.expr()]
            while self.at(","):
                self.next()
                items.append(self.expr())
            self.expect(")")
            if len(items) == 1:
                return items[0]
            return SPair(items, loc=t.loc)
        if t.text == "[" and t.kind == "op":
            self.next()
            items = [self.expr()]
            while self.at(","):
                self.next()
                items.append(self.expr())
            self.expect("]")
            return SList(items, loc=t.loc)
        self.error({"expression"})

    # types
    def type_(self):
        t = self.peek()
        dom = self.type_app()
        if self.at("=>"):
            self.next()
            return TArr(dom, self.type_(), loc=t.loc)
        if self.at("->"):
            self.next()
            effs = []
            if self.at("{"):
                self.next()
                while not self.at("}"):
                    kind = self.ident()
                    if kind.text not in ("State", "Accum"):
                        self.error({"State", "Accum"}, kind)
                    effs.append((kind.text, self.ident().text))
                    if self.at(","):
                        self.next()
                self.expect("}")
            return TArrow(dom, effs, self.type_(), loc=t.loc)
        return dom

    def type_app(self):
        t = self.peek()
        left = self.type_head()
        if self.at("&"):
            self.next()
            return TPair(left, self.type_app(), loc=t.loc)
        return left

    def type_head(self):
        t = self.peek()
        if t.kind == "ident" and t.text == "Fin":
            self.next()
            return TFin(self.atom() if not self.at("(") else self._paren_expr(), loc=t.loc)
        if t.kind == "ident" and t.text == "Either":
            self.next()
            a = self.type_atomic()
            return TEither(a, self.type_atomic(), loc=t.loc)
        if t.kind == "ident" and t.text == "Ref":
            self.next()
            a = self.type_atomic()
            return TRef(a, self.type_atomic(), loc=t.loc)
        return self.type_atomic()

    def _paren_expr(self):
        self.expect("(")
        e = self.expr()
        self.expect(")")
        return e

    def type_atomic(self):
        t = self.peek()
        if t.kind == "ident":
            self.next()
            return TName(t.text, loc=t.loc)
        if self.at("("):
            self.next()
            if self.at(")"):
                self.next()
                return TUnit(loc=t.loc)
            a = self.type_()
            if self.at(","):
                parts = [a]
                while self.at(","):
                    self.next()
                    parts.append(self.type_())
                self.expect(")")
                out = parts[-1]
                for p in reversed(parts[:-1]):
                    out = TPair(p, out, loc=t.loc)
                return out
            self.expect(")")
            return a
        self.error({"type"})


def parse(text: str) -> SourceProgram:
    return Parser(text).program()


def parse_expr(text: str) -> S:
    p = Parser(text)
    e = p.expr()
    if p.peek().kind != "EOF":
        p.error({"end of input"})
    return e


def parse_type(text: str):
    p = Parser(text)
    t = p.type_()
    if p.peek().kind != "EOF":
        p.error({"end of input"})
    return t


# ---------------------------------------------------------------------------
# desugaring

@dataclass
class Macro:
    params: list  # of (name, type or None)
    body: S
    env: dict
    ret: object = None
    name: str = "<lambda>"
    loc: tuple = (0, 0)


BUILTIN_TYPES = {"Float": ir.FLOAT_T, "Int": ir.INT_T, "Unit": ir.UNIT_T, "Type": ir.TYPE,
                 "Bool": ir.BOOL_T}

BUILTIN_FNS = {"fst", "snd", "get", "runState", "runAccum", "yieldState", "yieldAccum",
               "linearize", "transpose", "grad", "Left", "Right", "Fin", "Either", "Ref",
               "ordinal", "size", "fromOrdinal", "IToF", "recip"}


# bindings of these values are substituted directly; anything larger gets a let
# so that it is typechecked even when unused
_INLINE_VALUES = (Var, ir.Lit, ir.FinLit, ir.BaseType, ir.FinType, ir.ArrayType, ir.PairType,
                  ir.EitherType, ir.RefType, ir.ArrowType)


class Builder:
    def __init__(self, desugarer):
        self.lets: list = []
        self.d = desugarer

    def emit(self, e: ir.Expr, hint: str = "t", annot=None, loc=None) -> Var:
        if isinstance(e, ir.Ret):
            return e.val
        name = ir.fresh(hint)
        self.d.note(e, loc)
        self.lets.append((name, annot, e))
        return Var(name)

    def bind(self, name: ir.Name, e: ir.Expr, annot=None, loc=None):
        self.d.note(e, loc)
        self.lets.append((name, annot, e))

    def finish(self, result: ir.Expr) -> ir.Expr:
        for name, annot, bound in reversed(self.lets):
            result = ir.Let(name, annot, bound, result)
        return result


class Desugarer:
    def __init__(self):
        self.spans: dict = {}
        self.loc = (0, 0)
        # spans are keyed by id(); keeping noted nodes alive stops ids being reused
        self._alive: list = []

    def note(self, node, loc=None):
        if node is not None and id(node) not in self.spans:
            self.spans[id(node)] = loc or self.loc
            self._alive.append(node)
        return node

    def error(self, msg, loc=None):
        from .errors import DexTypeError

        return DexTypeError(msg, loc or self.loc)

    # -- entry points ------------------------------------------------------
    def program(self, prog: SourceProgram, env: dict | None = None, extra=()) -> ir.Expr:
        env = dict(env or {})
        stmts = list(prog.declarations) + list(extra)
        b = Builder(self)
        result = self.statements(stmts, env, b, top=True)
        return b.finish(result)

    def load_prelude(self, text: str) -> dict:
        env: dict = {}
        b = Builder(self)
        self.statements(parse(text).declarations, env, b, top=True)
        if b.lets:
            raise AssertionError("prelude must only contain macros and type aliases")
        self.spans.clear()
        self._alive.clear()
        return env

    # -- statements --------------------------------------------------------
    def statements(self, stmts, env, b: Builder, top=False) -> ir.Expr:
        result = None
        for k, st in enumerate(stmts):
            last = k == len(stmts) - 1
            self.loc = st.loc
            if isinstance(st, SDef):
                params = st.params
                if not params:
                    # a constant definition
                    body = st.body
                    result = self._bind_name(st.name, st.ret, body, env, b, st.loc)
                else:
                    env[st.name] = Macro(params, st.body, env, st.ret, st.name, st.loc)
                    result = None
                if last:
                    result = self.as_expr(SName(st.name, loc=st.loc), env, b)
            elif isinstance(st, SBind):
                if isinstance(st.pattern, list):
                    v = self.value(st.expr, env, b)
                    for name, comp in zip(st.pattern, _tuple_parts(v, len(st.pattern), self, b, st.pattern)):
                        env[name] = comp
                    result = ir.Ret(v)
                elif isinstance(st.ty, TName) and st.ty.name == "Type":
                    env[st.pattern] = self.type_(st.expr, env, b)
                    result = ir.Ret(env[st.pattern])
                elif isinstance(st.expr, SLam):
                    env[st.pattern] = Macro(st.expr.params, st.expr.body, env, None, st.pattern, st.expr.loc)
                    result = self.as_expr(SName(st.pattern, loc=st.loc), env, b) if last else None
                else:
                    result = self._bind_name(st.pattern, st.ty, st.expr, env, b, st.loc)
            elif isinstance(st, SAssign):
                ref = self.value(st.lhs, env, b)
                val = self.value(st.rhs, env, b)
                e = ir.Put(ref, val) if st.op == ":=" else ir.Accumulate(ref, val)
                self.note(e, st.loc)
                if last:
                    result = e
                else:
                    b.emit(e, "_", loc=st.loc)
            elif isinstance(st, SExprStmt):
                e = self.as_expr(st.expr, env, b)
                if last:
                    result = e
                else:
                    b.emit(e, "_", loc=st.loc)
            else:
                raise self.error(f"unexpected statement {st!r}")
        if result is None:
            raise self.error("block has no result")
        return result

    def _bind_name(self, name, ty, expr, env, b, loc):
        annot = self.type_(ty, env, b) if ty is not None else None
        e = self.as_expr(expr, env, b)
        if isinstance(e, ir.Ret) and annot is None and isinstance(e.val, _INLINE_VALUES):
            env[name] = e.val
            return e
        v = ir.fresh(name)
        b.bind(v, e, annot, loc)
        env[name] = Var(v)
        return ir.Ret(Var(v))

    def block(self, e: S, env: dict) -> ir.Expr:
        """Desugar ``e`` in a fresh scope, producing a self-contained block."""
        b = Builder(self)
        env = dict(env)
        if isinstance(e, SBlock):
            res = self.statements(e.stmts, env, b)
        else:
            res = self.as_expr(e, env, b)
        return b.finish(res)

    # -- expressions -------------------------------------------------------
    def value(self, e: S, env, b: Builder) -> ir.Value:
        out = self.as_expr(e, env, b)
        return b.emit(out, _hint(e), loc=e.loc)

    def as_expr(self, e: S, env, b: Builder) -> ir.Expr:
        self.loc = e.loc
        out = self._expr(e, env, b)
        return self.note(out, e.loc)

    def _expr(self, e, env, b):
        match e:
            case SNum("Int", n):
                return ir.Ret(ir.int_lit(n))
            case SNum(_, x):
                return ir.Ret(ir.float_lit(x))
            case SUnit():
                return ir.Ret(ir.UNIT)
            case SName(name):
                return ir.Ret(self.name_value(name, env, b))
            case SPair(items):
                vals = [self.value(x, env, b) for x in items]
                return ir.Ret(ir.tuple_value(vals))
            case SFinLit(k):
                return ir.Prim("fromOrdinal", (Meta("@", e.loc), ir.int_lit(k)))
            case SList(items):
                return self.list_literal(items, env, b)
            case SBin(op, l, r):
                return self.binop(op, l, r, env, b)
            case SNeg(x):
                return ir.Prim("neg", (self.value(x, env, b),))
            case SIndex(a, i):
                return ir.Index(self.value(a, env, b), self.value(i, env, b))
            case SSlice(r, i):
                return ir.Slice(self.value(r, env, b), self.value(i, env, b))
            case SLam():
                return ir.Ret(self.lam(e.params, e.body, env))
            case SFor(binders, body, view):
                return self.for_(binders, body, view, env, b)
            case SIf(c, t, f):
                cv = self.value(c, env, b)
                return ir.Case(cv, ir.fresh("_"), self.block(f, env), ir.fresh("_"), self.block(t, env))
            case SCase(s, ln, lbody, rn, rbody):
                sv = self.value(s, env, b)
                lname, rname = ir.fresh(ln), ir.fresh(rn)
                return ir.Case(sv, lname, self.block(lbody, {**env, ln: Var(lname)}),
                               rname, self.block(rbody, {**env, rn: Var(rname)}))
            case SBlock(stmts):
                env2 = dict(env)
                return self.statements(stmts, env2, b)
            case SApp(fn, args):
                return self.apply(fn, args, env, b)
            case TName() | TFin() | TArr() | TArrow() | TPair() | TEither() | TRef() | TUnit():
                return ir.Ret(self.type_(e, env, b))
        raise self.error(f"cannot desugar {type(e).__name__}")

    def name_value(self, name, env, b):
        if name in env:
            got = env[name]
            if isinstance(got, Macro):
                return self.macro_lam(got)
            return got
        if name in BUILTIN_TYPES:
            return BUILTIN_TYPES[name]
        if name == "True":
            return ir.InjRight(ir.UNIT_T, ir.UNIT)
        if name == "False":
            return ir.InjLeft(ir.UNIT_T, ir.UNIT)
        if name in BUILTIN_FNS:
            raise self.error(f"{name} must be applied to its arguments")
        raise UnboundVariable(f"unbound variable {name}", self.loc)

    def lam(self, params, body, env, ret=None) -> ir.Value:
        (p, ty), rest = params[0], params[1:]
        name = ir.fresh(p)
        b0 = Builder(self)
        annot = self.type_(ty, env, b0) if ty is not None else Meta(p, self.loc)
        if b0.lets:
            raise self.error("parameter types must be values")
        env2 = {**env, p: Var(name)}
        if rest:
            inner = ir.Ret(self.lam(rest, body, env2, ret))
        else:
            inner = self.block(body, env2)
            if ret is not None:
                rb = Builder(self)
                rt = self.type_(ret, env2, rb)
                r = ir.fresh("r")
                inner = rb.finish(ir.Let(r, rt, inner, ir.Ret(Var(r))))
        out = ir.Lam(name, annot, inner)
        return self.note(out)

    def macro_lam(self, m: Macro) -> ir.Value:
        saved, self.loc = self.loc, m.loc
        try:
            return self.lam(m.params, m.body, m.env, m.ret)
        finally:
            self.loc = saved

    def expand(self, m: Macro, args, env, b) -> ir.Expr:
        n = len(m.params)
        vals = [self.value(a, env, b) for a in args[:n]]
        env2 = dict(m.env)
        ann_checks = []
        for (p, ty), v in zip(m.params, vals):
            env2[p] = v
            if ty is not None:
                ann_checks.append((ty, v))
        for ty, v in ann_checks:
            t = self.type_(ty, env2, b)
            # record the declared parameter type so the checker enforces it
            b.emit(ir.Let(ir.fresh("_"), t, ir.Ret(v), ir.Ret(ir.UNIT)), "_")
        body = self.block(m.body, env2)
        if m.ret is not None:
            rt = self.type_(m.ret, env2, b)
            r = ir.fresh(m.name)
            out = ir.Let(r, rt, body, ir.Ret(Var(r)))
        else:
            out = body
        if len(args) > n:
            f = b.emit(out, m.name)
            return self.apply_values(f, args[n:], env, b)
        return out

    def apply_values(self, f, args, env, b):
        out = None
        for k, a in enumerate(args):
            x = self.value(a, env, b)
            out = ir.App(f, x)
            if k < len(args) - 1:
                f = b.emit(out, "app")
        return out

    def fn_value(self, e, env, b) -> ir.Value:
        if isinstance(e, SName) and isinstance(env.get(e.name), Macro):
            return self.macro_lam(env[e.name])
        if isinstance(e, SLam):
            return self.lam(e.params, e.body, env)
        return self.value(e, env, b)

    def action(self, f, env, ann=None) -> ir.Action:
        if not isinstance(f, SLam) or len(f.params) not in (1, 2):
            raise self.error("a handler expects a lambda of the form \\ref. body or \\h ref. body")
        if len(f.params) == 2:
            (hn, _), (rn, rty) = f.params
        else:
            hn, (rn, rty) = None, f.params[0]
        h, r = ir.fresh(hn or "h"), ir.fresh(rn)
        env2 = dict(env)
        if hn:
            env2[hn] = Var(h)
        env2[rn] = Var(r)
        annot = ann if ann is not None else Meta(rn, f.loc)
        if rty is not None:
            b0 = Builder(self)
            t = self.type_(rty, env2, b0)
            if not isinstance(t, ir.RefType):
                raise self.error("reference annotation must be a Ref type")
            annot = t.payload
        body = self.block(f.body, env2)
        return ir.Action(h, r, annot, body)

    def apply(self, fn, args, env, b):
        if isinstance(fn, SName) and fn.name not in env:
            name = fn.name
            if name in BUILTIN_FNS:
                return self.builtin(name, args, env, b)
        if isinstance(fn, SName) and isinstance(env.get(fn.name), Macro):
            m = env[fn.name]
            if len(args) >= len(m.params):
                return self.expand(m, args, env, b)
        if isinstance(fn, SApp):
            return self.apply(fn.fn, fn.args + args, env, b)
        f = self.fn_value(fn, env, b)
        return self.apply_values(f, args, env, b)

    def _arity(self, name, args, n):
        if len(args) < n:
            raise self.error(f"{name} expects {n} argument{'s' if n > 1 else ''}")

    def builtin(self, name, args, env, b):
        n = {"fst": 1, "snd": 1, "get": 1, "runState": 2, "runAccum": 1, "yieldState": 2,
             "yieldAccum": 1, "linearize": 2, "transpose": 2, "grad": 2, "Left": 1, "Right": 1,
             "Fin": 1, "Either": 2, "Ref": 2, "ordinal": 1, "size": 1, "fromOrdinal": 2,
             "IToF": 1, "recip": 1}[name]
        self._arity(name, args, n)
        extra = args[n:]
        args = args[:n]
        v = lambda a: self.value(a, env, b)  # noqa: E731
        match name:
            case "fst":
                out = ir.Fst(v(args[0]))
            case "snd":
                out = ir.Snd(v(args[0]))
            case "get":
                out = ir.Get(v(args[0]))
            case "runState" | "yieldState":
                init = v(args[0])
                out = ir.RunState(init, self.action(args[1], env))
                if name == "yieldState":
                    out = ir.Snd(b.emit(out, "st"))
            case "runAccum" | "yieldAccum":
                out = ir.RunAccum(self.action(args[0], env))
                if name == "yieldAccum":
                    out = ir.Snd(b.emit(out, "acc"))
            case "linearize":
                f = self.fn_value(args[0], env, b)
                out = ir.Linearize(f, v(args[1]))
            case "transpose":
                f = self.fn_value(args[0], env, b)
                out = ir.Transpose(f, v(args[1]))
            case "grad":
                f = self.fn_value(args[0], env, b)
                lin = b.emit(ir.Linearize(f, v(args[1])), "lin")
                df = b.emit(ir.Snd(lin), "df")
                out = ir.Transpose(df, ir.float_lit(1.0))
            case "Left":
                out = ir.Ret(ir.InjLeft(Meta("Right type", self.loc), v(args[0])))
            case "Right":
                out = ir.Ret(ir.InjRight(Meta("Left type", self.loc), v(args[0])))
            case "Fin":
                out = ir.Ret(ir.FinType(v(args[0])))
            case "Either":
                out = ir.Ret(ir.EitherType(v(args[0]), v(args[1])))
            case "Ref":
                out = ir.Ret(ir.RefType(v(args[0]), v(args[1])))
            case "ordinal":
                out = ir.Prim("ordinal", (Meta("index set", self.loc), v(args[0])))
            case "size":
                out = ir.Prim("size", (v(args[0]),))
            case "fromOrdinal":
                out = ir.Prim("fromOrdinal", (v(args[0]), v(args[1])))
            case "IToF":
                out = ir.Prim("itof", (v(args[0]),))
            case "recip":
                out = ir.Prim("recip", (v(args[0]),))
        if extra:
            f = b.emit(out, name)
            return self.apply_values(f, extra, env, b)
        return out

    def binop(self, op, l, r, env, b):
        a = self.value(l, env, b)
        c = self.value(r, env, b)
        match op:
            case "+":
                return ir.Add(a, c)
            case "*":
                return ir.Mul(a, c)
            case "-":
                return ir.Prim("sub", (a, c))
            case "/":
                inv = b.emit(ir.Prim("recip", (c,)), "inv")
                return ir.Mul(a, inv)
            case "<" | ">" | "<=" | ">=" | "==":
                return ir.Prim({"<": "lt", ">": "gt", "<=": "le", ">=": "ge", "==": "eq"}[op], (a, c))
        raise self.error(f"unknown operator {op}")

    def for_(self, binders, body, view, env, b):
        (name, ty), rest = binders[0], binders[1:]
        i = ir.fresh(name)
        annot = self.type_(ty, env, b) if ty is not None else Meta(name, self.loc)
        env2 = {**env, name: Var(i)}
        if rest:
            inner_b = Builder(self)
            inner = self.for_(rest, body, view, env2, inner_b)
            inner = inner_b.finish(inner)
        else:
            inner = self.block(body, env2)
        if view:
            return ir.Ret(self.note(ir.View(i, annot, inner)))
        return ir.For(i, annot, inner)

    def list_literal(self, items, env, b):
        vals = [self.value(x, env, b) for x in items]
        n = len(vals)
        dom = ir.FinType(ir.int_lit(n))
        i = ir.fresh("i")
        init = b.emit(ir.For(i, dom, ir.Ret(vals[0])), "lit")
        if n == 1:
            return ir.Ret(init)
        h, r = ir.fresh("h"), ir.fresh("r")
        ab = Builder(self)
        for k in range(1, n):
            ik = ab.emit(ir.Prim("fromOrdinal", (dom, ir.int_lit(k))), "k")
            rk = ab.emit(ir.Slice(Var(r), ik), "rk")
            ab.emit(ir.Put(rk, vals[k]), "_")
        body = ab.finish(ir.Ret(ir.UNIT))
        st = b.emit(ir.RunState(init, ir.Action(h, r, ir.ArrayType(dom, Meta("element")), body)), "st")
        return ir.Snd(st)

    # -- types -------------------------------------------------------------
    def type_(self, t, env, b) -> ir.Value:
        match t:
            case None:
                return None
            case TName(name):
                if name in env:
                    got = env[name]
                    if isinstance(got, Macro):
                        raise self.error(f"{name} is a function, not a type")
                    return got
                if name in BUILTIN_TYPES:
                    return BUILTIN_TYPES[name]
                raise UnboundVariable(f"unbound type {name}", t.loc)
            case TUnit():
                return ir.UNIT_T
            case TFin(size):
                return ir.FinType(self.value(size, env, b))
            case TArr(d, c):
                return ir.ArrayType(self.type_(d, env, b), self.type_(c, env, b))
            case TPair(x, y):
                return ir.PairType(self.type_(x, env, b), self.type_(y, env, b))
            case TEither(x, y):
                return ir.EitherType(self.type_(x, env, b), self.type_(y, env, b))
            case TRef(h, a):
                return ir.RefType(self.type_(h, env, b), self.type_(a, env, b))
            case TArrow(d, effs, c):
                dom = self.type_(d, env, b)
                entries = []
                for kind, region in effs:
                    rv = self.type_(TName(region, loc=t.loc), env, b)
                    entries.append(ir.Effect(kind, rv))
                return ir.ArrowType(ir.fresh("_"), dom, ir.EffectRow(tuple(entries)), self.type_(c, env, b))
        # a type given in expression syntax, e.g. `Fin 3` as an argument
        return self.value(t, env, b)


def _tuple_parts(v, n, d: Desugarer, b: Builder, names):
    out = []
    cur = v
    for k in range(n - 1):
        out.append(b.emit(ir.Fst(cur), names[k]))
        cur = b.emit(ir.Snd(cur), "rest") if k < n - 2 else b.emit(ir.Snd(cur), names[-1])
    out.append(cur)
    return out


def _hint(e) -> str:
    match e:
        case SName(n):
            return n
        case SApp(SName(n), _):
            return n if n.isidentifier() else "t"
        case SFor():
            return "tbl"
        case SIndex():
            return "x"
    return "t"


# ---------------------------------------------------------------------------
# prelude

PRELUDE = r"""
Complex : Type = (Float, Float)
def sum x = yieldAccum \acc. for i. acc += x.i
def dot x y = sum (for i. x.i * y.i)
def linspace n lo hi = for i:n. lo + (hi - lo) * (IToF (ordinal i) / IToF (size n))
def BToF b = if b then 1.0 else 0.0
def MkComplex re im = (re, im)
def cadd a b = (fst a + fst b, snd a + snd b)
def cmul a b = ((fst a * fst b) - (snd a * snd b), (fst a * snd b) + (snd a * fst b))
def cabs2 z = (fst z * fst z) + (snd z * snd z)
"""


def desugar(p: SourceProgram, extra=(), with_prelude: bool = True, spans: dict | None = None,
            inputs: dict | None = None):
    """Desugar a parsed program to core IR.  Returns (expr, spans).

    ``inputs`` maps surface names to core names that stay free in the result.
    """
    d = Desugarer()
    if spans is not None:
        d.spans = spans
    env = d.load_prelude(PRELUDE) if with_prelude else {}
    for name, core_name in (inputs or {}).items():
        env[name] = Var(core_name)
    e = d.program(p, env, extra)
    return e, d.spans


def desugar_type(text: str) -> ir.Value:
    """Core type of a closed surface type such as ``(Fin 3)=>Float``."""
    d = Desugarer()
    env = d.load_prelude(PRELUDE)
    return d.type_(parse_type(text), env, Builder(d))


# ---------------------------------------------------------------------------
# surface pretty-printer (used by --dump-ir=parsed)

def show_surface(p: SourceProgram) -> str:
    return "\n".join(_show_stmt(s, 0) for s in p.declarations)


def _show_stmt(s, ind) -> str:
    pad = " " * ind
    match s:
        case SDef(name, params, ret, body):
            ps = " ".join(f"({n}:{_show_type(t)})" if t is not None else n for n, t in params)
            r = f" : {_show_type(ret)}" if ret is not None else ""
            return f"{pad}def {name} {ps}{r} =" + _show_body(body, ind)
        case SBind(pat, ty, e):
            lhs = pat if isinstance(pat, str) else "(" + ", ".join(pat) + ")"
            if ty is not None:
                if isinstance(ty, TName) and ty.name == "Type":
                    return f"{pad}{lhs} : Type = {_show_type(e)}"
                lhs += f" : {_show_type(ty)}"
            return f"{pad}{lhs} =" + _show_body(e, ind)
        case SAssign(op, l, r):
            return f"{pad}{_show(l)} {op} {_show(r)}"
        case SExprStmt(e):
            if isinstance(e, SBlock):
                return "\n".join(_show_stmt(x, ind) for x in e.stmts)
            return pad + _show(e, ind)
    raise TypeError(s)


def _show_body(e, ind) -> str:
    if isinstance(e, SBlock):
        return "\n" + "\n".join(_show_stmt(x, ind + 2) for x in e.stmts)
    return " " + _show(e, ind)


def _show(e, ind=0) -> str:
    match e:
        case SNum("Int", n):
            return str(n) if n >= 0 else f"({n})"
        case SNum(_, x):
            return repr(x) if x >= 0 else f"({x!r})"
        case SName(n):
            return n
        case SUnit():
            return "()"
        case SPair(items):
            return "(" + ", ".join(_show(x, ind) for x in items) + ")"
        case SList(items):
            return "[" + ", ".join(_show(x, ind) for x in items) + "]"
        case SFinLit(k):
            return f"@{k}"
        case SApp(f, args):
            return "(" + " ".join([_show(f, ind)] + [_show(a, ind) for a in args]) + ")"
        case SBin(op, l, r):
            return f"({_show(l, ind)} {op} {_show(r, ind)})"
        case SNeg(x):
            return f"(-{_show(x, ind)})"
        case SIndex(a, i):
            return f"{_show(a, ind)}.{_atomic(i, ind)}"
        case SSlice(r, i):
            return f"{_show(r, ind)}!{_atomic(i, ind)}"
        case SLam(params, body):
            return "(\\" + _show_binders(params) + "." + _show_body(body, ind) + ")" \
                if not isinstance(body, SBlock) else "\\" + _show_binders(params) + "." + _show_body(body, ind)
        case SFor(bs, body, view):
            kw = "view" if view else "for"
            text = f"{kw} {_show_binders(bs)}." + _show_body(body, ind)
            return text if isinstance(body, SBlock) else f"({text})"
        case SIf(c, t, f):
            return f"(if {_show(c, ind)} then {_show(t, ind)} else {_show(f, ind)})"
        case SCase(s, ln, lb, rn, rb):
            return f"(case {_show(s, ind)} of Left {ln} -> {_show(lb, ind)} | Right {rn} -> {_show(rb, ind)})"
        case SBlock(stmts):
            return "(" + "; ".join(_show_stmt(x, 0).strip() for x in stmts) + ")"
    return _show_type(e)


def _atomic(e, ind):
    s = _show(e, ind)
    return s if isinstance(e, (SName, SNum)) and not s.startswith("(") else (s if s.startswith("(") else f"({s})")


def _show_binders(bs) -> str:
    return " ".join(f"{n}:{_show_type_atomic(t)}" if t is not None else n for n, t in bs)


def _show_type_atomic(t) -> str:
    s = _show_type(t)
    return s if isinstance(t, (TName, TUnit)) else f"({s})"


def _show_type(t) -> str:
    match t:
        case TName(n):
            return n
        case TUnit():
            return "()"
        case TFin(size):
            return f"Fin {_atomic(size, 0)}"
        case TArr(d, c):
            return f"{_show_type_atomic(d) if isinstance(d, (TArr, TArrow)) else _show_type(d)} => {_show_type(c)}"
        case TArrow(d, effs, c):
            eff = "{" + ", ".join(f"{k} {r}" for k, r in effs) + "} " if effs else ""
            return f"{_show_type_atomic(d)} -> {eff}{_show_type(c)}"
        case TPair(a, b):
            return f"({_show_type(a)}, {_show_type(b)})"
        case TEither(a, b):
            return f"Either {_show_type_atomic(a)} {_show_type_atomic(b)}"
        case TRef(h, a):
            return f"Ref {_show_type_atomic(h)} {_show_type_atomic(a)}"
    return _show(t)
