"""The compiler pipeline shared by the CLI and the tests.

parse -> desugar -> elaborate -> simplify -> optimize -> evaluate, with the
intermediate program of every stage kept for ``--dump-ir``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import core_ir as ir
from . import eval as ev
from . import printer, simplify, surface
from .typecheck import elaborate

STAGES = ("parsed", "core", "simplified", "linearized", "transposed", "optimized")


@dataclass
class Compiled:
    source: surface.SourceProgram
    core: ir.Expr
    type: ir.Value
    dumps: dict = field(default_factory=dict)
    lowered: ir.Expr | None = None

    def run(self, chunks: int = 1, work: ev.WorkCount | None = None):
        return ev.evaluate(self.lowered, chunks=chunks, work=work)


def front_end(text: str, extra_src: str | None = None) -> Compiled:
    """Parse, desugar and typecheck ``text`` (plus an optional trailing statement)."""
    prog = surface.parse(text)
    extra = surface.parse(extra_src).declarations if extra_src else ()
    e, spans = surface.desugar(prog, extra=extra)
    core, ty = elaborate(e, spans=spans)
    c = Compiled(prog, core, ty)
    c.dumps["parsed"] = surface.show_surface(prog)
    c.dumps["core"] = printer.show_block(core)
    return c


def compile_source(text: str, extra_src: str | None = None, fusion: bool = True) -> Compiled:
    """Run the whole pipeline up to an evaluable first-order program."""
    c = front_end(text, extra_src)
    dumps = simplify.Dumps()
    res = simplify.simplify_data(c.core, dumps=dumps)
    c.dumps["simplified"] = printer.show_context(res.context, res.residual)
    c.dumps["linearized"] = "\n\n".join(printer.show_block(e) for e in dumps.linearized)
    c.dumps["transposed"] = "\n\n".join(printer.show_block(e) for e in dumps.transposed)
    c.lowered = simplify.optimize(res.fill(), fusion=fusion)
    c.dumps["optimized"] = printer.show_block(c.lowered)
    return c


def compile_with_inputs(text: str, inputs: dict) -> tuple:
    """Compile ``text`` with free variables ``{name: surface type}``.

    Returns the compiled program and a function that evaluates it on plain
    Python values for those inputs.  Nothing is spent building the inputs, so
    the work counted for a run is the work of the program alone.
    """
    names = {k: ir.fresh(k) for k in inputs}
    types = {names[k]: surface.desugar_type(t) for k, t in inputs.items()}
    prog = surface.parse(text)
    e, spans = surface.desugar(prog, inputs=names)
    core, ty = elaborate(e, env=types, spans=spans)
    c = Compiled(prog, core, ty)
    res = simplify.simplify_data(core, env=types)
    c.lowered = simplify.optimize(res.fill())

    def run(values: dict, chunks: int = 1, work: ev.WorkCount | None = None):
        env = {n: ev.from_python(values[k], ev.type_rep(types[n], {})) for k, n in names.items()}
        return ev.evaluate(c.lowered, env, chunks=chunks, work=work)

    return c, run


def run_source(text: str, chunks: int = 1, work: ev.WorkCount | None = None):
    return compile_source(text).run(chunks=chunks, work=work)


def ones_like(point_src: str) -> str:
    """The literal ``point_src`` with every float replaced by 1.0 (the default tangent)."""
    e = surface.parse_expr(point_src)

    def go(s):
        match s:
            case surface.SNum("Float", _):
                return "1.0"
            case surface.SNum(_, v):
                return str(v)
            case surface.SList(items):
                return "[" + ", ".join(go(x) for x in items) + "]"
            case surface.SPair(items):
                return "(" + ", ".join(go(x) for x in items) + ")"
            case surface.SNeg(x):
                return go(x)
        raise ValueError("a point must be a literal of floats, lists and pairs")

    return go(e)


def lin_statement(fn: str, point: str, tangent: str | None = None) -> str:
    """A trailing statement evaluating the primal and the tangent of ``fn`` at ``point``."""
    t = tangent if tangent is not None else ones_like(point)
    return (f"lin_point = linearize {fn} ({point})\n"
            f"lin_result = (fst lin_point, (snd lin_point) ({t}))")


def grad_statement(fn: str, point: str) -> str:
    return f"grad_result = grad {fn} ({point})"
