import pytest

from dexlet import core_ir as ir
from dexlet import surface
from dexlet.errors import ParseError, UnannotatedBinder, UnboundVariable
from dexlet.pipeline import front_end
from dexlet.surface import SFor, SIndex, SName


def core_of(src):
    e, _ = surface.desugar(surface.parse(src))
    return e


def final_binding(e):
    """The bound expression of the last let in a chain."""
    last = None
    while isinstance(e, ir.Let):
        last = e.bound
        e = e.body
    return last


def test_tokenize_layout():
    kinds = [t.kind for t in surface.tokenize("a =\n  b\nc = 1")]
    assert "INDENT" in kinds and "DEDENT" in kinds and kinds[-1] == "EOF"


def test_parse_transpose_expression():
    e = surface.parse_expr("for i j. m.j.i")
    assert isinstance(e, SFor)
    assert [b for b, _ in e.binders] == ["i", "j"]
    assert all(ty is None for _, ty in e.binders)
    assert e.body == SIndex(SIndex(SName("m"), SName("j")), SName("i"))


def test_nested_for_desugars_with_inference_holes():
    e = core_of("m : (Fin 2)=>(Fin 3)=>Float = for i j. 1.0\nt = for i j. m.j.i")
    outer = final_binding(e)
    assert isinstance(outer, ir.For) and isinstance(outer.annot, ir.Meta)
    inner = outer.body
    assert isinstance(inner, ir.For) and isinstance(inner.annot, ir.Meta)
    ctx, final = ir.split_lets(inner.body)
    assert isinstance(ctx.bindings[0][2], ir.Index)
    assert final == ir.Index(ir.Var(ctx.bindings[0][0]), ir.Var(outer.binder))


def test_assignment_desugars_to_put_of_add_of_get():
    e = core_of("r = yieldState 0.0 \\x. x := (get x) + 1.0")
    run = e.bound
    assert isinstance(run, ir.RunState)
    body = run.action.body
    ref = ir.Var(run.action.ref)
    (g, _, get), (t, _, add) = ir.split_lets(body)[0].bindings
    assert get == ir.Get(ref)
    assert add == ir.Add(ir.Var(g), ir.float_lit(1.0))
    assert ir.split_lets(body)[1] == ir.Put(ref, ir.Var(t))


def test_empty_program_is_a_parse_error():
    with pytest.raises(ParseError):
        surface.parse("")


def test_parse_error_location():
    with pytest.raises(ParseError) as info:
        surface.parse("x = (1.0,\ny = 2.0")
    assert info.value.loc is not None


def test_sum_desugars_to_projected_accumulation():
    e = core_of("xs : (Fin 3)=>Float = for i. 1.0\ns = sum xs")
    s = final_binding(e)
    ctx, final = ir.split_lets(s)
    (acc, _, run), = ctx.bindings
    assert final == ir.Snd(ir.Var(acc))
    assert isinstance(run, ir.RunAccum)
    loop = run.action.body
    assert isinstance(loop, ir.For)
    (x, _, idx), = ir.split_lets(loop.body)[0].bindings
    assert isinstance(idx, ir.Index) and idx.idx == ir.Var(loop.binder)
    assert ir.split_lets(loop.body)[1] == ir.Accumulate(ir.Var(run.action.ref), ir.Var(x))


def test_grad_desugars_to_transpose_of_linearization():
    e = core_of("g = grad (\\x:Float. x*x) 3.0")
    ctx, _ = ir.split_lets(e)
    bound = [b for _, _, b in ctx.bindings]
    assert isinstance(bound[0], ir.Linearize)
    assert bound[1] == ir.Snd(ir.Var(ctx.bindings[0][0]))
    assert bound[2] == ir.Transpose(ir.Var(ctx.bindings[1][0]), ir.float_lit(1.0))


def test_unconstrained_binder_is_rejected():
    with pytest.raises(UnannotatedBinder):
        front_end("t = for i. 0.0")


def test_unbound_variable():
    with pytest.raises(UnboundVariable):
        core_of("y = nope + 1.0")


def test_comments_and_blocks():
    src = "-- leading comment\ny =\n  a = 2.0  -- trailing\n  a * a\n"
    c = front_end(src)
    assert c.type == ir.FLOAT_T


def test_show_surface_reparses():
    src = "def f x = x * 2.0\nxs : (Fin 2)=>Float = [1.0, 2.0]\nys = for i. f xs.i\n"
    p = surface.parse(src)
    again = surface.parse(surface.show_surface(p))
    assert surface.show_surface(again) == surface.show_surface(p)
