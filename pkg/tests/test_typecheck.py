import pytest

from dexlet import core_ir as ir
from dexlet import errors
from dexlet.core_ir import Action, Get, Pair, Ret, RunState, Var
from dexlet.pipeline import front_end
from dexlet.printer import show_value
from dexlet.typecheck import check_constraint, check_expr, check_value

from conftest import FIXTURES, strip_uids

TYPING = sorted((FIXTURES / "typing").glob("*.dexlet"))


def header(path):
    expect, ty = None, None
    for line in path.read_text().splitlines():
        if line.startswith("-- expect:"):
            expect = line.split(":", 1)[1].strip()
        elif line.startswith("-- type:"):
            ty = line.split(":", 1)[1].strip()
    return expect, ty


def test_fixture_suite_shape():
    outcomes = [header(p)[0] for p in TYPING]
    assert len(outcomes) >= 30
    assert sum(o != "ok" for o in outcomes) >= 10


@pytest.mark.parametrize("path", TYPING, ids=lambda p: p.stem)
def test_typing_fixture(path):
    expect, ty = header(path)
    if expect == "ok":
        c = front_end(path.read_text())
        if ty is not None:
            assert strip_uids(show_value(c.type)) == ty
    else:
        with pytest.raises(getattr(errors, expect)):
            front_end(path.read_text())


def test_lambda_type_is_pure_arrow():
    x = ir.fresh("x")
    ty = check_value({}, ir.Lam(x, ir.FLOAT_T, ir.Add(Var(x), Var(x))))
    assert isinstance(ty, ir.ArrowType)
    assert ty.dom == ir.FLOAT_T and ty.cod == ir.FLOAT_T and ty.effects == ir.PURE


def test_view_body_must_be_pure():
    h, r, i = ir.fresh("h"), ir.fresh("r"), ir.fresh("i")
    env = {h: ir.TYPE, r: ir.RefType(Var(h), ir.FLOAT_T)}
    with pytest.raises(errors.EffectError):
        check_value(env, ir.View(i, ir.FinType(ir.int_lit(3)), Get(Var(r))))


def test_opaque_type_is_not_an_index_set():
    x = ir.fresh("x")
    with pytest.raises(errors.DexTypeError):
        check_value({x: ir.TYPE}, ir.ArrayType(Var(x), ir.FLOAT_T))


def test_get_needs_state_capability():
    h, r = ir.fresh("h"), ir.fresh("r")
    env = {h: ir.TYPE, r: ir.RefType(Var(h), ir.FLOAT_T)}
    with pytest.raises(errors.EffectError):
        check_expr(None, env, Get(Var(r)))


def test_run_state_reading_twice():
    h, r, a, b = ir.fresh("h"), ir.fresh("r"), ir.fresh("a"), ir.fresh("b")
    body = ir.Let(a, None, Get(Var(r)), ir.Let(b, None, Get(Var(r)), Ret(Pair(Var(a), Var(b)))))
    ty = check_expr(None, {}, RunState(ir.float_lit(0.0), Action(h, r, ir.FLOAT_T, body)))
    assert ir.alpha_eq(ty, ir.PairType(ir.PairType(ir.FLOAT_T, ir.FLOAT_T), ir.FLOAT_T))


def test_constraints():
    fin3 = ir.FinType(ir.int_lit(3))
    assert check_constraint("VSpace", ir.ArrayType(fin3, ir.PairType(ir.FLOAT_T, ir.FLOAT_T)))
    assert not check_constraint("VSpace", ir.INT_T)
    assert check_constraint("IdxSet", ir.EitherType(ir.UNIT_T, ir.FinType(ir.int_lit(2))))
    assert check_constraint("Data", ir.ArrayType(fin3, ir.INT_T))
    assert not check_constraint("Data", ir.RefType(Var(ir.fresh("h")), ir.FLOAT_T))


def test_error_carries_source_location():
    with pytest.raises(errors.DexTypeError) as info:
        front_end("x = 1.0\nbad = x + 2")
    # the location of the offending operator
    assert info.value.loc == (2, 9)
