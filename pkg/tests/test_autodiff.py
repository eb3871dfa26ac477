import pytest

from dexlet import autodiff as ad
from dexlet import core_ir as ir
from dexlet import eval as ev
from dexlet import pipeline
from dexlet.core_ir import Add, Let, Mul, Var
from dexlet.errors import NonVSpaceResult, NotLinear, UnsupportedTangent

from conftest import close, run

FIN2 = ir.FinType(ir.int_lit(2))


def central_difference(f, x, h=1e-4):
    return (f(x + h) - f(x - h)) / (2 * h)


def test_tangent_types():
    assert ad.tangent_type(ir.FLOAT_T) == ir.FLOAT_T
    assert ad.tangent_type(ir.INT_T) == ir.UNIT_T
    assert ad.tangent_type(FIN2) == ir.UNIT_T
    arr = ir.ArrayType(FIN2, ir.PairType(ir.FLOAT_T, ir.INT_T))
    assert ad.tangent_type(arr) == ir.ArrayType(FIN2, ir.PairType(ir.FLOAT_T, ir.UNIT_T))
    with pytest.raises(UnsupportedTangent):
        ad.tangent_type(ir.EitherType(ir.FLOAT_T, ir.FLOAT_T))


def test_zero_values_evaluate_to_zeros():
    ty = ir.PairType(ir.FLOAT_T, ir.ArrayType(FIN2, ir.FLOAT_T))
    z = ev.to_python(ev.evaluate(ir.Ret(ad.zero_value(ty))))
    assert z == (0.0, [0.0, 0.0])
    with pytest.raises(UnsupportedTangent):
        ad.zero_value(ir.EitherType(ir.UNIT_T, ir.FLOAT_T))
    with pytest.raises(NonVSpaceResult):
        ad.zero_value(ir.INT_T)


def reified(body_of, point, tangent):
    """Evaluate ``(fst p, (snd p) tangent)`` where p linearizes ``body_of(x)`` at ``point``."""
    x, p, a, f, r = (ir.fresh(s) for s in ("x", "p", "a", "f", "r"))
    lin = ad.linearize_reify({x: ir.FLOAT_T}, [x], body_of(Var(x)))
    e = Let(x, ir.FLOAT_T, ir.Ret(ir.float_lit(point)),
            Let(p, None, lin,
                Let(a, None, ir.Fst(Var(p)),
                    Let(f, None, ir.Snd(Var(p)),
                        Let(r, None, ir.App(Var(f), ir.float_lit(tangent)),
                            ir.Ret(ir.Pair(Var(a), Var(r))))))))
    return ev.to_python(ev.evaluate(e))


def test_reify_square():
    prim, tan = reified(lambda x: Mul(x, x), 3.0, 1.0)
    assert prim == 9.0
    assert abs(tan - central_difference(lambda v: v * v, 3.0)) < 1e-6


def test_reify_double():
    assert reified(lambda x: Add(x, x), 5.0, 1.0) == (10.0, 2.0)


def test_reify_constant_has_zero_tangent():
    assert reified(lambda x: ir.Ret(ir.float_lit(3.0)), 5.0, 1.0) == (3.0, 0.0)


def test_linearize_returns_primal_and_tangent():
    x, t = ir.fresh("x"), ir.fresh("t")
    ctx, prim, tan = ad.linearize({x: Var(t)}, {x: ir.FLOAT_T, t: ir.FLOAT_T}, Mul(Var(x), Var(x)))
    e = Let(x, None, ir.Ret(ir.float_lit(2.0)), Let(t, None, ir.Ret(ir.float_lit(1.0)),
            ctx.fill(Let(ir.fresh("_"), None, prim, tan))))
    assert ev.to_python(ev.evaluate(e)) == 4.0


def test_linearize_sumsq_directional():
    got = run("def f (x:(Fin 2)=>Float) = sum (for i. x.i * x.i)\n"
              "out = snd (linearize f [1.0, 2.0]) [1.0, 0.0]")
    assert close(got, 2.0, 1e-12)


def test_linearize_with_zero_tangent_is_zero():
    got = run("out = snd (linearize (\\x:(Fin 2)=>Float. for i. x.i * x.i) [1.0, 2.0]) [0.0, 0.0]")
    assert got == [0.0, 0.0]


def test_transpose_scale():
    assert run("out = transpose (\\t:Float. 3.0 * t) 1.0") == 3.0


def test_transpose_index_is_one_hot():
    assert run("out = transpose (\\t:(Fin 3)=>Float. t.(@0)) 1.0") == [1.0, 0.0, 0.0]


def test_transpose_fan_out_sums():
    # <f 1, (2, 5)> with f t = (t, t)
    assert run("out = transpose (\\t:Float. (t, t)) (2.0, 5.0)") == 7.0


def test_transpose_rejects_products_of_linear_inputs():
    with pytest.raises(NotLinear):
        run("out = transpose (\\t:Float. t * t) 1.0")


def test_transpose_rejects_affine_constants():
    with pytest.raises(NotLinear):
        run("out = transpose (\\t:Float. t + 1.0) 1.0")


def test_grad_examples():
    assert run("out = grad (\\x:Float. x * x) 3.0") == 6.0
    assert run("out = grad (\\x:(Fin 2)=>Float. sum (for i. x.i * x.i)) [1.0, 2.0]") == [2.0, 4.0]
    got = run("out = grad (\\x:Float. 1.0 / x) 2.0")
    assert abs(got - central_difference(lambda v: 1.0 / v, 2.0)) < 1e-6


def test_grad_through_branch():
    src = "def f (x:Float) = if x > 0.0 then x * x else -x\nout = (grad f 3.0, grad f (-2.0))"
    assert run(src) == (6.0, -1.0)


def test_grad_of_either_payload_is_unsupported():
    src = """def f (x:Float) =
  e : Either Float Float = if x > 0.0 then Left x else Right x
  case e of
    Left a -> a * a
    Right b -> b
out = grad f 2.0
"""
    with pytest.raises(UnsupportedTangent):
        run(src)


def test_nested_linearize():
    # second derivative of y^3 at 2 is 6 * 2
    assert run("out = grad (\\x:Float. grad (\\y:Float. y * y * y) x) 2.0") == 12.0
    src = "out = snd (linearize (\\x:Float. snd (linearize (\\y:Float. y * y * y) x) 1.0) 2.0) 1.0"
    assert run(src) == 12.0


def test_grad_of_stateful_loop():
    src = """def f (x:(Fin 3)=>Float) =
  ys = yieldState (for i:(Fin 3). 0.0) \\s.
    c = yieldState 0.0 \\acc.
      for i.
        acc := get acc + x.i
        s!i := get acc
    ()
  sum ys
out = grad f [1.0, 2.0, 3.0]
"""
    # output is the sum of prefix sums, so x.i is counted (3 - i) times
    assert run(src) == [3.0, 2.0, 1.0]


LINEAR_SRC = """W1 : (Fin 2)=>(Fin 3)=>Float = [[1.0, 2.0, 0.5], [0.0, -1.0, 3.0]]
P1 : (Fin 3)=>Fin 3 = [@2, @0, @1]
B1 : (Fin 3)=>Fin 2 = [@1, @1, @0]
D1 : (Fin 3)=>Float = [1.0, -1.0, 2.0]
def f (x:(Fin 3)=>Float) : (Fin 2)=>Float =
  v1 = for i. 2.5 * x.i
  v2 = for i. x.(P1.i) - v1.i
  v3 = fst $ runState 0.0 \\tot.
    for i.
      tot := get tot + v2.i
      get tot
  v4 = for i. if D1.i > 0.0 then v3.i else 0.5 * v3.i
  v5 = yieldAccum \\acc. for i. acc!(B1.i) += 1.5 * v4.i
  v6 = for i:(Fin 2). sum (for k. W1.i.k * v4.k)
  v7 = for i:(Fin 2). 0.25 * sum v5
  for i. v5.i + v6.i + v7.i
"""


def test_transpose_matches_jacobian():
    _, run_f = pipeline.compile_with_inputs(LINEAR_SRC + "out = f x\n", {"x": "(Fin 3)=>Float"})
    _, run_t = pipeline.compile_with_inputs(LINEAR_SRC + "out = transpose f y\n", {"y": "(Fin 2)=>Float"})
    basis = [[1.0 if k == j else 0.0 for k in range(3)] for j in range(3)]
    columns = [ev.to_python(run_f({"x": e})) for e in basis]
    for row in range(2):
        y = [1.0 if k == row else 0.0 for k in range(2)]
        assert close(ev.to_python(run_t({"y": y})), [c[row] for c in columns], 1e-12)


def test_indexed_read_gradient_is_not_one_hot():
    n = 7
    src = "def f (x:(Fin 7)=>Float) = sum (for i. w.(idx.i) * x.i)\nout = grad f x\n"
    _, run_g = pipeline.compile_with_inputs(src, {"w": "(Fin 7)=>Float", "idx": "(Fin 7)=>Fin 7",
                                                  "x": "(Fin 7)=>Float"})
    w = [float(k + 1) for k in range(n)]
    idx = [(3 * k) % n for k in range(n)]
    work = ev.WorkCount()
    g = ev.to_python(run_g({"w": w, "idx": idx, "x": [0.5] * n}, work=work))
    assert g == [w[idx[i]] for i in range(n)]
    assert work.accum_updates == n
