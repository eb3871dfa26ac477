import pytest

from dexlet import core_ir as ir
from dexlet import eval as ev
from dexlet import pipeline
from dexlet.core_ir import Action, Get, Let, Ret, RunState, Var
from dexlet.errors import EscapedRef, StateInParallel

from conftest import fixture_text, run

HISTOGRAM = fixture_text("corpus/histogram.dexlet")


def find_loop(e, pred=lambda loop: True):
    for t in ir.walk(e):
        if isinstance(t, ir.For) and pred(t):
            return t
    raise AssertionError("no matching loop")


def test_matmul():
    assert run(fixture_text("matmul.dexlet")) == [[19.0, 22.0], [43.0, 50.0]]


def test_histogram():
    # points are [0, 1, 0, 2, 0]
    assert run(HISTOGRAM) == [3.0, 1.0, 1.0]


def test_cumulative_state_loop():
    assert run(fixture_text("corpus/cumulative_sum.dexlet")) == [1.0, 3.0, 6.0, 10.0, 15.0]


def escape_time_replay(cr, ci, iters=100):
    """Plain Python replay of the fixture's escapeTime loop."""
    count, zr, zi = 0.0, 0.0, 0.0
    for _ in range(iters):
        zr, zi = cr + zr * zr - zi * zi, ci + 2 * zr * zi
        if zr * zr + zi * zi < 4.0:
            count += 1.0
    return count


def test_escape_time_matches_replay():
    grid = run(fixture_text("mandelbrot.dexlet"))
    assert len(grid) == 20 and len(grid[0]) == 30
    assert grid[0][0] == escape_time_replay(-2.0, -1.0) == 0.0
    # a point inside the set stays bounded for every iteration
    xs = [-2.0 + 3.0 * i / 30 for i in range(30)]
    ys = [-1.0 + 2.0 * j / 20 for j in range(20)]
    for j in (0, 7, 10, 13):
        for i in (0, 10, 19, 25):
            assert grid[j][i] == escape_time_replay(xs[i], ys[j])


def test_parallel_sum():
    src = "xs : (Fin 4)=>Float = [1.0, 2.0, 3.0, 4.0]\nout = sum xs"
    assert run(src, chunks=2) == 10.0


def test_parallel_histogram():
    for chunks in (1, 2, 3, 7):
        assert run(HISTOGRAM, chunks=chunks) == [3.0, 1.0, 1.0]


def test_state_loop_is_rejected_for_parallel_evaluation():
    c = pipeline.compile_source(fixture_text("corpus/cumulative_sum.dexlet"))
    loop = find_loop(c.lowered, lambda t: ev.state_uses(t.body))
    with pytest.raises(StateInParallel):
        ev.eval_parallel_for(loop, chunks=2)


def test_state_loop_still_runs_sequentially_with_chunks():
    assert run(fixture_text("corpus/cumulative_sum.dexlet"), chunks=3) == [1.0, 3.0, 6.0, 10.0, 15.0]


def test_count_work_sum():
    c = pipeline.compile_source("xs : (Fin 4)=>Float = [1.0, 2.0, 3.0, 4.0]\nout = sum xs")
    w = ev.count_work(c.lowered)
    # each accumulation is one addition and one update
    assert w.arithmetic == 4
    assert w.accum_updates == 4


def test_count_work_literal():
    assert ev.count_work(Ret(ir.float_lit(3.0))).as_tuple() == (0, 0, 0)


def test_count_work_histogram():
    c = pipeline.compile_source(HISTOGRAM)
    assert ev.count_work(c.lowered).accum_updates == 5


def test_count_work_arithmetic():
    c = pipeline.compile_source("xs : (Fin 4)=>Float = [1.0, 2.0, 3.0, 4.0]\nout = for i. xs.i * xs.i")
    assert ev.count_work(c.lowered).arithmetic == 4


def test_escaped_reference():
    h, r, p, q = ir.fresh("h"), ir.fresh("r"), ir.fresh("p"), ir.fresh("q")
    leak = RunState(ir.float_lit(0.0), Action(h, r, ir.FLOAT_T, Ret(Var(r))))
    e = Let(p, None, leak, Let(q, None, ir.Fst(Var(p)), Get(Var(q))))
    with pytest.raises(EscapedRef):
        ev.evaluate(e)


def test_formatting():
    v = pipeline.run_source(fixture_text("matmul.dexlet"))
    assert ev.format_value(v) == "[[19, 22], [43, 50]]"
    assert ev.to_json(v) == "[[19.0, 22.0], [43.0, 50.0]]"
    assert ev.format_value((1.5, ())) == "(1.5, ())"


def test_chunks_must_be_positive():
    with pytest.raises(ValueError):
        ev.evaluate(Ret(ir.float_lit(1.0)), chunks=0)
