"""The ten acceptance criteria, each checked at its stated tolerance and time budget.

Every test records one PASS/FAIL line; the lines are printed in the pytest
terminal summary, and running this file directly prints them as well.
"""

import ast
import itertools
import random
import time

import pytest

from dexlet import core_ir as ir
from dexlet import errors
from dexlet import eval as ev
from dexlet import index_sets as ix
from dexlet import pipeline, printer
from dexlet import simplify as S

from conftest import FIXTURES, close, fixture_text, seed, strip_uids

RESULTS: list = []

CORPUS = sorted((FIXTURES / "corpus").glob("*.dexlet"))
GRAD_CORPUS = sorted((FIXTURES / "grad").glob("*.dexlet"))
TYPING = sorted((FIXTURES / "typing").glob("*.dexlet"))


def report(n: int, title: str, ok: bool, detail: str):
    line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def headers(path) -> dict:
    out = {}
    for line in path.read_text().splitlines():
        if line.startswith("-- ") and ":" in line:
            key, val = line[3:].split(":", 1)
            out[key.strip()] = val.strip()
    return out


# ---------------------------------------------------------------------------
# 1. typing-rule conformance


def test_criterion_1_typing_fixtures():
    t0 = time.perf_counter()
    wrong = []
    ill = 0
    for path in TYPING:
        h = headers(path)
        expect = h["expect"]
        ill += expect != "ok"
        try:
            c = pipeline.front_end(path.read_text())
            got = "ok"
            if expect == "ok" and "type" in h and strip_uids(printer.show_value(c.type)) != h["type"]:
                got = "wrong type"
        except errors.DexError as err:
            expected_cls = getattr(errors, expect, None)
            got = expect if expected_cls and isinstance(err, expected_cls) else type(err).__name__
        if got != expect:
            wrong.append(f"{path.stem}: expected {expect}, got {got}")
    dt = time.perf_counter() - t0
    ok = not wrong and len(TYPING) >= 30 and ill >= 10 and dt < 1.0
    report(1, "typing fixtures", ok,
           f"{len(TYPING)} programs ({ill} ill-typed), {len(wrong)} mismatches, {dt:.2f}s < 1s"
           + ("; " + "; ".join(wrong) if wrong else ""))


# ---------------------------------------------------------------------------
# 2. index-set bijection


def skeletons(depth):
    """Every descriptor shape with at most ``depth`` levels of pairs and Eithers."""
    if depth == 0:
        return ["leaf"]
    smaller = skeletons(depth - 1)
    out = ["leaf"]
    for a, b in itertools.product(smaller, repeat=2):
        out.append(("pair", a, b))
        out.append(("either", a, b))
    return out


def fill(shape, leaves):
    if shape == "leaf":
        k = next(leaves)
        return ix.UNIT_SET if k is None else ix.FinSet(k)
    kind, a, b = shape
    left = fill(a, leaves)
    right = fill(b, leaves)
    return ix.PairSet(left, right) if kind == "pair" else ix.EitherSet(left, right)


def check_bijection(d, rng, full_limit=512, samples=64):
    n = d.size
    if n <= full_limit:
        members = d.enumerate()
        if len(members) != n:
            return False
        ords = range(n)
    else:
        members = None
        ords = rng.sample(range(n), samples)
    for k in ords:
        m = d.from_ordinal(k)
        if members is not None and members[k] != m:
            return False
        if d.ordinal(m) != k or d.reverse(d.reverse(m)) != m or d.ordinal(d.reverse(m)) != n - 1 - k:
            return False
    for bad in (-1, n):
        try:
            d.from_ordinal(bad)
            return False
        except errors.OutOfBounds:
            pass
    return True


def test_criterion_2_index_set_bijection():
    t0 = time.perf_counter()
    rng = random.Random(seed())
    leaf_choices = [None] + list(range(17))
    shapes = skeletons(3)
    checked, failed = 0, []
    # every leaf on its own, then every shape with several leaf assignments
    descriptors = [fill("leaf", iter([k])) for k in leaf_choices]
    for shape in shapes:
        for _ in range(2):
            descriptors.append(fill(shape, iter(lambda: rng.choice(leaf_choices), object())))
    for d in descriptors:
        checked += 1
        if not check_bijection(d, rng):
            failed.append(str(d))
    dt = time.perf_counter() - t0
    ok = not failed and dt < 5.0
    report(2, "index-set bijection", ok,
           f"{len(shapes)} shapes up to depth 3, {checked} descriptors, {len(failed)} failures, {dt:.2f}s < 5s")


# ---------------------------------------------------------------------------
# 3. simplification grammar and equivalence


def test_criterion_3_simplification():
    t0 = time.perf_counter()
    problems = []
    for path in CORPUS:
        c = pipeline.compile_source(path.read_text())
        if S.higher_order_nodes(c.lowered):
            problems.append(f"{path.stem}: higher-order nodes remain")
        before = ev.to_python(ev.evaluate(c.core))
        after = ev.to_python(c.run())
        if not close(before, after, 1e-12):
            problems.append(f"{path.stem}: {before} != {after}")
    c = pipeline.front_end(fixture_text("table_of_functions.dexlet"))
    res = S.simplify(c.core)
    golden = printer.show_context(res.context, res.residual, renumber=True).strip()
    if golden != fixture_text("table_of_functions.golden").strip():
        problems.append("table-of-functions output differs from its golden file")
    dt = time.perf_counter() - t0
    ok = not problems and dt < 5.0
    report(3, "simplification", ok,
           f"{len(CORPUS)} corpus programs first-order and equal, golden shape, {dt:.2f}s < 5s"
           + ("; " + "; ".join(problems) if problems else ""))


# ---------------------------------------------------------------------------
# 4. gradients against central differences


def coords(v, path=()):
    if isinstance(v, (list, tuple)):
        for k, x in enumerate(v):
            yield from coords(x, path + (k,))
    else:
        yield path


def perturb(v, path, d):
    if not path:
        return v + d
    items = list(v)
    items[path[0]] = perturb(items[path[0]], path[1:], d)
    return tuple(items) if isinstance(v, tuple) else items


def component(v, path):
    for k in path:
        v = v[k]
    return v


def grad_programs():
    out = []
    for path in GRAD_CORPUS:
        h = headers(path)
        out.append((path.stem, path.read_text(), h["input"], ast.literal_eval(h["point"])))
    return out


def test_criterion_4_gradients():
    t0 = time.perf_counter()
    h = 1e-4
    worst, bad, kinds = 0.0, [], set()
    for name, src, ty, point in grad_programs():
        primal, run_f = pipeline.compile_with_inputs(src + "out = f x\n", {"x": ty})
        kinds |= {type(t).__name__ for t in ir.walk(primal.core)}
        _, run_g = pipeline.compile_with_inputs(src + "out = grad f x\n", {"x": ty})
        g = ev.to_python(run_g({"x": point}))
        for c in coords(point):
            fp = ev.to_python(run_f({"x": perturb(point, c, h)}))
            fm = ev.to_python(run_f({"x": perturb(point, c, -h)}))
            fd = (fp - fm) / (2 * h)
            gc = component(g, c)
            err = abs(gc - fd) / max(abs(fd), abs(gc), 1e-300)
            worst = max(worst, err)
            if err > 1e-4:
                bad.append(f"{name}{list(c)}: grad {gc} vs fd {fd}")
    needed = {"Mul", "For", "Index", "Slice", "RunState", "RunAccum"}
    names = {n for n, *_ in grad_programs()}
    required = {"sum", "dot", "sumsq", "matmul_trace", "cumulative"}
    dt = time.perf_counter() - t0
    ok = (not bad and needed <= kinds and required <= names and len(names) >= 10
          and "Case" not in kinds and dt < 10.0)
    report(4, "gradients vs finite differences", ok,
           f"{len(names)} programs, worst relative error {worst:.1e} <= 1e-4, "
           f"covers {sorted(needed & kinds)}, {dt:.2f}s < 10s" + ("; " + "; ".join(bad) if bad else ""))


# ---------------------------------------------------------------------------
# 5. adjoint identity on random linear programs


def fmt(x: float) -> str:
    return f"({x!r})" if x < 0 else repr(x)


def table(values) -> str:
    if isinstance(values, list):
        return "[" + ", ".join(table(v) for v in values) + "]"
    if isinstance(values, str):
        return values
    return repr(values)


def linear_program(rng: random.Random, n: int) -> tuple:
    """A random structurally-linear ``f : (Fin n)=>Float -> (Fin m)=>Float``."""
    decls, body = [], []
    env = [("x", n)]

    def const():
        return round(rng.uniform(-2.0, 2.0), 3)

    for k in range(1, rng.randint(1, 6) + 1):
        a, sa = rng.choice(env)
        op = rng.choice(["scale", "add", "matvec", "permute", "cumsum", "branch", "scatter",
                         "broadcast", "slices"])
        size = sa
        if op == "add":
            b, _ = rng.choice([e for e in env if e[1] == sa])
            sign = rng.choice(["+", "-"])
            body.append(f"  v{k} = for i. {a}.i {sign} {fmt(const())} * {b}.i")
        elif op == "matvec":
            size = rng.randint(1, 8)
            w = [[const() for _ in range(sa)] for _ in range(size)]
            decls.append(f"W{k} : (Fin {size})=>(Fin {sa})=>Float = {table(w)}")
            body.append(f"  v{k} = for i:(Fin {size}). sum (for j. W{k}.i.j * {a}.j)")
        elif op == "permute":
            perm = list(range(sa))
            rng.shuffle(perm)
            decls.append(f"P{k} : (Fin {sa})=>Fin {sa} = {table(['@' + str(p) for p in perm])}")
            body.append(f"  v{k} = for i. {a}.(P{k}.i)")
        elif op == "cumsum":
            body.append(f"  v{k} = fst $ runState 0.0 \\tot.\n"
                        f"    for i.\n"
                        f"      tot := get tot + {a}.i\n"
                        f"      get tot")
        elif op == "branch":
            d = [rng.choice([-1.0, 1.0]) for _ in range(sa)]
            decls.append(f"D{k} : (Fin {sa})=>Float = {table(d)}")
            body.append(f"  v{k} = for i. if D{k}.i > 0.0 then {fmt(const())} * {a}.i else {fmt(const())} * {a}.i")
        elif op == "scatter":
            size = rng.randint(1, 8)
            bins = ["@" + str(rng.randrange(size)) for _ in range(sa)]
            decls.append(f"B{k} : (Fin {sa})=>Fin {size} = {table(bins)}")
            body.append(f"  v{k} = yieldAccum \\acc. for i. acc!(B{k}.i) += {fmt(const())} * {a}.i")
        elif op == "broadcast":
            size = rng.randint(1, 8)
            body.append(f"  v{k} = for i:(Fin {size}). {fmt(const())} * sum {a}")
        elif op == "slices":
            body.append(f"  v{k} = yieldState (for i:(Fin {sa}). 0.0) \\s.\n"
                        f"    for i.\n"
                        f"      s!i := {fmt(const())} * {a}.i")
        else:
            body.append(f"  v{k} = for i. {fmt(const())} * {a}.i")
        env.append((f"v{k}", size))
    out, m = env[-1]
    src = "\n".join(decls) + f"\ndef f (x:(Fin {n})=>Float) : (Fin {m})=>Float =\n" + "\n".join(body) + f"\n  {out}\n"
    return src, m


def test_criterion_5_adjoint_identity():
    t0 = time.perf_counter()
    rng = random.Random(seed())
    bad = []
    for trial in range(200):
        n = rng.randint(1, 8)
        src, m = linear_program(rng, n)
        x = [rng.uniform(-1.0, 1.0) for _ in range(n)]
        y = [rng.uniform(-1.0, 1.0) for _ in range(m)]
        _, run_f = pipeline.compile_with_inputs(src + "out = f x\n", {"x": f"(Fin {n})=>Float"})
        _, run_t = pipeline.compile_with_inputs(src + "out = transpose f y\n", {"y": f"(Fin {m})=>Float"})
        fx = ev.to_python(run_f({"x": x}))
        fty = ev.to_python(run_t({"y": y}))
        lhs = sum(a * b for a, b in zip(fx, y))
        rhs = sum(a * b for a, b in zip(x, fty))
        if abs(lhs - rhs) > 1e-6 * (1 + abs(lhs)):
            bad.append(f"trial {trial}: {lhs} vs {rhs}\n{src}")
    dt = time.perf_counter() - t0
    ok = not bad and dt < 30.0
    report(5, "adjoint identity", ok,
           f"200 random linear programs (seed {seed()}), {len(bad)} violations, {dt:.2f}s < 30s"
           + ("; " + bad[0] if bad else ""))


# ---------------------------------------------------------------------------
# 6. work preservation


def work(w: ev.WorkCount) -> int:
    # accumulator updates are already counted as additions in ``arithmetic``
    return w.arithmetic + w.cells


def measured(run, values) -> ev.WorkCount:
    w = ev.WorkCount()
    run(values, work=w)
    return w


def indexed_read_updates(n: int) -> int:
    rng = random.Random(seed() + n)
    src = f"def f (x:(Fin {n})=>Float) = sum (for i. w.(idx.i) * x.i)\nout = grad f x\n"
    _, run = pipeline.compile_with_inputs(src, {"w": f"(Fin {n})=>Float", "idx": f"(Fin {n})=>Fin {n}",
                                                "x": f"(Fin {n})=>Float"})
    values = {"w": [rng.uniform(-1, 1) for _ in range(n)], "idx": [rng.randrange(n) for _ in range(n)],
              "x": [rng.uniform(-1, 1) for _ in range(n)]}
    return measured(run, values).accum_updates


def test_criterion_6_work_preservation():
    t0 = time.perf_counter()
    worst, bad = 0.0, []
    for name, src, ty, point in grad_programs():
        _, run_f = pipeline.compile_with_inputs(src + "out = f x\n", {"x": ty})
        _, run_l = pipeline.compile_with_inputs(src + "out = snd (linearize f x) t\n", {"x": ty, "t": ty})
        _, run_g = pipeline.compile_with_inputs(src + "out = grad f x\n", {"x": ty})
        base = work(measured(run_f, {"x": point}))
        for kind, w in (("tangent", measured(run_l, {"x": point, "t": point})),
                        ("transposed", measured(run_g, {"x": point}))):
            ratio = work(w) / base
            worst = max(worst, ratio)
            if ratio > 4.0:
                bad.append(f"{name} {kind}: {work(w)} vs primal {base}")
    updates = {n: indexed_read_updates(n) for n in (5, 16, 64)}
    bad += [f"indexed read n={n}: {u} updates" for n, u in updates.items() if u != n]
    dt = time.perf_counter() - t0
    report(6, "work preservation", not bad,
           f"worst tangent/transposed ratio {worst:.2f} <= 4 over {len(GRAD_CORPUS)} programs, "
           f"indexed-read grad updates {updates} == n, {dt:.2f}s" + ("; " + "; ".join(bad) if bad else ""))


# ---------------------------------------------------------------------------
# 7. work-efficient histogram


def histogram_updates(n: int, k: int) -> tuple:
    rng = random.Random(seed() + 1000 * n + k)
    pts = [rng.randrange(k) for _ in range(n)]
    _, run = pipeline.compile_with_inputs("hist = yieldAccum \\h. for i. h!(pts.i) += 1.0\n",
                                          {"pts": f"(Fin {n})=>Fin {k}"})
    w = ev.WorkCount()
    counts = ev.to_python(run({"pts": pts}, work=w))
    expected = [float(pts.count(b)) for b in range(k)]
    return w.accum_updates, counts == expected


def test_criterion_7_histogram_work():
    t0 = time.perf_counter()
    got = {(n, k): histogram_updates(n, k) for n, k in ((5, 3), (64, 7), (100, 10))}
    ok = all(u == n and right for (n, _), (u, right) in got.items())
    dt = time.perf_counter() - t0
    report(7, "histogram work", ok,
           ", ".join(f"(n={n}, k={k}): {u} updates, counts {'correct' if r else 'WRONG'}"
                     for (n, k), (u, r) in got.items()) + f", {dt:.2f}s")


# ---------------------------------------------------------------------------
# 8. parallel determinism


def test_criterion_8_parallel_determinism():
    t0 = time.perf_counter()
    accum_programs, bad = [], []
    state_loops, rejected = 0, 0
    for path in CORPUS + GRAD_CORPUS:
        if path in GRAD_CORPUS:
            h = headers(path)
            src = path.read_text() + f"out = grad f ({h['point']})\n"
        else:
            src = path.read_text()
        c = pipeline.compile_source(src)
        loops = [t for t in ir.walk(c.lowered) if isinstance(t, ir.For)]
        if any(isinstance(t, ir.RunAccum) for t in ir.walk(c.lowered)):
            accum_programs.append(path.stem)
            base = ev.to_python(c.run(chunks=1))
            for chunks in (2, 3, 7):
                got = ev.to_python(c.run(chunks=chunks))
                if not close(base, got, 1e-12):
                    bad.append(f"{path.stem} chunks={chunks}: {got} vs {base}")
        for loop in loops:
            if ev.state_uses(loop.body):
                state_loops += 1
                try:
                    ev.eval_parallel_for(loop, chunks=2)
                except errors.StateInParallel:
                    rejected += 1
    dt = time.perf_counter() - t0
    ok = not bad and accum_programs and state_loops > 0 and rejected == state_loops
    report(8, "parallel determinism", bool(ok),
           f"{len(accum_programs)} Accum programs agree for chunks 1,2,3,7; "
           f"{rejected}/{state_loops} State loops rejected statically, {dt:.2f}s"
           + ("; " + "; ".join(bad) if bad else ""))


# ---------------------------------------------------------------------------
# 9. fusion


def test_criterion_9_fusion():
    src = fixture_text("fusion.dexlet")
    fused = pipeline.compile_source(src)
    plain = pipeline.compile_source(src, fusion=False)
    golden = printer.renumber_names(fused.dumps["optimized"]).strip() == fixture_text("fusion.golden").strip()
    loops = sum(isinstance(t, ir.For) for t in ir.walk(fused.lowered))
    n_fused = ev.count_work(fused.lowered).nodes
    n_plain = ev.count_work(plain.lowered).nodes
    same = ev.to_python(fused.run()) == ev.to_python(plain.run())
    ok = golden and loops == 1 and n_fused < n_plain and same
    report(9, "fusion", ok,
           f"golden {'matches' if golden else 'DIFFERS'}, {loops} loop, evaluated nodes {n_plain} -> {n_fused}, "
           f"results {'unchanged' if same else 'CHANGED'}")


# ---------------------------------------------------------------------------
# 10. Mandelbrot end to end


def test_criterion_10_mandelbrot():
    src = fixture_text("mandelbrot.dexlet")
    t0 = time.perf_counter()
    grid = ev.to_python(pipeline.run_source(src))
    dt = time.perf_counter() - t0
    flat = [v for row in grid for v in row]
    in_range = len(grid) == 20 and all(len(r) == 30 for r in grid) and all(0.0 <= v <= 100.0 for v in flat)
    count = flat.count(100.0)
    c = pipeline.compile_source(src)
    counts = {count}
    for chunks in (1, 1, 2, 3, 7):
        again = [v for row in ev.to_python(c.run(chunks=chunks)) for v in row]
        counts.add(again.count(100.0))
    ok = in_range and len(counts) == 1 and dt < 5.0
    report(10, "Mandelbrot", ok,
           f"30x20 grid, values in [0, 100]: {in_range}, points at 100: {sorted(counts)} "
           f"across runs and chunks 1,2,3,7, {dt:.2f}s < 5s")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
