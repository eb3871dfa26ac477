import json
import subprocess
import sys

import pytest

from dexlet.cli import main

from conftest import FIXTURES

MATMUL = str(FIXTURES / "matmul.dexlet")
SUMSQ = str(FIXTURES / "sumsq.dexlet")
IMPURE = str(FIXTURES / "impure_view.dexlet")


def result_block(text):
    return text.split("=== result ===\n", 1)[1].strip()


def test_run_matmul(capsys):
    assert main(["run", MATMUL]) == 0
    assert result_block(capsys.readouterr().out) == "[[19, 22], [43, 50]]"


def test_run_json(capsys):
    assert main(["run", MATMUL, "--output", "json"]) == 0
    assert json.loads(result_block(capsys.readouterr().out)) == [[19.0, 22.0], [43.0, 50.0]]


def test_run_with_chunks(capsys):
    assert main(["run", MATMUL, "--chunks", "3"]) == 0
    assert result_block(capsys.readouterr().out) == "[[19, 22], [43, 50]]"


def test_check_prints_type(capsys):
    assert main(["check", MATMUL]) == 0
    assert result_block(capsys.readouterr().out) == "((Fin 2) => ((Fin 2) => Float))"


def test_check_reports_effect_error(capsys):
    assert main(["check", IMPURE]) == 1
    err = capsys.readouterr().err
    assert err.startswith(IMPURE + ":")
    assert "(EffectError)" in err


def test_grad(capsys):
    assert main(["grad", SUMSQ, "f", "[1.0, 2.0]"]) == 0
    assert result_block(capsys.readouterr().out) == "[2, 4]"


def test_lin_default_tangent_is_ones(capsys):
    assert main(["lin", SUMSQ, "f", "[1.0, 2.0]", "--output", "json"]) == 0
    # value 1 + 4, tangent 2*1*1 + 2*2*1
    assert json.loads(result_block(capsys.readouterr().out)) == [5.0, 6.0]


def test_lin_explicit_tangent(capsys):
    assert main(["lin", SUMSQ, "f", "[1.0, 2.0]", "[1.0, 0.0]"]) == 0
    assert result_block(capsys.readouterr().out) == "(5, 2)"


def test_dump_fences_in_pipeline_order(capsys):
    assert main(["grad", SUMSQ, "f", "[1.0, 2.0]", "--dump-ir", "transposed,parsed,linearized"]) == 0
    out = capsys.readouterr().out
    fences = [line for line in out.splitlines() if line.startswith("=== ")]
    assert fences == ["=== parsed ===", "=== linearized ===", "=== transposed ===", "=== result ==="]


def test_simplify_prints_optimized(capsys):
    assert main(["simplify", str(FIXTURES / "fusion.dexlet")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("=== optimized ===")
    # the two loops of the fixture are fused into one
    assert out.count("for ") == 1


def test_stage_not_produced_by_command(capsys):
    assert main(["check", MATMUL, "--dump-ir", "optimized"]) == 1


@pytest.mark.parametrize("argv", [
    ["run", MATMUL, "--dump-ir", "nonsense"],
    ["run", MATMUL, "--chunks", "0"],
    ["frobnicate", MATMUL],
])
def test_bad_usage_exits_one(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 1


def test_missing_file(capsys):
    assert main(["run", str(FIXTURES / "missing.dexlet")]) == 1


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "dexlet.cli", "run", MATMUL],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "[[19, 22], [43, 50]]" in proc.stdout
