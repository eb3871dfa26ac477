import os
import re
from pathlib import Path

import pytest

from dexlet import eval as ev
from dexlet import pipeline

FIXTURES = Path(__file__).parent / "fixtures"

_UID = re.compile(r"(?<![\w.])([A-Za-z_][\w']*)\.(\d+)")


def strip_uids(text: str) -> str:
    """``x.12`` -> ``x`` so printed programs compare independently of fresh names."""
    return _UID.sub(r"\1", text)


def fixture_text(name: str) -> str:
    return (FIXTURES / name).read_text()


def run(src: str, chunks: int = 1):
    """Evaluate a surface program and return plain nested Python values."""
    return ev.to_python(pipeline.run_source(src, chunks=chunks))


def close(a, b, rel: float) -> bool:
    """Structural equality of nested results, floats within ``rel`` relative error."""
    if isinstance(a, (list, tuple)):
        return type(a) is type(b) and len(a) == len(b) and all(close(x, y, rel) for x, y in zip(a, b))
    if isinstance(a, float) or isinstance(b, float):
        return abs(a - b) <= rel * max(abs(a), abs(b)) or a == b
    return a == b


def seed() -> int:
    return int(os.environ.get("DEXLET_SEED", "0"))


@pytest.fixture
def rng():
    import random

    return random.Random(seed())


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
