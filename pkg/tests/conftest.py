import re
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_VERDICTS = {}


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for the acceptance criterion named in the test."""
    number = int(re.search(r"criterion_(\d+)", request.node.name).group(1))

    def verdict(ok, detail):
        _VERDICTS[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        assert ok, detail

    yield verdict
    _VERDICTS.setdefault(number, f"criterion {number}: FAIL  raised before reaching a verdict")


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[n])
