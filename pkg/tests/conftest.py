import os
from pathlib import Path

import pytest

# reuse crossing tables across runs (the N=1000 table takes ~15 min to build)
os.environ.setdefault("BHDIMER_CACHE", str(Path(__file__).resolve().parents[1] / ".bhdimer_cache"))

_REPORT: dict[str, str] = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(key: str, ok: bool, detail: str) -> bool:
        _REPORT[key] = f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}"
        return ok

    return record


def pytest_collection_modifyitems(config, items):
    if os.environ.get("BHDIMER_FULL", "") in ("1", "true", "yes"):
        return
    skip = pytest.mark.skip(reason="N=1000 run; set BHDIMER_FULL=1")
    for item in items:
        if "full" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if not _REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_REPORT, key=lambda k: [int(x) if x.isdigit() else x for x in k.replace(".", " ").split()]):
        terminalreporter.write_line(_REPORT[key])
