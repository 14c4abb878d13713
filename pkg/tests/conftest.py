from pathlib import Path

import pytest

from mdiqds.config import load_config, parse_config

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture(scope="session")
def root():
    return ROOT


@pytest.fixture(scope="session")
def desk_text():
    return (ROOT / "configs" / "desk.ini").read_text()


@pytest.fixture(scope="session")
def smoke_cfg():
    """A few seconds per run: short links, loose epsilons and a fixed p_E."""
    return load_config(ROOT / "configs" / "smoke.ini")


@pytest.fixture(scope="session")
def published_cfg():
    return load_config(ROOT / "configs" / "published_run.ini")


@pytest.fixture
def parse():
    return parse_config


_CRITERIA: dict = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; the test still asserts on ``ok``."""

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        _CRITERIA[number] = (title, bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:>2}. {title}: {detail}")
