import logging

import pytest

_criteria: list[tuple[int, str, bool, str]] = []


@pytest.fixture
def criterion(request):
    """Record a numbered acceptance criterion outcome for the end-of-run summary."""

    def record(number: int, title: str, ok: bool, detail: str = ""):
        _criteria.append((number, title, bool(ok), detail))
        print(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title} {detail}".rstrip())
        assert ok, f"criterion {number} failed: {title} {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(_criteria):
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title} {detail}".rstrip())


@pytest.fixture(autouse=True)
def _reset_package_logger():
    yield
    logger = logging.getLogger("pseudoscore")
    logger.handlers[:] = []
    logger.propagate = True
    logger.setLevel(logging.NOTSET)
