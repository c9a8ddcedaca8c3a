import numpy as np
import pytest

_ACCEPTANCE: list[tuple[int, str, bool, str]] = []


class AcceptanceLog:
    """Collects one pass/fail line per acceptance criterion."""

    def __init__(self, number: int, title: str):
        self.number, self.title, self.detail = number, title, ""

    def note(self, text: str) -> None:
        self.detail = text


@pytest.fixture
def acceptance(request):
    marker = request.node.get_closest_marker("criterion")
    number, title = marker.args
    log = AcceptanceLog(number, title)
    outcome = {"ok": False}
    yield log, outcome
    _ACCEPTANCE.append((number, title, outcome["ok"], log.detail))
    line = f"ACCEPTANCE {number}: {'PASS' if outcome['ok'] else 'FAIL'} - {title}"
    print(f"\n{line}" + (f" ({log.detail})" if log.detail else ""))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} - {title}"
                                    + (f" ({detail})" if detail else ""))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
