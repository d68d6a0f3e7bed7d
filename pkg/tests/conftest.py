import pytest
from hypothesis import settings

settings.register_profile("rtakit", deadline=None, max_examples=60)
settings.load_profile("rtakit")

# criterion label -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def acceptance():
    def record(label: str, passed: bool, detail: str = ""):
        ACCEPTANCE[label] = (bool(passed), detail)
        print(f"{label}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed

    return record


def _order(label: str):
    head = label.split()[1] if label.startswith("criterion") else label
    num = "".join(ch for ch in head if ch.isdigit())
    return (int(num) if num else 99, label)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(ACCEPTANCE, key=_order):
        ok, detail = ACCEPTANCE[label]
        terminalreporter.write_line(f"{label:<28} {'PASS' if ok else 'FAIL'}  {detail}")
