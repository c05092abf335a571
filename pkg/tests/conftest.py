import pytest

from perclocal.cayley import free_abelian, make_oracle


@pytest.fixture(scope="session")
def z1():
    return make_oracle(free_abelian(1))


@pytest.fixture(scope="session")
def z2():
    return make_oracle(free_abelian(2))


@pytest.fixture(scope="session")
def z3():
    return make_oracle(free_abelian(3))


# -- acceptance summary: one PASS/FAIL line per criterion ---------------------------

_CRITERIA: dict = {}
_DETAILS: dict = {}


def _criterion_of(nodeid: str):
    name = nodeid.split("::")[-1]
    if "test_acceptance" in nodeid and name.startswith("test_c") and name[6:8].isdigit():
        return int(name[6:8])
    return None


@pytest.fixture
def detail(request):
    """Attach a one-line measurement summary to the current criterion."""
    c = _criterion_of(request.node.nodeid)

    def note(text):
        _DETAILS.setdefault(c, []).append(text)
        print(f"criterion {c}: {text}")
    return note


def pytest_runtest_logreport(report):
    c = _criterion_of(report.nodeid)
    if c is None or (report.when != "call" and report.passed):
        return
    _CRITERIA[c] = _CRITERIA.get(c, True) and report.passed


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for c in sorted(_CRITERIA):
        status = "PASS" if _CRITERIA[c] else "FAIL"
        terminalreporter.write_line(f"criterion {c:2d}: {status}  {'; '.join(_DETAILS.get(c, []))}")
