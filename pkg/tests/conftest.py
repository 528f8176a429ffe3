import numpy as np
import pytest
from sympy import GF
from sympy.polys.matrices import DomainMatrix

from pmpir.pm_codes import encode_files, validate_params


def sympy_rank(a, p):
    K = GF(p)
    a = np.asarray(a)
    if a.size == 0:
        return 0
    rows = [[K(int(v)) for v in row] for row in a]
    return DomainMatrix(rows, a.shape, K).rank()


def random_files(params, count, seed=0):
    rng = np.random.default_rng(seed)
    return [rng.integers(0, params.q, params.file_size) for _ in range(count)]


@pytest.fixture
def mbr634():
    return validate_params("mbr", 6, 3, 4, 7)


@pytest.fixture
def msr634():
    return validate_params("msr", 6, 3, 4, 13)


@pytest.fixture
def store_factory():
    def make(params, count=3, seed=0):
        files = random_files(params, count, seed)
        return files, encode_files(files, params)

    return make


_CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion; the outcome is the test outcome."""
    num = request.node.get_closest_marker("criterion").args[0]
    notes: list[str] = []
    yield notes
    rep = getattr(request.node, "rep_call", None)
    ok = rep is not None and rep.passed
    _CRITERIA[num] = (ok, "; ".join(notes))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        ok, detail = _CRITERIA[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
