import pytest

_RESULTS = pytest.StashKey[dict]()

CRITERIA = {
    1: "full-model gradient check",
    2: "CRF vs brute-force enumeration",
    3: "exp bilinear pooling identity",
    4: "attention normalisation and permutation invariance",
    5: "overfit 64-utterance synthetic corpus",
    6: "ablation grid trains and reports",
    7: "metric oracle equality",
    8: "byte-identical metric logs",
    9: "sweep-lr 4 x 2 grid",
}


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def criterion(request):
    """Record ``(passed, detail)`` for an acceptance criterion number."""
    results = request.config.stash[_RESULTS]

    def record(number, passed, detail):
        results[number] = (bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[_RESULTS]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number, name in CRITERIA.items():
        if number in results:
            passed, detail = results[number]
            status = "PASS" if passed else "FAIL"
        else:
            status, detail = "FAIL", "not run or errored before recording"
        terminalreporter.write_line(f"[{status}] {number}. {name}: {detail}")
