from __future__ import annotations

import pytest

# criterion name -> passed (all tests tagged with that name must pass)
_criteria: dict[str, bool] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not marker.args:
        return
    if rep.when == "call" or rep.failed or rep.skipped:
        name = marker.args[0]
        ok = rep.passed and rep.when == "call"
        _criteria[name] = _criteria.get(name, True) and ok


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, ok in _criteria.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}")


@pytest.fixture(scope="session")
def fixture_run(tmp_path_factory):
    """The three-fault scenario run once through the CLI, all strategies, seed 1."""
    from meshgate.cli import main

    out = tmp_path_factory.mktemp("runs")
    assert main(["run", "three_faults", "--seed", "1", "--out", str(out)]) == 0
    return out / "three_faults-seed1"
