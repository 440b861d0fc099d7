from __future__ import annotations

import pytest

from rgbsde.problems import binding_specs, make_spec, quadratic

# (number, title) -> list of (test nodeid, outcome, detail)
_ACCEPTANCE: dict[tuple[int, str], list[tuple[str, str, str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion test")
    config.addinivalue_line("markers", "slow: runs for more than a few seconds")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        key = (marker.args[0], marker.args[1])
        _ACCEPTANCE.setdefault(key, []).append((item.name, rep.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for (num, title), runs in sorted(_ACCEPTANCE.items()):
        for name, outcome, detail in runs:
            status = "PASS" if outcome == "passed" else "FAIL"
            line = f"AC{num:<2} {status}  {title}  [{name}]"
            if detail:
                line += f"  {detail}"
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def quad_spec():
    """x^2 terminal, band (1, 2), T = 1, 200 steps."""
    return make_spec(1.0, 2.0, 1.0, 200, quadratic())


@pytest.fixture(scope="session")
def small_binding():
    """Binding problems on a coarse 16-step base grid."""
    return binding_specs(16)
