import pytest

ACCEPTANCE: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    n, title = marker.args
    status = "PASS" if rep.passed else "FAIL"
    detail = getattr(item, "acceptance_detail", "")
    ACCEPTANCE[n] = (status, f"{title}{': ' + detail if detail else ''}")
    with item.config.pluginmanager.get_plugin("capturemanager").global_and_fixture_disabled():
        print(f"\n{status} criterion {n} - {ACCEPTANCE[n][1]}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, text = ACCEPTANCE[n]
        terminalreporter.write_line(f"{status} criterion {n} - {text}")
