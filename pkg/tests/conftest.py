import time

import pytest

from exosense import synth

SESSION_START = time.perf_counter()
CRITERIA: dict[int, tuple[str, str]] = {}


@pytest.fixture(scope="session")
def short_session():
    sc = synth.Scenario(kind="zero_torque", duration_s=12.0)
    return synth.generate_session(synth.make_profile(0, 7), sc, 7)


@pytest.fixture(scope="session")
def perturb_session():
    return synth.generate_session(synth.make_profile(1, 7), synth.SCENARIO_PRESETS["phase3"], 8)


@pytest.hookimpl(trylast=True)
def pytest_collection_modifyitems(config, items):
    # the suite-runtime criterion has to observe every other test
    last = [it for it in items if it.get_closest_marker("suite_runtime")]
    rest = [it for it in items if not it.get_closest_marker("suite_runtime")]
    items[:] = rest + last
    config._benchmarks_selected = any(it.get_closest_marker("benchmark") for it in items)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n = mark.args[0]
    detail = dict(item.user_properties).get("detail", "")
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        CRITERIA[n] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        status, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")
    terminalreporter.write_line(f"suite wall time: {time.perf_counter() - SESSION_START:.1f} s")
