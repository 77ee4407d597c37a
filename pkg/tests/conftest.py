from collections import defaultdict

import pytest

CRITERIA = {
    "1": "standard filter fails: violation, chatter near singular set, input range, runtime",
    "2": "uncertified baseline leaves the safe set",
    "3": "penalty filter: safe, fallback engaged, no chatter",
    "4": "transformed set: safe, passes the original singular set, no chatter",
    "5": "polytope approximation: members stay nonnegative, inner check empty",
    "6": "QP solver agrees with grid oracle, complementary slackness",
    "7": "gradient and Lie derivative finite-difference checks, closed form exact",
    "8": "relative degree and first-order HOCBF reduction",
    "9": "ZOH exactness and RK4 local error order",
    "10": "byte-identical CSV across repeated preset runs",
    "real": "real-* presets: penalty and transformed stay safe over 30 s",
}

_outcomes = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id): acceptance criterion this test decides")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _outcomes[str(marker.args[0])].append((item.name, rep.passed))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.write_sep("=", "acceptance criteria")
    for cid, label in CRITERIA.items():
        results = _outcomes.get(cid)
        if not results:
            tr.write_line(f"NOT RUN  {cid:>4}  {label}")
            continue
        failed = [name for name, ok in results if not ok]
        status = "PASS" if not failed else "FAIL"
        line = f"{status:<7}  {cid:>4}  {label}"
        if failed:
            line += f"  [failing: {', '.join(failed)}]"
        tr.write_line(line)
